#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "latentscout/archive.hpp"
#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/image.hpp"
#include "latentscout/nn.hpp"
#include "latentscout/vae.hpp"

namespace latentscout::advgen {

using json = nlohmann::json;
using data::Rgb;

struct AttackConfig {
  double crop_factor = 0.5;
  int pad_pixels = -1;       // negative: image size / 4
  std::optional<Rgb> fill;   // empty: replicate edge pixels
  int output_size = 0;       // 0: same as input

  void validate() const {
    if (!(crop_factor > 0.0 && crop_factor <= 1.0)) throw ConfigError("crop_factor must lie in (0,1]");
    if (output_size < 0) throw ConfigError("output_size must be nonnegative");
    if (fill)
      for (float v : *fill)
        if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("fill values must lie in [0,1]");
  }
  int pad_for(int size) const { return pad_pixels < 0 ? size / 4 : pad_pixels; }
  int out_for(int size) const { return output_size > 0 ? output_size : size; }
};

inline json to_json(const AttackConfig& c) {
  json j = {{"crop_factor", c.crop_factor}, {"pad_pixels", c.pad_pixels}, {"output_size", c.output_size}};
  j["fill"] = c.fill ? json(*c.fill) : json("edge-replicate");
  return j;
}

inline AttackConfig attack_config_from_json(const json& j) {
  AttackConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "crop_factor") c.crop_factor = v.get<double>();
    else if (key == "pad_pixels") c.pad_pixels = v.get<int>();
    else if (key == "output_size") c.output_size = v.get<int>();
    else if (key == "fill") {
      if (v.is_string()) {
        if (v.get<std::string>() != "edge-replicate") throw ConfigError("fill must be an RGB triple or \"edge-replicate\"");
        c.fill.reset();
      } else {
        const auto rgb = v.get<std::vector<float>>();
        if (rgb.size() != 3) throw ConfigError("fill must have 3 components");
        c.fill = Rgb{rgb[0], rgb[1], rgb[2]};
      }
    } else {
      throw ConfigError("unknown attack key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline std::string config_hash(const AttackConfig& c) { return sha256_hex(to_json(c).dump()); }

/// Central crop of crop_factor of each side, resized back to output size.
inline Image crop_zoom_attack(const Image& x, const AttackConfig& cfg) {
  cfg.validate();
  const int ch = static_cast<int>(std::lround(cfg.crop_factor * x.height));
  const int cw = static_cast<int>(std::lround(cfg.crop_factor * x.width));
  if (ch < 8 || cw < 8)
    throw ContractError("crop_zoom_attack: crop of " + std::to_string(cw) + "x" + std::to_string(ch) +
                        " pixels is below the 8 pixel minimum");
  const int oy = (x.height - ch) / 2, ox = (x.width - cw) / 2;
  Image crop(ch, cw, x.channels);
  for (int y = 0; y < ch; ++y)
    for (int xx = 0; xx < cw; ++xx)
      for (int c = 0; c < x.channels; ++c) crop.at(y, xx, c) = x.at(oy + y, ox + xx, c);
  return resize_bilinear(crop, cfg.out_for(x.height), cfg.out_for(x.width));
}

/// Pads all sides by pad pixels (edge replicate or a fixed fill), then
/// resizes to output size.
inline Image pad_image(const Image& x, int pad, const std::optional<Rgb>& fill) {
  if (pad < 0) throw ContractError("pad must be nonnegative");
  Image p(x.height + 2 * pad, x.width + 2 * pad, x.channels);
  for (int y = 0; y < p.height; ++y)
    for (int xx = 0; xx < p.width; ++xx) {
      const int sy = y - pad, sx = xx - pad;
      const bool inside = sy >= 0 && sy < x.height && sx >= 0 && sx < x.width;
      for (int c = 0; c < x.channels; ++c) {
        if (inside) p.at(y, xx, c) = x.at(sy, sx, c);
        else if (fill) p.at(y, xx, c) = (*fill)[std::min(c, 2)];
        else p.at(y, xx, c) = x.at(std::clamp(sy, 0, x.height - 1), std::clamp(sx, 0, x.width - 1), c);
      }
    }
  return p;
}

inline Image pad_zoom_attack(const Image& x, const AttackConfig& cfg) {
  cfg.validate();
  return resize_bilinear(pad_image(x, cfg.pad_for(x.height), cfg.fill), cfg.out_for(x.height), cfg.out_for(x.width));
}

enum class AttackKind { Crop, Pad };

inline std::string to_string(AttackKind k) { return k == AttackKind::Crop ? "crop" : "pad"; }

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "crop") return AttackKind::Crop;
  if (s == "pad") return AttackKind::Pad;
  throw ConfigError("unknown attack '" + s + "' (expected crop or pad)");
}

/// Transforms every image; labels, ids and class names carry over.
inline data::LabeledImageSet attack_dataset(const data::LabeledImageSet& ds, AttackKind kind, const AttackConfig& cfg) {
  data::LabeledImageSet out;
  out.class_names = ds.class_names;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Image img = ds.image(i);
    Image adv = kind == AttackKind::Crop ? crop_zoom_attack(img, cfg) : pad_zoom_attack(img, cfg);
    for (auto& v : adv.pixels) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back(adv, ds.labels[i], ds.ids[i]);
  }
  out.provenance = {{"attack", to_string(kind)}, {"config", to_json(cfg)}, {"source", ds.provenance}};
  return out;
}

// ---------------------------------------------------------------------------
// Reference classifier: 5 x [conv3x3 -> ReLU -> maxpool2] -> dense softmax

struct CnnConfig {
  std::vector<int> channels{32, 64, 128, 256, 512};
  double learning_rate = 0.001;
  int batch_size = 32;
  int patience = 10;
  int max_epochs = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (channels.size() != 5) throw ConfigError("reference CNN needs 5 conv widths");
    for (int c : channels)
      if (c < 1) throw ConfigError("conv widths must be positive");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  }
};

inline json to_json(const CnnConfig& c) {
  return {{"channels", c.channels},     {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"patience", c.patience},     {"max_epochs", c.max_epochs},       {"seed", c.seed}};
}

inline CnnConfig cnn_config_from_json(const json& j) {
  CnnConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "channels") c.channels = v.get<std::vector<int>>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "patience") c.patience = v.get<int>();
    else if (key == "max_epochs") c.max_epochs = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw ConfigError("unknown cnn key '" + key + "'");
  }
  c.validate();
  return c;
}

struct CnnEpoch {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

inline constexpr int kClassifierSchemaVersion = 1;

class ReferenceCnn {
 public:
  ReferenceCnn(const CnnConfig& cfg, int image_size, int channels, int n_classes)
      : cfg_(cfg), size_(image_size), channels_(channels), classes_(n_classes) {
    cfg_.validate();
    if (image_size < 32) throw ContractError("reference CNN needs images of at least 32x32");
    std::mt19937_64 rng(cfg_.seed);
    int in = channels, s = image_size;
    for (int c : cfg_.channels) {
      net_.template add<nn::Conv2d<float>>(in, c, 3, 1, 1, rng);
      net_.template add<nn::ReLU<float>>();
      net_.template add<nn::MaxPool2d<float>>();
      in = c;
      s /= 2;
    }
    features_ = in * s * s;
    net_.template add<nn::Reshape<float>>(std::vector<int>{features_});
    net_.template add<nn::Linear<float>>(features_, n_classes, rng);
  }

  int image_size() const { return size_; }
  int channels() const { return channels_; }
  int n_classes() const { return classes_; }
  const CnnConfig& config() const { return cfg_; }
  const std::vector<CnnEpoch>& history() const { return history_; }

  /// Logits (B, C) in inference mode.
  nn::Tensor<float> logits(const nn::Tensor<float>& x) const { return net_.infer(x); }

  /// Predicted labels (1..C); ties go to the lower class.
  std::vector<int> predict(const data::LabeledImageSet& ds) const {
    check(ds);
    std::vector<int> out;
    for (std::size_t s = 0; s < ds.size(); s += 128) {
      std::vector<std::size_t> rows(std::min<std::size_t>(128, ds.size() - s));
      std::iota(rows.begin(), rows.end(), s);
      const auto lg = logits(vae::batch_tensor<float>(ds, rows));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        int best = 0;
        for (int c = 1; c < classes_; ++c)
          if (lg.data[i * classes_ + c] > lg.data[i * classes_ + best]) best = c;
        out.push_back(best + 1);
      }
    }
    return out;
  }

  Archive to_archive() const {
    Archive a;
    json hist = json::array();
    for (const auto& h : history_)
      hist.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss},
                      {"val_accuracy", h.val_accuracy}});
    a.manifest = {{"kind", "classifier"},        {"schema_version", kClassifierSchemaVersion},
                  {"config", to_json(cfg_)},      {"image_size", size_},
                  {"channels", channels_},        {"n_classes", classes_},
                  {"history", hist}};
    ReferenceCnn copy = *this;
    for (auto& [name, t] : copy.state())
      a.put<float>(name, std::vector<std::uint64_t>(t->shape.begin(), t->shape.end()),
                   std::vector<float>(t->data.begin(), t->data.end()));
    return a;
  }

  static ReferenceCnn from_archive(const Archive& a) {
    const auto& m = a.manifest;
    ReferenceCnn cnn(cnn_config_from_json(m.at("config")), m.at("image_size"), m.at("channels"), m.at("n_classes"));
    for (auto& [name, t] : cnn.state()) {
      const auto v = a.get<float>(name);
      if (v.size() != t->size()) throw ParseError("classifier tensor '" + name + "' has wrong size", 0);
      t->data.assign(v.begin(), v.end());
    }
    for (const auto& h : m.value("history", json::array()))
      cnn.history_.push_back({h.at("epoch"), h.at("train_loss"), h.at("val_loss"), h.at("val_accuracy")});
    return cnn;
  }

  void save(const fs::path& p) const { to_archive().save(p); }
  static ReferenceCnn load(const fs::path& p) {
    return from_archive(Archive::load(p, "classifier", kClassifierSchemaVersion));
  }

 private:
  friend ReferenceCnn train_reference_cnn(const data::LabeledImageSet&, const data::LabeledImageSet&, const CnnConfig&,
                                          const std::function<void(const CnnEpoch&)>&);

  void check(const data::LabeledImageSet& ds) const {
    if (ds.height != size_ || ds.width != size_ || ds.channels != channels_)
      throw ContractError("classifier expects " + std::to_string(size_) + "x" + std::to_string(size_) + "x" +
                          std::to_string(channels_) + " images");
  }

  std::vector<nn::Param<float>> params() {
    std::vector<nn::Param<float>> out;
    net_.collect_params(out, "net.");
    return out;
  }
  std::vector<std::pair<std::string, nn::Tensor<float>*>> state() {
    std::vector<std::pair<std::string, nn::Tensor<float>*>> out;
    for (auto& p : params()) out.emplace_back(p.name, p.value);
    return out;
  }

  CnnConfig cfg_;
  int size_, channels_, classes_;
  int features_ = 0;
  nn::Sequential<float> net_;
  std::vector<CnnEpoch> history_;
};

namespace detail {

// Mean softmax cross-entropy; writes d(loss)/d(logits) when grad is given.
inline double softmax_xent(const nn::Tensor<float>& lg, const std::vector<int>& labels, int C,
                           nn::Tensor<float>* grad) {
  const int b = lg.dim(0);
  double loss = 0;
  if (grad) *grad = nn::Tensor<float>(lg.shape);
  for (int i = 0; i < b; ++i) {
    const float* r = lg.data.data() + static_cast<std::size_t>(i) * C;
    const double mx = *std::max_element(r, r + C);
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(r[c] - mx);
    const double lse = mx + std::log(z);
    loss += lse - r[labels[i] - 1];
    if (grad)
      for (int c = 0; c < C; ++c)
        grad->data[static_cast<std::size_t>(i) * C + c] =
            static_cast<float>((std::exp(r[c] - lse) - (c == labels[i] - 1 ? 1.0 : 0.0)) / b);
  }
  return loss / b;
}

}  // namespace detail

/// Cross-entropy with Adam and early stopping on validation loss; returns
/// the best-validation weights.
inline ReferenceCnn train_reference_cnn(const data::LabeledImageSet& train, const data::LabeledImageSet& val,
                                        const CnnConfig& cfg,
                                        const std::function<void(const CnnEpoch&)>& on_epoch = {}) {
  if (train.size() == 0 || val.size() == 0) throw ContractError("train_reference_cnn: empty split");
  if (train.height != train.width) throw ContractError("train_reference_cnn: images must be square");
  const int C = std::max(train.n_classes(), *std::max_element(train.labels.begin(), train.labels.end()));
  ReferenceCnn cnn(cfg, train.height, train.channels, C);
  cnn.check(val);
  auto params = cnn.params();
  nn::Adam<float> adam(cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed ^ 0xC2B2AE3D27D4EB4FULL);
  std::vector<nn::AlignedVec<float>> best;
  double best_val = std::numeric_limits<double>::infinity();
  int since = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    CnnEpoch rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                                    order.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(order.size(), s + cfg.batch_size)));
      std::vector<int> y;
      for (auto r : rows) y.push_back(train.labels[r]);
      nn::zero_grads(params);
      const auto lg = cnn.net_.forward(vae::batch_tensor<float>(train, rows));
      nn::Tensor<float> g;
      const double l = detail::softmax_xent(lg, y, C, &g);
      if (!std::isfinite(l)) throw TrainingError("classifier loss is not finite", epoch);
      cnn.net_.backward(g);
      adam.step(params);
      rec.train_loss += l * static_cast<double>(rows.size());
    }
    rec.train_loss /= static_cast<double>(train.size());
    double vl = 0;
    std::size_t hit = 0;
    for (std::size_t s = 0; s < val.size(); s += 128) {
      std::vector<std::size_t> rows(std::min<std::size_t>(128, val.size() - s));
      std::iota(rows.begin(), rows.end(), s);
      std::vector<int> y;
      for (auto r : rows) y.push_back(val.labels[r]);
      const auto lg = cnn.logits(vae::batch_tensor<float>(val, rows));
      vl += detail::softmax_xent(lg, y, C, nullptr) * static_cast<double>(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        int b = 0;
        for (int c = 1; c < C; ++c)
          if (lg.data[i * C + c] > lg.data[i * C + b]) b = c;
        hit += b + 1 == y[i] ? 1 : 0;
      }
    }
    rec.val_loss = vl / static_cast<double>(val.size());
    rec.val_accuracy = static_cast<double>(hit) / static_cast<double>(val.size());
    if (!std::isfinite(rec.val_loss)) throw TrainingError("classifier validation loss is not finite", epoch);
    cnn.history_.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      since = 0;
      best.clear();
      for (auto& [n, t] : cnn.state()) best.push_back(t->data);
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  auto st = cnn.state();
  for (std::size_t i = 0; i < st.size(); ++i) st[i].second->data = best[i];
  return cnn;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ClassResult {
  int label = 0;
  std::string name;
  std::size_t n = 0;
  double clean_accuracy = 0;
  double adversarial_accuracy = 0;
  double delta = 0;  // adversarial - clean
};

struct AttackReport {
  std::vector<ClassResult> classes;
  double clean_accuracy = 0;
  double adversarial_accuracy = 0;
  std::string config_hash;
  json config = json::object();
};

inline json to_json(const AttackReport& r) {
  json cls = json::array();
  for (const auto& c : r.classes)
    cls.push_back({{"label", c.label},
                   {"name", c.name},
                   {"n", c.n},
                   {"clean_accuracy", c.clean_accuracy},
                   {"adversarial_accuracy", c.adversarial_accuracy},
                   {"delta", c.delta}});
  return {{"classes", cls},
          {"clean_accuracy", r.clean_accuracy},
          {"adversarial_accuracy", r.adversarial_accuracy},
          {"config_hash", r.config_hash},
          {"config", r.config}};
}

/// Per-class accuracies from predictions; classes absent from `labels` are
/// not reported.
inline AttackReport evaluate_predictions(const std::vector<int>& labels, const std::vector<int>& clean_pred,
                                         const std::vector<int>& adv_pred,
                                         const std::vector<std::string>& class_names = {}) {
  if (clean_pred.size() != labels.size() || adv_pred.size() != labels.size())
    throw ContractError("evaluate_attack: prediction count differs from label count");
  std::map<int, std::array<std::size_t, 3>> tally;  // n, clean hits, adv hits
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& t = tally[labels[i]];
    ++t[0];
    t[1] += clean_pred[i] == labels[i] ? 1 : 0;
    t[2] += adv_pred[i] == labels[i] ? 1 : 0;
  }
  AttackReport r;
  std::size_t ch = 0, ah = 0;
  for (const auto& [label, t] : tally) {
    ClassResult c;
    c.label = label;
    if (label >= 1 && label <= static_cast<int>(class_names.size())) c.name = class_names[label - 1];
    c.n = t[0];
    c.clean_accuracy = static_cast<double>(t[1]) / static_cast<double>(t[0]);
    c.adversarial_accuracy = static_cast<double>(t[2]) / static_cast<double>(t[0]);
    c.delta = c.adversarial_accuracy - c.clean_accuracy;
    ch += t[1];
    ah += t[2];
    r.classes.push_back(c);
  }
  if (!labels.empty()) {
    r.clean_accuracy = static_cast<double>(ch) / static_cast<double>(labels.size());
    r.adversarial_accuracy = static_cast<double>(ah) / static_cast<double>(labels.size());
  }
  return r;
}

inline AttackReport evaluate_attack(const ReferenceCnn& clf, const data::LabeledImageSet& clean,
                                    const data::LabeledImageSet& attacked,
                                    const std::optional<AttackConfig>& cfg = std::nullopt) {
  if (clean.labels != attacked.labels)
    throw ContractError("evaluate_attack: clean and attacked sets have different labels");
  auto r = evaluate_predictions(clean.labels, clf.predict(clean), clf.predict(attacked), clean.class_names);
  if (cfg) {
    r.config = to_json(*cfg);
    r.config_hash = config_hash(*cfg);
  }
  return r;
}

}  // namespace latentscout::advgen
