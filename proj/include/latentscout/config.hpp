#pragma once

// Pipeline configuration: TOML (primary) or JSON, validated strictly;
// unknown keys are errors. One top-level seed feeds every random stream.

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latentscout/advgen.hpp"
#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/probe.hpp"
#include "latentscout/vae.hpp"
#include "latentscout/visual.hpp"

namespace latentscout::config {

using json = nlohmann::json;

struct DatasetSection {
  std::string kind = "colored";  // colored | zoom | folder | idx
  data::SyntheticConfig synth;
  std::string path;        // folder
  std::string idx_images;  // idx
  std::string idx_labels;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct AnalysisSection {
  int k = 3;
  double threshold_factor = 3.0;
};

struct EvidenceSection {
  visual::EvidenceOptions options;
  std::string dims = "top";  // top | all | comma-separated list
};

struct AttackSection {
  advgen::AttackKind kind = advgen::AttackKind::Crop;
  advgen::AttackConfig attack;
  advgen::CnnConfig cnn;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  vae::TrainConfig train;
  AnalysisSection analysis;
  probe::ProbeConfig probe;
  EvidenceSection evidence;
  AttackSection attack;

  PipelineConfig() {
    dataset.synth.n_samples = 10000;
    dataset.synth.image_size = 32;
    train.latent_dim = 16;
    train.beta = 2.5;
    train.image_size = 32;
  }

  /// Pushes the top-level seed into every component.
  void propagate_seed() {
    dataset.synth.seed = seed;
    train.seed = seed;
    probe.seed = seed + 1;
    attack.cnn.seed = seed + 2;
  }

  void validate() const {
    const auto& k = dataset.kind;
    if (k != "colored" && k != "zoom" && k != "folder" && k != "idx")
      throw ConfigError("dataset.kind must be colored, zoom, folder or idx (got '" + k + "')");
    if (k == "folder" && dataset.path.empty()) throw ConfigError("dataset.path is required for folder datasets");
    if (k == "idx" && (dataset.idx_images.empty() || dataset.idx_labels.empty()))
      throw ConfigError("dataset.idx_images and dataset.idx_labels are required for idx datasets");
    if (k == "colored" && static_cast<int>(dataset.synth.palette.size()) != dataset.synth.n_classes)
      throw ConfigError("dataset.palette must list one color per class");
    if (k == "zoom" && static_cast<int>(dataset.synth.zoom_levels.size()) != dataset.synth.n_classes)
      throw ConfigError("dataset.zoom_levels must list one level per class");
    if (!(dataset.synth.p_corr >= 0 && dataset.synth.p_corr <= 1)) throw ConfigError("dataset.p_corr must lie in [0,1]");
    if (std::abs(dataset.split[0] + dataset.split[1] + dataset.split[2] - 1.0) > 1e-9)
      throw ConfigError("dataset.split must sum to 1");
    if (dataset.split[0] <= 0 || dataset.split[1] <= 0)
      throw ConfigError("dataset.split needs nonzero train and val fractions");
    vae::TrainConfig t = train;
    t.image_size = dataset.synth.image_size;
    t.validate();
    if (analysis.k < 1 || analysis.k > train.latent_dim)
      throw ConfigError("analysis.k must lie in 1..latent_dim");
    if (!(analysis.threshold_factor > 0)) throw ConfigError("analysis.threshold_factor must be positive");
    probe.validate();
    if (evidence.options.steps < 2) throw ConfigError("evidence.steps must be at least 2");
    if (evidence.options.extremes_l < 1) throw ConfigError("evidence.extremes_l must be at least 1");
    if (evidence.options.kde_grid_points < 2) throw ConfigError("evidence.kde_grid_points must be at least 2");
    attack.attack.validate();
    attack.cnn.validate();
  }
};

inline std::vector<data::Rgb> palette_for(int n) {
  auto p = data::default_palette();
  if (n > static_cast<int>(p.size()))
    throw ConfigError("default palette has " + std::to_string(p.size()) + " colors; give dataset.palette explicitly");
  p.resize(n);
  return p;
}

/// Evenly spaced levels from 0.9 down to 0.3.
inline std::vector<double> zoom_levels_for(int n) {
  std::vector<double> z;
  for (int c = 0; c < n; ++c) z.push_back(n == 1 ? 0.9 : 0.9 - 0.6 * c / (n - 1));
  return z;
}

inline json to_json(const PipelineConfig& c) {
  json ds = {{"kind", c.dataset.kind},
             {"n_samples", c.dataset.synth.n_samples},
             {"image_size", c.dataset.synth.image_size},
             {"n_classes", c.dataset.synth.n_classes},
             {"p_corr", c.dataset.synth.p_corr},
             {"palette", c.dataset.synth.palette},
             {"zoom_levels", c.dataset.synth.zoom_levels},
             {"shapes", c.dataset.synth.shapes},
             {"position_jitter", c.dataset.synth.position_jitter},
             {"min_scale", c.dataset.synth.min_scale},
             {"max_scale", c.dataset.synth.max_scale},
             {"path", c.dataset.path},
             {"idx_images", c.dataset.idx_images},
             {"idx_labels", c.dataset.idx_labels},
             {"split", c.dataset.split}};
  json tr = vae::to_json(c.train);
  tr.erase("seed");
  tr.erase("image_size");
  const auto& e = c.evidence.options;
  const auto& cnn = c.attack.cnn;
  json atk = advgen::to_json(c.attack.attack);
  atk["kind"] = advgen::to_string(c.attack.kind);
  atk["cnn_channels"] = cnn.channels;
  atk["cnn_learning_rate"] = cnn.learning_rate;
  atk["cnn_batch_size"] = cnn.batch_size;
  atk["cnn_patience"] = cnn.patience;
  atk["cnn_max_epochs"] = cnn.max_epochs;
  return {{"seed", c.seed},
          {"dataset", ds},
          {"train", tr},
          {"analysis", {{"k", c.analysis.k}, {"threshold_factor", c.analysis.threshold_factor}}},
          {"probe",
           {{"learning_rate", c.probe.learning_rate},
            {"batch_size", c.probe.batch_size},
            {"patience", c.probe.patience},
            {"max_epochs", c.probe.max_epochs}}},
          {"evidence",
           {{"steps", e.steps},
            {"mode", visual::to_string(e.mode)},
            {"extremes_l", e.extremes_l},
            {"extremes_cols", e.extremes_cols},
            {"kde_grid_points", e.kde_grid_points},
            {"dims", c.evidence.dims}}},
          {"attack", atk}};
}

namespace detail {

template <class T>
T get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

inline data::Rgb rgb(const json& v, const std::string& key) {
  const auto x = get<std::vector<float>>(v, key);
  if (x.size() != 3) throw ConfigError("config key '" + key + "' needs 3 components");
  return {x[0], x[1], x[2]};
}

inline void expect_object(const json& v, const std::string& key) {
  if (!v.is_object()) throw ConfigError("config key '" + key + "' must be a table");
}

}  // namespace detail

/// Applies the keys of `j` over `base`. Every key must be known.
inline PipelineConfig apply_json(PipelineConfig c, const json& j) {
  using detail::get;
  detail::expect_object(j, "<root>");
  bool palette_given = false, zoom_given = false;
  for (const auto& [section, body] : j.items()) {
    if (section == "seed") {
      c.seed = get<std::uint64_t>(body, "seed");
      continue;
    }
    detail::expect_object(body, section);
    for (const auto& [key, v] : body.items()) {
      const std::string full = section + "." + key;
      bool known = true;
      if (section == "dataset") {
        auto& s = c.dataset.synth;
        if (key == "kind") c.dataset.kind = get<std::string>(v, full);
        else if (key == "n_samples") s.n_samples = get<int>(v, full);
        else if (key == "image_size") s.image_size = get<int>(v, full);
        else if (key == "n_classes") s.n_classes = get<int>(v, full);
        else if (key == "p_corr") s.p_corr = get<double>(v, full);
        else if (key == "palette") {
          s.palette.clear();
          for (const auto& e : v) s.palette.push_back(detail::rgb(e, full));
          palette_given = true;
        } else if (key == "zoom_levels") s.zoom_levels = get<std::vector<double>>(v, full), zoom_given = true;
        else if (key == "shapes") s.shapes = get<std::vector<std::string>>(v, full);
        else if (key == "position_jitter") s.position_jitter = get<double>(v, full);
        else if (key == "min_scale") s.min_scale = get<double>(v, full);
        else if (key == "max_scale") s.max_scale = get<double>(v, full);
        else if (key == "path") c.dataset.path = get<std::string>(v, full);
        else if (key == "idx_images") c.dataset.idx_images = get<std::string>(v, full);
        else if (key == "idx_labels") c.dataset.idx_labels = get<std::string>(v, full);
        else if (key == "split") {
          const auto r = get<std::vector<double>>(v, full);
          if (r.size() != 3) throw ConfigError("dataset.split needs 3 ratios");
          c.dataset.split = {r[0], r[1], r[2]};
        } else known = false;
      } else if (section == "train") {
        auto& t = c.train;
        if (key == "latent_dim") t.latent_dim = get<int>(v, full);
        else if (key == "beta") t.beta = get<double>(v, full);
        else if (key == "learning_rate") t.learning_rate = get<double>(v, full);
        else if (key == "batch_size") t.batch_size = get<int>(v, full);
        else if (key == "patience") t.patience = get<int>(v, full);
        else if (key == "max_epochs") t.max_epochs = get<int>(v, full);
        else if (key == "encoder_kind") {
          const auto s = get<std::string>(v, full);
          if (s == "small_conv") t.encoder_kind = vae::EncoderKind::SmallConv;
          else if (s == "resnet_backbone") t.encoder_kind = vae::EncoderKind::ResnetBackbone;
          else throw ConfigError("train.encoder_kind must be small_conv or resnet_backbone");
        } else if (key == "encoder_channels") t.encoder_channels = get<std::vector<int>>(v, full);
        else if (key == "decoder_channels") t.decoder_channels = get<std::vector<int>>(v, full);
        else if (key == "reconstruction") {
          const auto s = get<std::string>(v, full);
          if (s == "bce") t.reconstruction = vae::Reconstruction::Bernoulli;
          else if (s == "sse") t.reconstruction = vae::Reconstruction::SquaredError;
          else throw ConfigError("train.reconstruction must be bce or sse");
        } else known = false;
      } else if (section == "analysis") {
        if (key == "k") c.analysis.k = get<int>(v, full);
        else if (key == "threshold_factor") c.analysis.threshold_factor = get<double>(v, full);
        else known = false;
      } else if (section == "probe") {
        if (key == "learning_rate") c.probe.learning_rate = get<double>(v, full);
        else if (key == "batch_size") c.probe.batch_size = get<int>(v, full);
        else if (key == "patience") c.probe.patience = get<int>(v, full);
        else if (key == "max_epochs") c.probe.max_epochs = get<int>(v, full);
        else known = false;
      } else if (section == "evidence") {
        auto& e = c.evidence.options;
        if (key == "steps") e.steps = get<int>(v, full);
        else if (key == "mode") {
          try {
            e.mode = visual::traversal_mode_from_string(get<std::string>(v, full));
          } catch (const ContractError& err) {
            throw ConfigError(err.what());
          }
        } else if (key == "extremes_l") e.extremes_l = get<int>(v, full);
        else if (key == "extremes_cols") e.extremes_cols = get<int>(v, full);
        else if (key == "kde_grid_points") e.kde_grid_points = get<int>(v, full);
        else if (key == "dims") c.evidence.dims = get<std::string>(v, full);
        else known = false;
      } else if (section == "attack") {
        auto& a = c.attack;
        if (key == "kind") a.kind = advgen::attack_kind_from_string(get<std::string>(v, full));
        else if (key == "crop_factor") a.attack.crop_factor = get<double>(v, full);
        else if (key == "pad_pixels") a.attack.pad_pixels = get<int>(v, full);
        else if (key == "output_size") a.attack.output_size = get<int>(v, full);
        else if (key == "fill") {
          if (v.is_string()) {
            if (v.get<std::string>() != "edge-replicate")
              throw ConfigError("attack.fill must be an RGB triple or \"edge-replicate\"");
            a.attack.fill.reset();
          } else {
            a.attack.fill = detail::rgb(v, full);
          }
        } else if (key == "cnn_channels") a.cnn.channels = get<std::vector<int>>(v, full);
        else if (key == "cnn_learning_rate") a.cnn.learning_rate = get<double>(v, full);
        else if (key == "cnn_batch_size") a.cnn.batch_size = get<int>(v, full);
        else if (key == "cnn_patience") a.cnn.patience = get<int>(v, full);
        else if (key == "cnn_max_epochs") a.cnn.max_epochs = get<int>(v, full);
        else known = false;
      } else {
        throw ConfigError("unknown config section '" + section + "'");
      }
      if (!known) throw ConfigError("unknown config key '" + full + "'");
    }
  }
  // Variant defaults follow n_classes unless given explicitly.
  auto& s = c.dataset.synth;
  if (!palette_given && c.dataset.kind == "colored" && static_cast<int>(s.palette.size()) != s.n_classes)
    s.palette = palette_for(s.n_classes);
  if (!zoom_given && c.dataset.kind == "zoom" && static_cast<int>(s.zoom_levels.size()) != s.n_classes)
    s.zoom_levels = zoom_levels_for(s.n_classes);
  c.train.image_size = s.image_size;
  c.propagate_seed();
  return c;
}

inline PipelineConfig default_config() {
  PipelineConfig c;
  c.dataset.synth.palette = palette_for(c.dataset.synth.n_classes);
  c.propagate_seed();
  return c;
}

inline PipelineConfig from_json(const json& j) {
  auto c = apply_json(default_config(), j);
  c.validate();
  return c;
}

namespace detail {

inline json toml_to_json(const toml::node& n) {
  if (auto t = n.as_table()) {
    json o = json::object();
    for (auto&& [k, v] : *t) o[std::string(k.str())] = toml_to_json(v);
    return o;
  }
  if (auto a = n.as_array()) {
    json arr = json::array();
    for (auto&& v : *a) arr.push_back(toml_to_json(v));
    return arr;
  }
  if (auto v = n.as_integer()) return v->get();
  if (auto v = n.as_floating_point()) return v->get();
  if (auto v = n.as_boolean()) return v->get();
  if (auto v = n.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type (dates and times are not accepted)");
}

}  // namespace detail

/// Parses TOML text into the equivalent JSON tree.
inline json parse_toml(const std::string& text, const std::string& source = "config") {
  try {
    const toml::table t = toml::parse(text, source);
    return detail::toml_to_json(t);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

/// `.json` files (or text starting with '{') are JSON, everything else TOML.
inline json read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return parse_toml(text, path.string());
}

inline PipelineConfig load_config(const fs::path& path) { return from_json(read_config_file(path)); }

}  // namespace latentscout::config
