#pragma once

// Beta-VAE: convolutional encoder producing (mu, log-variance), transposed
// convolutional decoder with a sigmoid output, the beta-weighted ELBO loss,
// Adam training with early stopping, checkpoints, and the per-dimension
// variance report used to tune beta and the latent size.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "latentscout/archive.hpp"
#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/image.hpp"
#include "latentscout/latent_table.hpp"
#include "latentscout/nn.hpp"

namespace latentscout::vae {

enum class EncoderKind { SmallConv, ResnetBackbone };
enum class Reconstruction { Bernoulli, SquaredError };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::SmallConv ? "small_conv" : "resnet_backbone"; }
inline std::string to_string(Reconstruction r) { return r == Reconstruction::Bernoulli ? "bce" : "sse"; }

struct TrainConfig {
  int latent_dim = 10;
  double beta = 1.0;
  double learning_rate = 0.001;
  int batch_size = 32;
  int patience = 10;
  int max_epochs = 100;
  int image_size = 128;
  std::uint64_t seed = 0;
  EncoderKind encoder_kind = EncoderKind::SmallConv;
  std::vector<int> encoder_channels{32, 64, 128, 256, 512};
  std::vector<int> decoder_channels{512, 256, 128, 64, 32};
  Reconstruction reconstruction = Reconstruction::Bernoulli;

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be at least 1");
    if (!(beta > 0)) throw ConfigError("beta must be positive");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch normalization)");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (encoder_kind == EncoderKind::ResnetBackbone)
      throw ConfigError("encoder_kind resnet_backbone needs externally supplied pretrained weights; "
                        "only small_conv is available in this build");
    if (encoder_channels.size() != 5 || decoder_channels.size() != 5)
      throw ConfigError("encoder_channels and decoder_channels must list 5 widths each");
    for (int c : encoder_channels)
      if (c < 1) throw ConfigError("channel widths must be positive");
    for (int c : decoder_channels)
      if (c < 1) throw ConfigError("channel widths must be positive");
    if (image_size < 32 || image_size % 32 != 0)
      throw ConfigError("image_size must be a positive multiple of 32 (five stride-2 stages)");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"beta", c.beta},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"image_size", c.image_size},
          {"seed", c.seed},
          {"encoder_kind", to_string(c.encoder_kind)},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"reconstruction", to_string(c.reconstruction)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.latent_dim = j.at("latent_dim");
  c.beta = j.at("beta");
  c.learning_rate = j.at("learning_rate");
  c.batch_size = j.at("batch_size");
  c.patience = j.at("patience");
  c.max_epochs = j.at("max_epochs");
  c.image_size = j.at("image_size");
  c.seed = j.at("seed");
  const std::string kind = j.at("encoder_kind");
  if (kind == "small_conv") c.encoder_kind = EncoderKind::SmallConv;
  else if (kind == "resnet_backbone") c.encoder_kind = EncoderKind::ResnetBackbone;
  else throw ConfigError("unknown encoder_kind '" + kind + "'");
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  const std::string rec = j.at("reconstruction");
  if (rec == "bce") c.reconstruction = Reconstruction::Bernoulli;
  else if (rec == "sse") c.reconstruction = Reconstruction::SquaredError;
  else throw ConfigError("unknown reconstruction '" + rec + "'");
  return c;
}

/// Diagonal Gaussian posterior q(z|x) = N(mu, diag(sigma^2)).
struct PosteriorParams {
  std::vector<double> mu;
  std::vector<double> sigma;
};

struct LossTerms {
  double total = 0;
  double kl_term = 0;
  double recon_term = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double kl_term = 0;
  double recon_term = 0;
};

inline json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"kl_term", r.kl_term},
          {"recon_term", r.recon_term}};
}

/// z = mu + sigma * eps.
inline std::vector<double> reparameterize(const PosteriorParams& p, const std::vector<double>& eps) {
  if (eps.size() != p.mu.size() || p.sigma.size() != p.mu.size())
    throw ContractError("reparameterize: eps length " + std::to_string(eps.size()) + " != d " +
                        std::to_string(p.mu.size()));
  std::vector<double> z(eps.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = p.mu[j] + p.sigma[j] * eps[j];
  return z;
}

/// KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum_j (1 + log sigma_j^2 - sigma_j^2 - mu_j^2).
inline double kl_divergence(const PosteriorParams& p) {
  if (p.sigma.size() != p.mu.size()) throw ContractError("kl_divergence: mu and sigma lengths differ");
  double acc = 0;
  for (std::size_t j = 0; j < p.mu.size(); ++j) {
    const double s = p.sigma[j];
    if (!(s > 0)) throw ContractError("kl_divergence: sigma must be positive");
    const double s2 = s * s;
    // grouped so that sigma = 1, mu = 0 gives exactly zero
    acc += -0.5 * (std::log(s2) - (s2 - 1.0) - p.mu[j] * p.mu[j]);
  }
  return acc;
}

/// Bernoulli negative log-likelihood summed over pixels, with 0*log(0) = 0.
inline double reconstruction_bce(std::span<const float> x, std::span<const float> x_hat) {
  if (x.size() != x_hat.size()) throw ContractError("reconstruction_bce: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = x[i], p = x_hat[i];
    if (t > 0) acc -= t * std::log(std::max(p, 1e-300));
    if (t < 1) acc -= (1 - t) * std::log(std::max(1 - p, 1e-300));
  }
  return acc;
}

namespace detail {

/// Stable BCE on a logit: softplus(l) - x*l.
template <class T>
inline double bce_logit(T logit, T target) {
  const double l = logit, t = target;
  return std::max(l, 0.0) - t * l + std::log1p(std::exp(-std::abs(l)));
}

template <class T>
inline T sigmoid(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

}  // namespace detail

/// Encoder + decoder network. `T` is the scalar type (float for training,
/// double for gradient checks).
template <class T>
class Network {
 public:
  Network(const TrainConfig& cfg, int channels, std::uint64_t init_seed)
      : d_(cfg.latent_dim), channels_(channels), size_(cfg.image_size) {
    std::mt19937_64 rng(init_seed);
    int in = channels;
    for (int c : cfg.encoder_channels) {
      trunk_.template add<nn::Conv2d<T>>(in, c, 3, 2, 1, rng);
      trunk_.template add<nn::BatchNorm2d<T>>(c);
      trunk_.template add<nn::ReLU<T>>();
      in = c;
    }
    const int s0 = size_ / 32;
    feature_ = in * s0 * s0;
    trunk_.template add<nn::Reshape<T>>(std::vector<int>{feature_});
    mu_head_ = std::make_unique<nn::Linear<T>>(feature_, d_, rng);
    logvar_head_ = std::make_unique<nn::Linear<T>>(feature_, d_, rng);

    const int c0 = cfg.decoder_channels.front();
    decoder_.template add<nn::Linear<T>>(d_, c0 * s0 * s0, rng);
    decoder_.template add<nn::Reshape<T>>(std::vector<int>{c0, s0, s0});
    decoder_.template add<nn::ReLU<T>>();
    in = c0;
    for (int c : cfg.decoder_channels) {
      decoder_.template add<nn::ConvTranspose2d<T>>(in, c, 3, 2, 1, 1, rng);
      decoder_.template add<nn::BatchNorm2d<T>>(c);
      decoder_.template add<nn::ReLU<T>>();
      in = c;
    }
    decoder_.template add<nn::Conv2d<T>>(in, channels, 3, 1, 1, rng);
  }

  Network(const Network& o)
      : d_(o.d_), channels_(o.channels_), size_(o.size_), feature_(o.feature_), trunk_(o.trunk_),
        mu_head_(std::make_unique<nn::Linear<T>>(*o.mu_head_)),
        logvar_head_(std::make_unique<nn::Linear<T>>(*o.logvar_head_)), decoder_(o.decoder_) {}
  Network(Network&&) noexcept = default;

  int latent_dim() const { return d_; }
  int channels() const { return channels_; }
  int image_size() const { return size_; }

  /// Inference-mode encode of an NCHW batch: returns (mu, logvar), each (B, d).
  std::pair<nn::Tensor<T>, nn::Tensor<T>> encode(const nn::Tensor<T>& x) const {
    check_input(x);
    const auto f = trunk_.infer(x);
    return {mu_head_->infer(f), logvar_head_->infer(f)};
  }

  /// Inference-mode decoder logits for a (B, d) latent batch.
  nn::Tensor<T> decode_logits(const nn::Tensor<T>& z) const {
    if (z.shape.size() != 2 || z.dim(1) != d_)
      throw ContractError("decode: latent vectors must have length " + std::to_string(d_));
    return decoder_.infer(z);
  }

  /// Inference-mode loss (running batch-norm statistics, no gradients).
  LossTerms eval_loss(const nn::Tensor<T>& x, const nn::Tensor<T>& eps, double beta, Reconstruction rec) const {
    auto [mu, lv] = encode(x);
    const int b = x.dim(0);
    if (eps.shape != std::vector<int>{b, d_}) throw ContractError("loss: eps must be (batch, d)");
    nn::Tensor<T> sigma, z;
    const double kl = sample_latents(mu, lv, eps, sigma, z);
    const auto logits = decoder_.infer(z);
    return combine(recon_sum(logits, x, rec, nullptr), kl, b, beta);
  }

  /// Training-mode loss on a batch (batch statistics); adds the parameter
  /// gradients of `total` to the gradient buffers.
  LossTerms train_loss(const nn::Tensor<T>& x, const nn::Tensor<T>& eps, double beta, Reconstruction rec) {
    check_input(x);
    const int b = x.dim(0);
    if (eps.shape != std::vector<int>{b, d_}) throw ContractError("loss: eps must be (batch, d)");
    nn::Tensor<T> f = trunk_.forward(x);
    nn::Tensor<T> mu = mu_head_->forward(f);
    nn::Tensor<T> lv = logvar_head_->forward(f);
    nn::Tensor<T> sigma, z;
    const double kl = sample_latents(mu, lv, eps, sigma, z);
    nn::Tensor<T> logits = decoder_.forward(z);
    nn::Tensor<T> dlogits(logits.shape);
    const LossTerms out = combine(recon_sum(logits, x, rec, &dlogits), kl, b, beta);

    const T inv_b = T(1) / static_cast<T>(b);
    nn::Tensor<T> dz = decoder_.backward(dlogits);
    nn::Tensor<T> dmu({b, d_}), dlv({b, d_});
    const T tb = static_cast<T>(beta);
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dmu.data[i] = dz.data[i] + tb * mu.data[i] * inv_b;
      dlv.data[i] = dz.data[i] * eps.data[i] * T(0.5) * sigma.data[i] +
                    tb * T(0.5) * (std::exp(lv.data[i]) - T(1)) * inv_b;
    }
    nn::Tensor<T> df = mu_head_->backward(dmu);
    const nn::Tensor<T> df2 = logvar_head_->backward(dlv);
    for (std::size_t i = 0; i < df.size(); ++i) df.data[i] += df2.data[i];
    df.shape = {b, feature_};
    trunk_.backward(df);
    return out;
  }

  std::vector<nn::Param<T>> params() {
    std::vector<nn::Param<T>> out;
    trunk_.collect_params(out, "encoder.");
    mu_head_->collect_params(out, "mu_head.");
    logvar_head_->collect_params(out, "logvar_head.");
    decoder_.collect_params(out, "decoder.");
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    trunk_.collect_buffers(out, "encoder.");
    decoder_.collect_buffers(out, "decoder.");
    return out;
  }

  /// ReLU states of the last training-mode forward, encoder then decoder.
  std::vector<bool> activation_pattern() const {
    std::vector<bool> out;
    trunk_.activation_pattern(out);
    decoder_.activation_pattern(out);
    return out;
  }

  /// Every named tensor (parameters then buffers), for snapshots and checkpoints.
  std::vector<std::pair<std::string, nn::Tensor<T>*>> state() {
    std::vector<std::pair<std::string, nn::Tensor<T>*>> out;
    for (auto& p : params()) out.emplace_back(p.name, p.value);
    for (auto& b : buffers()) out.emplace_back(b.name, b.value);
    return out;
  }

 private:
  void check_input(const nn::Tensor<T>& x) const {
    if (x.shape.size() != 4 || x.dim(1) != channels_ || x.dim(2) != size_ || x.dim(3) != size_)
      throw ContractError("expected images of shape " + std::to_string(size_) + "x" + std::to_string(size_) + "x" +
                          std::to_string(channels_));
  }

  // sigma = exp(logvar / 2), z = mu + sigma * eps; returns the summed KL.
  static double sample_latents(const nn::Tensor<T>& mu, const nn::Tensor<T>& lv, const nn::Tensor<T>& eps,
                               nn::Tensor<T>& sigma, nn::Tensor<T>& z) {
    sigma = nn::Tensor<T>(mu.shape);
    z = nn::Tensor<T>(mu.shape);
    double kl = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      sigma.data[i] = std::exp(T(0.5) * lv.data[i]);
      z.data[i] = mu.data[i] + sigma.data[i] * eps.data[i];
      kl += -0.5 * (1.0 + lv.data[i] - std::exp(static_cast<double>(lv.data[i])) -
                    static_cast<double>(mu.data[i]) * mu.data[i]);
    }
    return kl;
  }

  // Summed reconstruction loss; optionally the gradient w.r.t. logits of the batch mean.
  static double recon_sum(const nn::Tensor<T>& logits, const nn::Tensor<T>& x, Reconstruction rec,
                          nn::Tensor<T>* dlogits) {
    double recon = 0;
    const T inv_b = T(1) / static_cast<T>(x.dim(0));
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const T l = logits.data[i], t = x.data[i];
      const T p = detail::sigmoid(l);
      if (rec == Reconstruction::Bernoulli) {
        recon += detail::bce_logit(l, t);
        if (dlogits) dlogits->data[i] = (p - t) * inv_b;
      } else {
        recon += static_cast<double>(p - t) * (p - t);
        if (dlogits) dlogits->data[i] = T(2) * (p - t) * p * (T(1) - p) * inv_b;
      }
    }
    return recon;
  }

  static LossTerms combine(double recon, double kl, int b, double beta) {
    LossTerms out;
    out.recon_term = recon / b;
    out.kl_term = kl / b;
    out.total = out.recon_term + beta * out.kl_term;
    return out;
  }

  int d_, channels_, size_, feature_ = 0;
  nn::Sequential<T> trunk_;
  std::unique_ptr<nn::Linear<T>> mu_head_, logvar_head_;
  nn::Sequential<T> decoder_;
};

/// Packs dataset rows [begin, end) of HWC images into an NCHW tensor.
template <class T>
nn::Tensor<T> batch_tensor(const data::LabeledImageSet& ds, const std::vector<std::size_t>& rows) {
  const int b = static_cast<int>(rows.size()), h = ds.height, w = ds.width, c = ds.channels;
  nn::Tensor<T> x({b, c, h, w});
  for (int bi = 0; bi < b; ++bi) {
    const float* src = ds.images.data() + rows[bi] * ds.image_stride();
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch)
          x.data[((static_cast<std::size_t>(bi) * c + ch) * h + y) * w + xx] = src[(y * w + xx) * c + ch];
  }
  return x;
}

template <class T>
nn::Tensor<T> image_tensor(const Image& img) {
  nn::Tensor<T> x({1, img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int xx = 0; xx < img.width; ++xx)
      for (int ch = 0; ch < img.channels; ++ch)
        x.data[(static_cast<std::size_t>(ch) * img.height + y) * img.width + xx] = img.at(y, xx, ch);
  return x;
}

template <class T>
nn::Tensor<T> draw_eps(int b, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Tensor<T> eps({b, d});
  for (auto& v : eps.data) v = static_cast<T>(normal(rng));
  return eps;
}

inline constexpr int kCheckpointSchemaVersion = 1;

/// A finished model. Only const operations are exposed; inference is
/// reentrant and may be shared across threads.
class TrainedVae {
 public:
  TrainedVae(Network<float> net, TrainConfig cfg, std::vector<EpochRecord> history)
      : net_(std::make_shared<Network<float>>(std::move(net))), cfg_(std::move(cfg)), history_(std::move(history)) {}

  const TrainConfig& config() const { return cfg_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int latent_dim() const { return net_->latent_dim(); }
  int channels() const { return net_->channels(); }
  int image_size() const { return net_->image_size(); }

  PosteriorParams encode(const Image& x) const {
    if (x.height != image_size() || x.width != image_size() || x.channels != channels())
      throw ContractError("encode: image shape does not match the model (" + std::to_string(image_size()) + "x" +
                          std::to_string(image_size()) + "x" + std::to_string(channels()) + ")");
    auto [mu, lv] = net_->encode(image_tensor<float>(x));
    PosteriorParams p;
    for (int j = 0; j < latent_dim(); ++j) {
      p.mu.push_back(mu.data[j]);
      p.sigma.push_back(std::exp(0.5 * static_cast<double>(lv.data[j])));
    }
    return p;
  }

  /// Encodes rows of a dataset in fixed-size chunks. Row results do not
  /// depend on chunk composition (inference uses running statistics).
  std::vector<PosteriorParams> encode_rows(const data::LabeledImageSet& ds, const std::vector<std::size_t>& rows) const {
    if (ds.height != image_size() || ds.width != image_size() || ds.channels != channels())
      throw ContractError("encode: dataset image shape does not match the model");
    std::vector<PosteriorParams> out;
    out.reserve(rows.size());
    constexpr std::size_t chunk = 128;
    for (std::size_t s = 0; s < rows.size(); s += chunk) {
      std::vector<std::size_t> part(rows.begin() + static_cast<std::ptrdiff_t>(s),
                                    rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), s + chunk)));
      auto [mu, lv] = net_->encode(batch_tensor<float>(ds, part));
      const int d = latent_dim();
      for (std::size_t i = 0; i < part.size(); ++i) {
        PosteriorParams p;
        for (int j = 0; j < d; ++j) {
          p.mu.push_back(mu.data[i * d + j]);
          p.sigma.push_back(std::exp(0.5 * static_cast<double>(lv.data[i * d + j])));
        }
        out.push_back(std::move(p));
      }
    }
    return out;
  }

  /// Decoder mean image in [0,1].
  Image decode(const std::vector<double>& z) const { return decode_batch({z}).front(); }

  std::vector<Image> decode_batch(const std::vector<std::vector<double>>& zs) const {
    const int d = latent_dim();
    nn::Tensor<float> zt({static_cast<int>(zs.size()), d});
    for (std::size_t i = 0; i < zs.size(); ++i) {
      if (static_cast<int>(zs[i].size()) != d)
        throw ContractError("decode: latent vector has length " + std::to_string(zs[i].size()) + ", expected d=" +
                            std::to_string(d));
      for (int j = 0; j < d; ++j) zt.data[i * d + j] = static_cast<float>(zs[i][j]);
    }
    const auto logits = net_->decode_logits(zt);
    std::vector<Image> out;
    const int c = channels(), s = image_size();
    for (std::size_t i = 0; i < zs.size(); ++i) {
      Image img(s, s, c);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            img.at(y, x, ch) = detail::sigmoid(logits.data[((i * c + ch) * s + y) * s + x]);
      out.push_back(std::move(img));
    }
    return out;
  }

  /// Inference-mode loss on dataset rows with explicit noise eps (rows x d).
  LossTerms loss(const data::LabeledImageSet& ds, const std::vector<std::size_t>& rows,
                 const nn::Tensor<float>& eps) const {
    return net_->eval_loss(batch_tensor<float>(ds, rows), eps, cfg_.beta, cfg_.reconstruction);
  }

  /// Serialized parameter bytes; equal digests mean identical models.
  std::string parameter_digest() const {
    Network<float> copy = *net_;
    std::string bytes;
    for (auto& [name, t] : copy.state()) {
      bytes += name;
      bytes.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(float));
    }
    return sha256_hex(bytes);
  }

  Archive to_archive() const {
    Archive a;
    json hist = json::array();
    for (const auto& r : history_) hist.push_back(to_json(r));
    a.manifest = {{"kind", "checkpoint"},
                  {"schema_version", kCheckpointSchemaVersion},
                  {"config", to_json(cfg_)},
                  {"channels", channels()},
                  {"history", hist}};
    Network<float> copy = *net_;
    for (auto& [name, t] : copy.state()) {
      std::vector<std::uint64_t> shape(t->shape.begin(), t->shape.end());
      a.put<float>(name, shape, std::vector<float>(t->data.begin(), t->data.end()));
    }
    return a;
  }

  void save(const fs::path& path) const { to_archive().save(path); }

  static TrainedVae from_archive(const Archive& a) {
    const TrainConfig cfg = train_config_from_json(a.manifest.at("config"));
    Network<float> net(cfg, a.manifest.at("channels"), 0);
    for (auto& [name, t] : net.state()) {
      const auto values = a.get<float>(name);
      if (values.size() != t->size()) throw ParseError("checkpoint tensor '" + name + "' has wrong size", 0);
      t->data.assign(values.begin(), values.end());
    }
    std::vector<EpochRecord> history;
    for (const auto& r : a.manifest.value("history", json::array()))
      history.push_back({r.at("epoch"), r.at("train_loss"), r.at("val_loss"), r.at("kl_term"), r.at("recon_term")});
    return TrainedVae(std::move(net), cfg, std::move(history));
  }

  static TrainedVae load(const fs::path& path) {
    return from_archive(Archive::load(path, "checkpoint", kCheckpointSchemaVersion));
  }

 private:
  std::shared_ptr<const Network<float>> net_;
  TrainConfig cfg_;
  std::vector<EpochRecord> history_;
};

/// Loss of a trained model on a batch of images with explicit noise.
inline LossTerms loss(const TrainedVae& model, const data::LabeledImageSet& batch, const nn::Tensor<float>& eps) {
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);
  if (rows.empty()) throw ContractError("loss: batch is empty");
  return model.loss(batch, rows, eps);
}

inline PosteriorParams encode(const TrainedVae& model, const Image& x) { return model.encode(x); }
inline Image decode(const TrainedVae& model, const std::vector<double>& z) { return model.decode(z); }

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Partition of 0..n-1 into shuffled batches; a trailing batch of one sample
/// is merged into its predecessor (batch statistics need two samples).
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng,
                                                          bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

/// Adam on the beta-ELBO with early stopping on validation loss. Returns the
/// parameters of the best validation epoch.
inline TrainedVae train(const data::LabeledImageSet& train_set, const data::LabeledImageSet& val_set,
                        TrainConfig cfg, const EpochCallback& on_epoch = {}) {
  if (train_set.size() < 2 || val_set.size() < 1) throw ContractError("train: train and val splits must be nonempty");
  if (train_set.height != train_set.width) throw ContractError("train: images must be square");
  cfg.image_size = train_set.height;
  cfg.validate();
  if (val_set.height != train_set.height || val_set.channels != train_set.channels)
    throw ContractError("train: val images differ in shape from train images");

  Network<float> net(cfg, train_set.channels, cfg.seed);
  auto params = net.params();
  nn::Adam<float> adam(cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  std::vector<std::pair<std::string, nn::AlignedVec<float>>> best_state;
  auto snapshot = [&] {
    best_state.clear();
    for (auto& [name, t] : net.state()) best_state.emplace_back(name, t->data);
  };
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<EpochRecord> history;

  std::vector<std::size_t> val_rows(val_set.size());
  std::iota(val_rows.begin(), val_rows.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    double n_seen = 0;
    for (const auto& batch : make_batches(train_set.size(), cfg.batch_size, rng, true)) {
      const auto x = batch_tensor<float>(train_set, batch);
      const auto eps = draw_eps<float>(static_cast<int>(batch.size()), cfg.latent_dim, rng);
      nn::zero_grads(params);
      const LossTerms lt = net.train_loss(x, eps, cfg.beta, cfg.reconstruction);
      if (!std::isfinite(lt.total)) throw TrainingError("training loss is not finite", epoch);
      adam.step(params);
      const double w = static_cast<double>(batch.size());
      rec.train_loss += lt.total * w;
      rec.kl_term += lt.kl_term * w;
      rec.recon_term += lt.recon_term * w;
      n_seen += w;
    }
    rec.train_loss /= n_seen;
    rec.kl_term /= n_seen;
    rec.recon_term /= n_seen;

    // Validation noise is identical every epoch so losses are comparable.
    std::mt19937_64 val_rng(cfg.seed + 0x51ED270B27ULL);
    double val_total = 0;
    for (std::size_t s = 0; s < val_rows.size(); s += 128) {
      std::vector<std::size_t> part(val_rows.begin() + static_cast<std::ptrdiff_t>(s),
                                    val_rows.begin() + static_cast<std::ptrdiff_t>(std::min(val_rows.size(), s + 128)));
      const auto eps = draw_eps<float>(static_cast<int>(part.size()), cfg.latent_dim, val_rng);
      const LossTerms lt = net.eval_loss(batch_tensor<float>(val_set, part), eps, cfg.beta, cfg.reconstruction);
      val_total += lt.total * static_cast<double>(part.size());
    }
    rec.val_loss = val_total / static_cast<double>(val_rows.size());
    if (!std::isfinite(rec.val_loss)) throw TrainingError("validation loss is not finite", epoch);
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  auto state = net.state();
  for (std::size_t i = 0; i < state.size(); ++i) state[i].second->data = best_state[i].second;
  return TrainedVae(std::move(net), cfg, std::move(history));
}

// ---------------------------------------------------------------------------
// Hyperparameter aid

enum class Recommendation { IncreaseBeta, DecreaseLatentDim, DecreaseBeta };

inline std::string to_string(Recommendation r) {
  switch (r) {
    case Recommendation::IncreaseBeta: return "increase beta";
    case Recommendation::DecreaseLatentDim: return "decrease d";
    case Recommendation::DecreaseBeta: return "decrease beta";
  }
  return "";
}

struct DimensionVariance {
  int dim = 0;
  double mu_variance = 0;
  double mean_sigma = 0;
  bool uninformative = false;  // mu variance below the floor
  bool sigma_off_prior = false;  // mean sigma deviates from 1 by more than 50%
};

struct DimensionVarianceReport {
  double beta = 0;
  double variance_floor = 0.05;
  std::vector<DimensionVariance> dims;
  int uninformative_count = 0;
  Recommendation recommendation = Recommendation::IncreaseBeta;
};

/// Per-dimension spread of posterior means. The recommendation follows the
/// uninformative (collapsed) count: collapsed dims at beta = 1 mean the
/// latent space is too large; none collapsed means beta can still grow;
/// collapsed dims above beta = 1 mean beta overshot.
inline DimensionVarianceReport suggest_hyperparams(double beta, const LatentTable& latents,
                                                   double variance_floor = 0.05) {
  if (latents.size() < 2) throw ContractError("suggest_hyperparams: need at least two encoded samples");
  DimensionVarianceReport rep;
  rep.beta = beta;
  rep.variance_floor = variance_floor;
  const double n = static_cast<double>(latents.size());
  for (int j = 1; j <= latents.d; ++j) {
    double mean = 0, sig = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
      mean += latents.mu_at(i, j);
      sig += latents.sigma_at(i, j);
    }
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) var += (latents.mu_at(i, j) - mean) * (latents.mu_at(i, j) - mean);
    var /= (n - 1);
    DimensionVariance dv{j, var, sig / n, var < variance_floor, std::abs(sig / n - 1.0) > 0.5};
    rep.uninformative_count += dv.uninformative ? 1 : 0;
    rep.dims.push_back(dv);
  }
  if (rep.uninformative_count == 0) rep.recommendation = Recommendation::IncreaseBeta;
  else if (beta <= 1.0) rep.recommendation = Recommendation::DecreaseLatentDim;
  else rep.recommendation = Recommendation::DecreaseBeta;
  return rep;
}

inline DimensionVarianceReport suggest_hyperparams(const TrainedVae& model, const LatentTable& latents) {
  if (latents.d != model.latent_dim()) throw ContractError("suggest_hyperparams: latent table d differs from model");
  return suggest_hyperparams(model.config().beta, latents);
}

inline json to_json(const DimensionVarianceReport& r) {
  json dims = json::array();
  for (const auto& d : r.dims)
    dims.push_back({{"dim", d.dim},
                    {"mu_variance", d.mu_variance},
                    {"mean_sigma", d.mean_sigma},
                    {"uninformative", d.uninformative},
                    {"sigma_off_prior", d.sigma_off_prior}});
  return {{"beta", r.beta},
          {"variance_floor", r.variance_floor},
          {"uninformative_count", r.uninformative_count},
          {"recommendation", to_string(r.recommendation)},
          {"dims", dims}};
}

}  // namespace latentscout::vae
