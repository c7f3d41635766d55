#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "latentscout/analysis.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/latent_table.hpp"

namespace latentscout::probe {

using json = nlohmann::json;

struct ProbeConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  int patience = 10;
  int max_epochs = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("probe learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("probe batch_size must be at least 1");
    if (patience < 1) throw ConfigError("probe patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("probe max_epochs must be at least 1");
  }
};

/// Linear head on latent means: logits = theta^T mu + bias. theta is stored
/// row-major d x C, so row j holds the weights leaving latent dim j.
struct ProbeHead {
  int d = 0;
  int n_classes = 0;
  std::vector<double> theta;
  std::vector<double> bias;
  int epochs = 0;
  int best_epoch = 0;
  double val_accuracy = 0;
  double val_loss = 0;

  double w(int dim, int cls) const { return theta[(dim - 1) * n_classes + (cls - 1)]; }

  /// Predicted label (1..C); ties go to the lower class.
  int predict(const double* mu) const {
    int best = 1;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_classes; ++c) {
      double s = bias[c];
      for (int j = 0; j < d; ++j) s += theta[j * n_classes + c] * mu[j];
      if (s > best_logit) {
        best_logit = s;
        best = c + 1;
      }
    }
    return best;
  }
};

inline double predictiveness(const ProbeHead& head, int dim) {
  if (dim < 1 || dim > head.d) throw ContractError("predictiveness: dimension " + std::to_string(dim) + " outside 1.." +
                                                   std::to_string(head.d));
  double s = 0;
  for (int c = 1; c <= head.n_classes; ++c) s += std::abs(head.w(dim, c));
  return s;
}

inline std::vector<double> predictiveness_all(const ProbeHead& head) {
  std::vector<double> out;
  for (int j = 1; j <= head.d; ++j) out.push_back(predictiveness(head, j));
  return out;
}

inline std::vector<int> rank_by_predictiveness(const ProbeHead& head, int k) {
  return analysis::top_k(predictiveness_all(head), k);
}

inline double probe_accuracy(const ProbeHead& head, const LatentTable& t) {
  if (t.d != head.d) throw ContractError("probe_accuracy: latent d differs from head");
  if (t.size() == 0) throw ContractError("probe_accuracy: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < t.size(); ++i) hit += head.predict(t.mu.data() + i * t.d) == t.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(t.size());
}

namespace detail {

/// Mean cross-entropy over rows; if grads are given, accumulates mean
/// gradients into them.
inline double cross_entropy(const ProbeHead& h, const LatentTable& t, const std::vector<std::size_t>& rows,
                            std::vector<double>* gtheta = nullptr, std::vector<double>* gbias = nullptr) {
  const int C = h.n_classes, d = h.d;
  std::vector<double> logits(C), p(C);
  double loss = 0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto i : rows) {
    const double* mu = t.mu.data() + i * d;
    for (int c = 0; c < C; ++c) {
      double s = h.bias[c];
      for (int j = 0; j < d; ++j) s += h.theta[j * C + c] * mu[j];
      logits[c] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(logits[c] - mx);
    const double lse = mx + std::log(z);
    const int y = t.labels[i] - 1;
    loss += lse - logits[y];
    if (gtheta) {
      for (int c = 0; c < C; ++c) {
        const double g = (std::exp(logits[c] - lse) - (c == y ? 1.0 : 0.0)) * inv;
        (*gbias)[c] += g;
        for (int j = 0; j < d; ++j) (*gtheta)[j * C + c] += g * mu[j];
      }
    }
  }
  return loss * inv;
}

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double>& p, const std::vector<double>& g, double lr, long t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t)), c2 = 1 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace detail

/// Softmax regression on frozen latent means with Adam and early stopping on
/// validation cross-entropy. Returns the best-validation weights.
inline ProbeHead train_probe(const LatentTable& train, const LatentTable& val, const ProbeConfig& cfg = {}) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw ContractError("train_probe: train and val latents must be nonempty");
  if (train.d != val.d) throw ContractError("train_probe: train and val latents differ in d");
  const std::set<int> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2) throw ContractError("train_probe: training latents contain a single class");
  int C = *classes.rbegin();
  for (int y : val.labels) C = std::max(C, y);
  if (*classes.begin() < 1) throw ContractError("train_probe: labels must be in 1..C");

  ProbeHead h;
  h.d = train.d;
  h.n_classes = C;
  h.theta.assign(static_cast<std::size_t>(h.d) * C, 0.0);
  h.bias.assign(C, 0.0);
  std::mt19937_64 rng(cfg.seed);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h.d));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& w : h.theta) w = u(rng);
    for (auto& b : h.bias) b = u(rng);
  }

  detail::AdamState at(h.theta.size()), ab(h.bias.size());
  std::vector<std::size_t> order(train.size()), val_rows(val.size());
  std::iota(order.begin(), order.end(), 0);
  std::iota(val_rows.begin(), val_rows.end(), 0);
  ProbeHead best = h;
  best.val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(s),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(order.size(), s + cfg.batch_size)));
      std::vector<double> gt(h.theta.size(), 0.0), gb(h.bias.size(), 0.0);
      detail::cross_entropy(h, train, batch, &gt, &gb);
      ++step;
      at.step(h.theta, gt, cfg.learning_rate, step);
      ab.step(h.bias, gb, cfg.learning_rate, step);
    }
    h.epochs = epoch;
    const double vl = detail::cross_entropy(h, val, val_rows);
    if (!std::isfinite(vl)) throw TrainingError("probe loss is not finite", epoch);
    if (vl < best.val_loss) {
      best = h;
      best.val_loss = vl;
      best.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  best.epochs = h.epochs;
  best.val_accuracy = probe_accuracy(best, val);
  return best;
}

inline json to_json(const ProbeHead& h) {
  json theta = json::array();
  for (int j = 1; j <= h.d; ++j) {
    json row = json::array();
    for (int c = 1; c <= h.n_classes; ++c) row.push_back(h.w(j, c));
    theta.push_back(row);
  }
  return {{"theta", theta},
          {"bias", h.bias},
          {"metadata",
           {{"d", h.d},
            {"n_classes", h.n_classes},
            {"epochs", h.epochs},
            {"best_epoch", h.best_epoch},
            {"val_accuracy", h.val_accuracy},
            {"val_loss", h.val_loss}}}};
}

inline ProbeHead probe_from_json(const json& j) {
  ProbeHead h;
  const auto& theta = j.at("theta");
  h.d = static_cast<int>(theta.size());
  h.bias = j.at("bias").get<std::vector<double>>();
  h.n_classes = static_cast<int>(h.bias.size());
  for (const auto& row : theta) {
    if (static_cast<int>(row.size()) != h.n_classes) throw ParseError("probe theta row length differs from bias", 0);
    for (const auto& w : row) h.theta.push_back(w.get<double>());
  }
  const auto& m = j.at("metadata");
  h.epochs = m.value("epochs", 0);
  h.best_epoch = m.value("best_epoch", 0);
  h.val_accuracy = m.value("val_accuracy", 0.0);
  h.val_loss = m.value("val_loss", 0.0);
  return h;
}

inline void save_probe(const fs::path& path, const ProbeHead& h) { write_atomic(path, to_json(h).dump(2)); }

inline ProbeHead load_probe(const fs::path& path) {
  try {
    return probe_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

}  // namespace latentscout::probe
