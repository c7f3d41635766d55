#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/latent_table.hpp"
#include "latentscout/vae.hpp"

namespace latentscout::analysis {

using json = nlohmann::json;

inline LatentTable encode_dataset(const vae::TrainedVae& model, const data::LabeledImageSet& ds) {
  if (ds.size() == 0) throw ContractError("encode_dataset: dataset is empty");
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto post = model.encode_rows(ds, rows);
  LatentTable t;
  t.d = model.latent_dim();
  t.mu.reserve(ds.size() * t.d);
  t.sigma.reserve(ds.size() * t.d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    t.mu.insert(t.mu.end(), post[i].mu.begin(), post[i].mu.end());
    t.sigma.insert(t.sigma.end(), post[i].sigma.begin(), post[i].sigma.end());
  }
  t.labels = ds.labels;
  t.ids = ds.ids;
  return t;
}

/// Exact W1 between two empirical measures: integral over q of
/// |F_a^-1(q) - F_b^-1(q)|. Quantile breakpoints i/n and j/m are compared
/// as integers (i*m vs j*n), so segment widths carry no rounding.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractError("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::uint64_t n = a.size(), m = b.size();
  std::uint64_t i = 0, j = 0, prev = 0;
  long double acc = 0;
  while (i < n && j < m) {
    const std::uint64_t next_a = (i + 1) * m, next_b = (j + 1) * n;
    const std::uint64_t next = std::min(next_a, next_b);
    acc += static_cast<long double>(next - prev) * std::abs(static_cast<long double>(a[i]) - b[j]);
    if (next_a == next) ++i;
    if (next_b == next) ++j;
    prev = next;
  }
  return static_cast<double>(acc / (static_cast<long double>(n) * static_cast<long double>(m)));
}

/// Samples of dim j grouped by label, classes in ascending label order.
inline std::map<int, std::vector<double>> class_samples(const LatentTable& t, int dim) {
  t.check_dim(dim);
  std::map<int, std::vector<double>> out;
  for (std::size_t i = 0; i < t.size(); ++i) out[t.labels[i]].push_back(t.mu_at(i, dim));
  return out;
}

/// Maximum over unordered class pairs of W1 between class-conditional samples.
inline double mpwd(const LatentTable& t, int dim) {
  const auto groups = class_samples(t, dim);
  if (groups.size() < 2) throw ContractError("mpwd: need at least two classes");
  std::vector<std::vector<double>> g;
  for (auto& [c, v] : groups) g.push_back(v);
  double best = 0;
  for (std::size_t p = 0; p < g.size(); ++p)
    for (std::size_t q = p + 1; q < g.size(); ++q) best = std::max(best, wasserstein1(g[p], g[q]));
  return best;
}

struct KdeCurve {
  int dim = 0;
  int cls = 0;
  std::vector<double> grid;
  std::vector<double> density;
  double h = 0;
};

inline json to_json(const KdeCurve& k) {
  return {{"dim", k.dim}, {"class", k.cls}, {"grid", k.grid}, {"density", k.density}, {"h", k.h}};
}

inline KdeCurve kde_curve_from_json(const json& j) {
  KdeCurve k;
  k.dim = j.at("dim").get<int>();
  k.cls = j.at("class").get<int>();
  k.grid = j.at("grid").get<std::vector<double>>();
  k.density = j.at("density").get<std::vector<double>>();
  k.h = j.at("h").get<double>();
  return k;
}

/// Gaussian kernel density estimate evaluated on `grid`.
inline KdeCurve kde(const std::vector<double>& samples, const std::vector<double>& grid, double h) {
  if (!(h > 0)) throw ContractError("kde: bandwidth must be positive");
  if (samples.empty()) throw ContractError("kde: no samples");
  constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
  KdeCurve out;
  out.grid = grid;
  out.h = h;
  out.density.resize(grid.size());
  const double norm = inv_sqrt_2pi / (static_cast<double>(samples.size()) * h);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0;
    for (double x : samples) {
      const double u = (grid[g] - x) / h;
      s += std::exp(-0.5 * u * u);
    }
    out.density[g] = norm * s;
  }
  return out;
}

inline constexpr double kBandwidthFloor = 1e-6;

/// Linear-interpolated quantile of sorted data (type 7).
inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Silverman's rule 0.9 * min(std, IQR/1.34) * n^-1/5. Falls back to std
/// when the IQR is zero; floored at 1e-6.
inline double bandwidth(std::vector<double> samples) {
  if (samples.empty()) throw ContractError("bandwidth: no samples");
  const double n = static_cast<double>(samples.size());
  double sd = 0;
  if (samples.size() > 1) {
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    for (double x : samples) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / (n - 1));
  }
  std::sort(samples.begin(), samples.end());
  const double iqr = quantile_sorted(samples, 0.75) - quantile_sorted(samples, 0.25);
  double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = 0.9 * spread * std::pow(n, -0.2);
  if (!(h >= kBandwidthFloor)) {
    std::cerr << "warning: samples have no spread, bandwidth floored at " << kBandwidthFloor << "\n";
    return kBandwidthFloor;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Scoreboard

struct DimensionRecord {
  int dim = 0;
  double mpwd = 0;
  double predictiveness = 0;
  double variance = 0;
  int mpwd_rank = 0;
  int pred_rank = 0;
  double z_min = 0;
  double z_max = 0;
  bool above_threshold = false;
};

struct DimensionScoreboard {
  std::vector<DimensionRecord> dims;
  double median_mpwd = 0;
  double threshold_factor = 3.0;
  bool has_predictiveness = false;

  int d() const { return static_cast<int>(dims.size()); }
  const DimensionRecord& at(int dim) const {
    if (dim < 1 || dim > d()) throw ContractError("scoreboard has no dimension " + std::to_string(dim));
    return dims[dim - 1];
  }
};

/// Ranks (1 = largest) with ties going to the smaller index.
inline std::vector<int> rank_scores(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> ranks(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<int>(r) + 1;
  return ranks;
}

/// First k dims (1-based) by descending score.
inline std::vector<int> top_k(const std::vector<double>& scores, int k) {
  if (k < 0 || k > static_cast<int>(scores.size()))
    throw ContractError("k=" + std::to_string(k) + " exceeds the number of dimensions d=" +
                        std::to_string(scores.size()));
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a - 1] > scores[b - 1]; });
  order.resize(k);
  return order;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void refresh_ranks(DimensionScoreboard& sb) {
  std::vector<double> m, p;
  for (const auto& r : sb.dims) {
    m.push_back(r.mpwd);
    p.push_back(r.predictiveness);
  }
  const auto mr = rank_scores(m), pr = rank_scores(p);
  sb.median_mpwd = median(m);
  for (std::size_t i = 0; i < sb.dims.size(); ++i) {
    sb.dims[i].mpwd_rank = mr[i];
    sb.dims[i].pred_rank = pr[i];
    sb.dims[i].above_threshold = sb.dims[i].mpwd > sb.threshold_factor * sb.median_mpwd;
  }
}

/// MPWD, variance and range per dimension. Predictiveness starts at zero and
/// is filled in by set_predictiveness once a probe exists.
inline DimensionScoreboard score_dimensions(const LatentTable& t, double threshold_factor = 3.0) {
  if (t.size() < 2) throw ContractError("score_dimensions: need at least two samples");
  DimensionScoreboard sb;
  sb.threshold_factor = threshold_factor;
  const double n = static_cast<double>(t.size());
  for (int j = 1; j <= t.d; ++j) {
    DimensionRecord r;
    r.dim = j;
    r.mpwd = mpwd(t, j);
    const auto col = t.column(j);
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
    for (double x : col) r.variance += (x - mean) * (x - mean);
    r.variance /= (n - 1);
    r.z_min = *std::min_element(col.begin(), col.end());
    r.z_max = *std::max_element(col.begin(), col.end());
    sb.dims.push_back(r);
  }
  refresh_ranks(sb);
  return sb;
}

inline void set_predictiveness(DimensionScoreboard& sb, const std::vector<double>& pred) {
  if (static_cast<int>(pred.size()) != sb.d()) throw ContractError("predictiveness vector length differs from d");
  for (std::size_t i = 0; i < pred.size(); ++i) sb.dims[i].predictiveness = pred[i];
  sb.has_predictiveness = true;
  refresh_ranks(sb);
}

inline std::vector<double> mpwd_scores(const DimensionScoreboard& sb) {
  std::vector<double> v;
  for (const auto& r : sb.dims) v.push_back(r.mpwd);
  return v;
}

inline std::vector<double> predictiveness_scores(const DimensionScoreboard& sb) {
  std::vector<double> v;
  for (const auto& r : sb.dims) v.push_back(r.predictiveness);
  return v;
}

inline std::vector<int> rank_by_mpwd(const DimensionScoreboard& sb, int k) { return top_k(mpwd_scores(sb), k); }

inline std::vector<int> rank_by_predictiveness_scores(const DimensionScoreboard& sb, int k) {
  return top_k(predictiveness_scores(sb), k);
}

/// Union of top-k by MPWD and (when present) by predictiveness, ascending.
inline std::vector<int> candidate_dims(const DimensionScoreboard& sb, int k) {
  auto dims = rank_by_mpwd(sb, k);
  if (sb.has_predictiveness) {
    const auto p = rank_by_predictiveness_scores(sb, k);
    dims.insert(dims.end(), p.begin(), p.end());
  }
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  return dims;
}

inline json to_json(const DimensionScoreboard& sb) {
  json dims = json::array();
  for (const auto& r : sb.dims)
    dims.push_back({{"dim", r.dim},
                    {"mpwd", r.mpwd},
                    {"predictiveness", r.predictiveness},
                    {"variance", r.variance},
                    {"mpwd_rank", r.mpwd_rank},
                    {"pred_rank", r.pred_rank},
                    {"z_min", r.z_min},
                    {"z_max", r.z_max},
                    {"above_threshold", r.above_threshold}});
  return dims;
}

/// The scoreboard file is the bare per-dimension array; summary fields are
/// recomputed on load.
inline DimensionScoreboard scoreboard_from_json(const json& j, double threshold_factor = 3.0) {
  if (!j.is_array()) throw ParseError("scoreboard must be a JSON array", 0);
  DimensionScoreboard sb;
  sb.threshold_factor = threshold_factor;
  for (const auto& e : j) {
    DimensionRecord r;
    r.dim = e.at("dim").get<int>();
    r.mpwd = e.at("mpwd").get<double>();
    r.predictiveness = e.at("predictiveness").get<double>();
    r.variance = e.at("variance").get<double>();
    r.z_min = e.at("z_min").get<double>();
    r.z_max = e.at("z_max").get<double>();
    if (r.dim != static_cast<int>(sb.dims.size()) + 1) throw ParseError("scoreboard dims out of order", 0);
    sb.has_predictiveness = sb.has_predictiveness || r.predictiveness != 0;
    sb.dims.push_back(r);
  }
  refresh_ranks(sb);
  return sb;
}

}  // namespace latentscout::analysis
