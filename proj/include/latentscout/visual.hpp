#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latentscout/analysis.hpp"
#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/image.hpp"
#include "latentscout/latent_table.hpp"
#include "latentscout/vae.hpp"

namespace latentscout::visual {

using json = nlohmann::json;

enum class TraversalMode { Set, Offset };

inline std::string to_string(TraversalMode m) { return m == TraversalMode::Set ? "set" : "offset"; }

inline TraversalMode traversal_mode_from_string(const std::string& s) {
  if (s == "set") return TraversalMode::Set;
  if (s == "offset") return TraversalMode::Offset;
  throw ContractError("unknown traversal mode '" + s + "' (expected set or offset)");
}

struct TraversalSpec {
  int dim = 1;
  int steps = 8;
  TraversalMode mode = TraversalMode::Set;
  std::string instance_id;                  // empty: median instance for dim
  std::optional<std::array<double, 2>> range;  // empty: dataset [min, max] of mu_dim
};

struct Traversal {
  int dim = 0;
  TraversalMode mode = TraversalMode::Set;
  std::string instance_id;
  std::vector<double> values;
  std::vector<Image> frames;
};

/// v_t = lo + t * (hi - lo) / (steps - 1), t = 0..steps-1.
inline std::vector<double> sweep_values(double lo, double hi, int steps) {
  if (steps < 2) throw ContractError("traversal needs at least 2 steps");
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ContractError("traversal range must be finite");
  const double delta = (hi - lo) / (steps - 1);
  std::vector<double> v(steps);
  for (int t = 0; t < steps; ++t) v[t] = lo + t * delta;
  return v;
}

/// Row indices sorted by mu_dim ascending; equal values keep row order.
inline std::vector<std::size_t> argsort_dim(const LatentTable& t, int dim) {
  const auto col = t.column(dim);
  std::vector<std::size_t> order(col.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
  return order;
}

/// Row whose mu_dim is the (lower) median.
inline std::size_t median_instance(const LatentTable& t, int dim) {
  if (t.size() == 0) throw ContractError("median_instance: empty latent table");
  return argsort_dim(t, dim)[(t.size() - 1) / 2];
}

inline std::array<double, 2> dim_range(const LatentTable& t, int dim) {
  const auto col = t.column(dim);
  const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
  return {*lo, *hi};
}

inline Traversal traverse(const vae::TrainedVae& model, const LatentTable& t, const TraversalSpec& spec) {
  t.check_dim(spec.dim);
  if (t.d != model.latent_dim()) throw ContractError("traverse: latent table d differs from model");
  std::size_t row;
  if (spec.instance_id.empty()) {
    row = median_instance(t, spec.dim);
  } else {
    const auto found = t.find(spec.instance_id);
    if (found < 0) throw NotFoundError("unknown instance '" + spec.instance_id + "'");
    row = static_cast<std::size_t>(found);
  }
  const auto range = spec.range ? *spec.range : dim_range(t, spec.dim);
  Traversal out;
  out.dim = spec.dim;
  out.mode = spec.mode;
  out.instance_id = t.ids[row];
  out.values = sweep_values(range[0], range[1], spec.steps);
  const auto base = t.row_mu(row);
  std::vector<std::vector<double>> zs;
  for (double v : out.values) {
    auto z = base;
    if (spec.mode == TraversalMode::Set) z[spec.dim - 1] = v;
    else z[spec.dim - 1] += v;
    zs.push_back(std::move(z));
  }
  out.frames = model.decode_batch(zs);
  return out;
}

struct Extremes {
  std::vector<std::size_t> min_rows;  // ascending mu_dim
  std::vector<std::size_t> max_rows;  // ascending mu_dim
  std::vector<Image> min_images;
  std::vector<Image> max_images;
};

/// Inputs at the first l and last l positions of the ascending argsort of
/// mu_dim. `latents` must be row-aligned with `ds`.
inline Extremes extremes(const LatentTable& t, const data::LabeledImageSet& ds, int dim, int l) {
  t.check_dim(dim);
  if (t.size() != ds.size()) throw ContractError("extremes: latents and dataset differ in length");
  if (l < 1 || static_cast<std::size_t>(l) > t.size() / 2)
    throw ContractError("extremes: l=" + std::to_string(l) + " must lie in 1..N/2 (N=" + std::to_string(t.size()) +
                        ")");
  const auto order = argsort_dim(t, dim);
  Extremes e;
  e.min_rows.assign(order.begin(), order.begin() + l);
  e.max_rows.assign(order.end() - l, order.end());
  for (auto r : e.min_rows) e.min_images.push_back(ds.image(r));
  for (auto r : e.max_rows) e.max_images.push_back(ds.image(r));
  return e;
}

/// One curve per class on a shared grid over [min - 3h, max + 3h] where h
/// is the largest per-class bandwidth.
inline std::vector<analysis::KdeCurve> kde_plot_data(const LatentTable& t, int dim, int grid_points = 256) {
  if (grid_points < 2) throw ContractError("kde_plot_data: grid needs at least 2 points");
  const auto groups = analysis::class_samples(t, dim);
  if (groups.empty()) throw ContractError("kde_plot_data: no samples");
  std::map<int, double> h;
  double hmax = 0;
  for (const auto& [c, v] : groups) {
    h[c] = analysis::bandwidth(v);
    hmax = std::max(hmax, h[c]);
  }
  const auto [lo, hi] = dim_range(t, dim);
  const auto grid = sweep_values(lo - 3 * hmax, hi + 3 * hmax, grid_points);
  std::vector<analysis::KdeCurve> out;
  for (const auto& [c, v] : groups) {
    auto k = analysis::kde(v, grid, h[c]);
    k.dim = dim;
    k.cls = c;
    out.push_back(std::move(k));
  }
  return out;
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

// ---------------------------------------------------------------------------
// Frame statistics

/// Area of the bounding box of pixels whose brightest channel reaches
/// `threshold`, as a fraction of the image area. Zero when nothing qualifies.
inline double foreground_bbox_area(const Image& img, float threshold = 0.3f) {
  int y0 = img.height, y1 = -1, x0 = img.width, x1 = -1;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float mx = 0;
      for (int c = 0; c < img.channels; ++c) mx = std::max(mx, img.at(y, x, c));
      if (mx >= threshold) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
    }
  if (y1 < 0) return 0.0;
  return static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)) / (static_cast<double>(img.height) * img.width);
}

/// Foreground chromaticity (per-channel share of summed intensity over
/// pixels whose brightest channel reaches `threshold`).
inline std::array<double, 3> foreground_chromaticity(const Image& img, float threshold = 0.25f) {
  if (img.channels != 3) throw ContractError("chromaticity needs 3-channel images");
  std::array<double, 3> s{0, 0, 0};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float mx = std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      if (mx < threshold) continue;
      for (int c = 0; c < 3; ++c) s[c] += img.at(y, x, c);
    }
  const double tot = s[0] + s[1] + s[2];
  if (tot <= 0) return {1.0 / 3, 1.0 / 3, 1.0 / 3};
  return {s[0] / tot, s[1] / tot, s[2] / tot};
}

/// Mean over channels of the range of foreground chromaticity across frames.
inline double color_shift(const std::vector<Image>& frames) {
  if (frames.empty()) return 0.0;
  std::array<double, 3> lo{1, 1, 1}, hi{0, 0, 0};
  for (const auto& f : frames) {
    const auto c = foreground_chromaticity(f);
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], c[k]);
      hi[k] = std::max(hi[k], c[k]);
    }
  }
  return ((hi[0] - lo[0]) + (hi[1] - lo[1]) + (hi[2] - lo[2])) / 3.0;
}

/// Ratio of the larger to the smaller foreground bounding-box area between
/// the first and last frame.
inline double bbox_area_ratio(const std::vector<Image>& frames, float threshold = 0.3f) {
  if (frames.size() < 2) return 1.0;
  const double a = foreground_bbox_area(frames.front(), threshold);
  const double b = foreground_bbox_area(frames.back(), threshold);
  const double lo = std::min(a, b), hi = std::max(a, b);
  if (hi == 0) return 1.0;
  if (lo == 0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// ---------------------------------------------------------------------------
// KDE chart rasterization

inline const std::vector<std::array<float, 3>>& chart_colors() {
  static const std::vector<std::array<float, 3>> c{{0.12f, 0.47f, 0.71f}, {1.0f, 0.5f, 0.05f}, {0.17f, 0.63f, 0.17f},
                                                   {0.84f, 0.15f, 0.16f}, {0.58f, 0.4f, 0.74f}, {0.55f, 0.34f, 0.29f},
                                                   {0.89f, 0.47f, 0.76f}, {0.5f, 0.5f, 0.5f}};
  return c;
}

/// Line chart of the curves on a white canvas, shared axes.
inline Image render_kde_chart(const std::vector<analysis::KdeCurve>& curves, int width = 320, int height = 160) {
  Image img(height, width, 3, 1.0f);
  if (curves.empty()) return img;
  double ymax = 0;
  for (const auto& k : curves)
    for (double v : k.density) ymax = std::max(ymax, v);
  if (ymax <= 0) ymax = 1;
  const int pad = 4;
  for (int x = 0; x < width; ++x)
    for (int c = 0; c < 3; ++c) img.at(height - pad, x, c) = 0.6f;
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& k = curves[ci];
    const auto& col = chart_colors()[ci % chart_colors().size()];
    const std::size_t m = k.grid.size();
    int prev_y = -1;
    for (int x = pad; x < width - pad; ++x) {
      const double pos = static_cast<double>(x - pad) / (width - 2 * pad - 1) * (m - 1);
      const auto i0 = static_cast<std::size_t>(pos);
      const auto i1 = std::min(i0 + 1, m - 1);
      const double v = k.density[i0] + (pos - i0) * (k.density[i1] - k.density[i0]);
      const int y = height - pad - static_cast<int>(std::lround(v / ymax * (height - 2 * pad)));
      const int ya = prev_y < 0 ? y : std::min(y, prev_y), yb = prev_y < 0 ? y : std::max(y, prev_y);
      for (int yy = ya; yy <= yb; ++yy)
        for (int c = 0; c < 3; ++c) img.at(std::clamp(yy, 0, height - 1), x, c) = col[c];
      prev_y = y;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Evidence files

struct EvidencePaths {
  fs::path traversal;
  fs::path extremes_min;
  fs::path extremes_max;
  fs::path kde;
};

inline EvidencePaths evidence_paths(const fs::path& run_dir, int dim) {
  const std::string j = std::to_string(dim);
  return {run_dir / "grids" / ("dim_" + j + "_traversal.png"), run_dir / "extremes" / ("dim_" + j + "_min.png"),
          run_dir / "extremes" / ("dim_" + j + "_max.png"), run_dir / "kde" / ("dim_" + j + ".json")};
}

struct EvidenceOptions {
  int steps = 8;
  TraversalMode mode = TraversalMode::Set;
  int extremes_l = 16;
  int extremes_cols = 8;
  int kde_grid_points = 256;
};

/// Writes traversal strip, extremes grids and KDE curves for one dim.
inline EvidencePaths write_evidence(const fs::path& run_dir, const vae::TrainedVae& model, const LatentTable& t,
                                    const data::LabeledImageSet& ds, int dim, const EvidenceOptions& opt = {}) {
  const auto paths = evidence_paths(run_dir, dim);
  TraversalSpec spec;
  spec.dim = dim;
  spec.steps = opt.steps;
  spec.mode = opt.mode;
  const auto trav = traverse(model, t, spec);
  const int l = std::min<int>(opt.extremes_l, static_cast<int>(t.size() / 2));
  const auto ex = extremes(t, ds, dim, l);
  json curves = json::array();
  for (const auto& k : kde_plot_data(t, dim, opt.kde_grid_points)) curves.push_back(analysis::to_json(k));
  auto save = [](const fs::path& p, const Image& img) {
    const auto bytes = encode_png(img);
    write_atomic(p, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  };
  save(paths.traversal, tile_images(trav.frames, static_cast<int>(trav.frames.size())));
  save(paths.extremes_min, tile_images(ex.min_images, opt.extremes_cols));
  save(paths.extremes_max, tile_images(ex.max_images, opt.extremes_cols));
  write_atomic(paths.kde, curves.dump());
  return paths;
}

// ---------------------------------------------------------------------------
// Report

struct VerdictView {
  std::string verdict;  // shortcut | valid | unclear
  std::string notes;
  std::string judge;
  std::string timestamp;
};

struct ReportInput {
  std::string run_id;
  fs::path run_dir;
  int k = 3;
  analysis::DimensionScoreboard scoreboard;
  std::map<int, VerdictView> verdicts;  // active verdict per dim
  json config = json::object();
  json provenance = json::object();  // artifact name -> sha256
};

struct Report {
  std::string html;
  std::string markdown;
  std::vector<int> candidates;
};

namespace detail {

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string md_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '|' || ch == '*' || ch == '_' || ch == '`') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string data_uri(const fs::path& png) {
  const auto bytes = read_file(png);
  return "data:image/png;base64," + base64_encode(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

}  // namespace detail

/// HTML (evidence embedded as data URIs) and Markdown (evidence linked by
/// relative path). Output depends only on the input; no clock reads.
inline Report assemble_report(const ReportInput& in) {
  using detail::fmt;
  const auto& sb = in.scoreboard;
  Report rep;
  rep.candidates = analysis::candidate_dims(sb, std::min(in.k, sb.d()));
  const auto top_m = analysis::rank_by_mpwd(sb, std::min(in.k, sb.d()));
  const auto top_p = sb.has_predictiveness ? analysis::rank_by_predictiveness_scores(sb, std::min(in.k, sb.d()))
                                           : std::vector<int>{};
  for (int dim : rep.candidates) {
    const auto p = evidence_paths(in.run_dir, dim);
    for (const auto& f : {p.traversal, p.extremes_min, p.extremes_max, p.kde})
      if (!fs::exists(f))
        throw AssemblyError("missing evidence for dim " + std::to_string(dim) + ": " +
                            fs::relative(f, in.run_dir).string());
  }
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s.empty() ? std::string("-") : s;
  };
  auto verdict_of = [&](int dim) -> VerdictView {
    auto it = in.verdicts.find(dim);
    return it == in.verdicts.end() ? VerdictView{"pending", "", "", ""} : it->second;
  };

  std::ostringstream md, html;
  md << "# Shortcut report: run " << in.run_id << "\n\n";
  md << "Top-" << in.k << " by MPWD: " << list(top_m) << "  \n";
  md << "Top-" << in.k << " by predictiveness: " << (sb.has_predictiveness ? list(top_p) : "not computed") << "  \n";
  md << "Median MPWD: " << fmt(sb.median_mpwd) << "; dims above " << fmt(sb.threshold_factor)
     << "x median: ";
  std::vector<int> above;
  for (const auto& r : sb.dims)
    if (r.above_threshold) above.push_back(r.dim);
  md << (above.empty() ? std::string("none") : list(above)) << "\n\n";

  md << "## Scoreboard\n\n| dim | MPWD | MPWD rank | predictiveness | pred rank | variance | above threshold |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : sb.dims)
    md << "| " << r.dim << " | " << fmt(r.mpwd) << " | " << r.mpwd_rank << " | " << fmt(r.predictiveness) << " | "
       << r.pred_rank << " | " << fmt(r.variance) << " | " << (r.above_threshold ? "yes" : "no") << " |\n";

  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Shortcut report " << in.run_id
       << "</title>\n<style>body{font-family:sans-serif;max-width:1100px;margin:auto}"
          "table{border-collapse:collapse}td,th{border:1px solid #bbb;padding:2px 6px}"
          ".pending{color:#888}.shortcut{color:#b00}.valid{color:#070}.unclear{color:#a60}"
          "img{image-rendering:pixelated;max-width:100%}</style></head><body>\n";
  html << "<h1>Shortcut report: run " << detail::html_escape(in.run_id) << "</h1>\n";
  html << "<p>Top-" << in.k << " by MPWD: " << list(top_m) << "<br>Top-" << in.k
       << " by predictiveness: " << (sb.has_predictiveness ? list(top_p) : "not computed") << "<br>Median MPWD: "
       << fmt(sb.median_mpwd) << "; dims above " << fmt(sb.threshold_factor)
       << "x median: " << (above.empty() ? std::string("none") : list(above)) << "</p>\n";
  html << "<h2>Scoreboard</h2>\n<table><tr><th>dim</th><th>MPWD</th><th>MPWD rank</th><th>predictiveness</th>"
          "<th>pred rank</th><th>variance</th><th>above threshold</th></tr>\n";
  for (const auto& r : sb.dims)
    html << "<tr><td>" << r.dim << "</td><td>" << fmt(r.mpwd) << "</td><td>" << r.mpwd_rank << "</td><td>"
         << fmt(r.predictiveness) << "</td><td>" << r.pred_rank << "</td><td>" << fmt(r.variance) << "</td><td>"
         << (r.above_threshold ? "yes" : "no") << "</td></tr>\n";
  html << "</table>\n";

  md << "\n## Candidates\n";
  html << "<h2>Candidates</h2>\n";
  for (int dim : rep.candidates) {
    const auto& r = sb.at(dim);
    const auto v = verdict_of(dim);
    const auto p = evidence_paths(in.run_dir, dim);
    std::vector<analysis::KdeCurve> curves;
    for (const auto& c : json::parse(read_file(p.kde))) curves.push_back(analysis::kde_curve_from_json(c));
    const fs::path chart = in.run_dir / "kde" / ("dim_" + std::to_string(dim) + ".png");
    const auto chart_png = encode_png(render_kde_chart(curves));
    auto rel = [&](const fs::path& f) { return fs::relative(f, in.run_dir).generic_string(); };

    md << "\n### Dimension " << dim << "\n\n";
    md << "- MPWD " << fmt(r.mpwd) << " (rank " << r.mpwd_rank << "), predictiveness " << fmt(r.predictiveness)
       << " (rank " << r.pred_rank << "), range [" << fmt(r.z_min) << ", " << fmt(r.z_max) << "]\n";
    md << "- Verdict: **" << v.verdict << "**";
    if (!v.judge.empty()) md << " by " << detail::md_escape(v.judge);
    if (!v.notes.empty()) md << ": " << detail::md_escape(v.notes);
    md << "\n\n";
    md << "Traversal:\n\n![traversal](" << rel(p.traversal) << ")\n\n";
    md << "Lowest values:\n\n![min](" << rel(p.extremes_min) << ")\n\nHighest values:\n\n![max](" << rel(p.extremes_max)
       << ")\n\nClass densities:\n\n![kde](" << rel(chart) << ")\n\n";
    md << "| class | bandwidth |\n|---|---|\n";
    for (const auto& c : curves) md << "| " << c.cls << " | " << fmt(c.h) << " |\n";

    html << "<h3>Dimension " << dim << "</h3>\n<p>MPWD " << fmt(r.mpwd) << " (rank " << r.mpwd_rank
         << "), predictiveness " << fmt(r.predictiveness) << " (rank " << r.pred_rank << "), range [" << fmt(r.z_min)
         << ", " << fmt(r.z_max) << "]<br>Verdict: <b class=\"" << detail::html_escape(v.verdict) << "\">"
         << detail::html_escape(v.verdict) << "</b>";
    if (!v.judge.empty()) html << " by " << detail::html_escape(v.judge);
    if (!v.notes.empty()) html << ": " << detail::html_escape(v.notes);
    html << "</p>\n<p>Traversal<br><img alt=\"traversal\" src=\"" << detail::data_uri(p.traversal) << "\"></p>\n";
    html << "<p>Lowest values<br><img alt=\"min\" src=\"" << detail::data_uri(p.extremes_min) << "\"></p>\n";
    html << "<p>Highest values<br><img alt=\"max\" src=\"" << detail::data_uri(p.extremes_max) << "\"></p>\n";
    html << "<p>Class densities (";
    for (std::size_t i = 0; i < curves.size(); ++i) {
      const auto& col = chart_colors()[i % chart_colors().size()];
      char hex[8];
      std::snprintf(hex, sizeof(hex), "#%02x%02x%02x", static_cast<int>(col[0] * 255), static_cast<int>(col[1] * 255),
                    static_cast<int>(col[2] * 255));
      html << (i ? ", " : "") << "<span style=\"color:" << hex << "\">class " << curves[i].cls << "</span>";
    }
    html << ")<br><img alt=\"kde\" src=\"data:image/png;base64," << base64_encode(chart_png) << "\"></p>\n";
  }

  md << "\n## Configuration\n\n```json\n" << in.config.dump(2) << "\n```\n";
  md << "\n## Provenance\n\n| artifact | sha256 |\n|---|---|\n";
  for (const auto& [name, h] : in.provenance.items()) md << "| " << name << " | " << h.get<std::string>() << " |\n";
  html << "<h2>Configuration</h2>\n<pre>" << detail::html_escape(in.config.dump(2)) << "</pre>\n";
  html << "<h2>Provenance</h2>\n<table><tr><th>artifact</th><th>sha256</th></tr>\n";
  for (const auto& [name, h] : in.provenance.items())
    html << "<tr><td>" << detail::html_escape(name) << "</td><td><code>" << h.get<std::string>() << "</code></td></tr>\n";
  html << "</table>\n</body></html>\n";
  rep.markdown = md.str();
  rep.html = html.str();
  return rep;
}

}  // namespace latentscout::visual
