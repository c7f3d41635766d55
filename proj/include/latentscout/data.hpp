#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "latentscout/archive.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/idx.hpp"
#include "latentscout/image.hpp"

namespace latentscout::data {

using Rgb = std::array<float, 3>;

/// N images of identical shape with labels in 1..C and unique ids.
struct LabeledImageSet {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> images;  // N x h x w x c, values in [0,1]
  std::vector<int> labels;    // 1-based class index
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  std::optional<std::vector<std::uint8_t>> shortcut_mask;
  json provenance = json::object();  // generator config / source description

  std::size_t size() const { return labels.size(); }
  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t image_stride() const { return static_cast<std::size_t>(height) * width * channels; }

  Image image(std::size_t i) const {
    Image img(height, width, channels);
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(i * image_stride()), image_stride(),
                img.pixels.begin());
    return img;
  }

  void push_back(const Image& img, int label, std::string id, std::optional<bool> shortcut = std::nullopt) {
    if (size() == 0 && images.empty()) {
      height = img.height;
      width = img.width;
      channels = img.channels;
    }
    if (img.height != height || img.width != width || img.channels != channels)
      throw ContractError("image shape does not match dataset shape");
    images.insert(images.end(), img.pixels.begin(), img.pixels.end());
    labels.push_back(label);
    ids.push_back(std::move(id));
    if (shortcut) {
      if (!shortcut_mask) shortcut_mask.emplace();
      shortcut_mask->push_back(*shortcut ? 1 : 0);
    }
  }

  double shortcut_rate() const {
    if (!shortcut_mask || shortcut_mask->empty()) return 0.0;
    return std::accumulate(shortcut_mask->begin(), shortcut_mask->end(), 0.0) /
           static_cast<double>(shortcut_mask->size());
  }

  /// Throws ContractError when any dataset invariant is violated.
  void validate() const {
    if (images.size() != size() * image_stride() || ids.size() != size())
      throw ContractError("dataset arrays have inconsistent lengths");
    if (shortcut_mask && shortcut_mask->size() != size())
      throw ContractError("shortcut mask length differs from sample count");
    for (float v : images)
      if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("pixel value outside [0,1]");
    for (int l : labels)
      if (l < 1 || l > n_classes()) throw ContractError("label outside 1..C");
    std::set<std::string> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size()) throw ContractError("sample ids are not unique");
  }
};

inline LabeledImageSet subset(const LabeledImageSet& ds, const std::vector<std::size_t>& indices) {
  LabeledImageSet out;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.class_names = ds.class_names;
  out.provenance = ds.provenance;
  out.images.reserve(indices.size() * ds.image_stride());
  if (ds.shortcut_mask) out.shortcut_mask.emplace();
  for (auto i : indices) {
    if (i >= ds.size()) throw ContractError("subset index out of range");
    const auto* p = ds.images.data() + i * ds.image_stride();
    out.images.insert(out.images.end(), p, p + ds.image_stride());
    out.labels.push_back(ds.labels[i]);
    out.ids.push_back(ds.ids[i]);
    if (ds.shortcut_mask) out.shortcut_mask->push_back((*ds.shortcut_mask)[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Glyph rendering

enum class Shape { Circle, Square, Triangle, Cross, Star, Diamond, Ring, Hexagon };

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "cross",
                                              "star",   "diamond", "ring",   "hexagon"};
  return names;
}

inline Shape shape_from_name(const std::string& name) {
  const auto& names = shape_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown glyph shape '" + name + "'");
  return static_cast<Shape>(it - names.begin());
}

namespace detail {

inline bool inside_polygon(double u, double v, const std::vector<std::array<double, 2>>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > v) != (b[1] > v) && u < (b[0] - a[0]) * (v - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

inline const std::vector<std::array<double, 2>>& star_polygon() {
  static const auto poly = [] {
    std::vector<std::array<double, 2>> p;
    for (int k = 0; k < 10; ++k) {
      const double r = (k % 2 == 0) ? 1.0 : 0.45;
      const double a = -M_PI / 2 + k * M_PI / 5;
      p.push_back({r * std::cos(a), r * std::sin(a)});
    }
    return p;
  }();
  return poly;
}

inline const std::vector<std::array<double, 2>>& hexagon_polygon() {
  static const auto poly = [] {
    std::vector<std::array<double, 2>> p;
    for (int k = 0; k < 6; ++k) p.push_back({std::cos(k * M_PI / 3), std::sin(k * M_PI / 3)});
    return p;
  }();
  return poly;
}

}  // namespace detail

/// Membership test in glyph coordinates, (u, v) in [-1, 1]^2, v pointing down.
inline bool glyph_contains(Shape shape, double u, double v) {
  switch (shape) {
    case Shape::Circle: return u * u + v * v <= 1.0;
    case Shape::Square: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case Shape::Triangle: return v <= 1.0 && v >= -1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case Shape::Cross:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case Shape::Star: return detail::inside_polygon(u, v, detail::star_polygon());
    case Shape::Diamond: return std::abs(u) + std::abs(v) <= 1.0;
    case Shape::Ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case Shape::Hexagon: return detail::inside_polygon(u, v, detail::hexagon_polygon());
  }
  return false;
}

/// Anti-aliased (4x4 supersampled) glyph composited over `img`. `radius` is
/// half the glyph's bounding-box side in pixels.
inline void draw_glyph(Image& img, Shape shape, double cx, double cy, double radius, const Rgb& color) {
  constexpr int ss = 4;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)) - 1);
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)) + 1);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)) - 1);
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)) + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double py = y + (sy + 0.5) / ss, px = x + (sx + 0.5) / ss;
          if (glyph_contains(shape, (px - cx) / radius, (py - cy) / radius)) ++hits;
        }
      if (hits == 0) continue;
      const float alpha = static_cast<float>(hits) / (ss * ss);
      for (int c = 0; c < img.channels; ++c) {
        const float col = img.channels == 3 ? color[c] : (color[0] + color[1] + color[2]) / 3.0f;
        img.at(y, x, c) = img.at(y, x, c) * (1 - alpha) + col * alpha;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generators

struct SyntheticConfig {
  int n_samples = 1000;
  int image_size = 32;
  int n_classes = 5;
  double p_corr = 0.995;
  std::vector<Rgb> palette;        // colored variant
  std::vector<double> zoom_levels; // zoom variant
  std::uint64_t seed = 0;
  std::vector<std::string> shapes; // per-class glyph shapes; empty means the variant default
  double position_jitter = 0.08;   // max center offset as a fraction of the image side
  double min_scale = 0.55;         // colored variant glyph scale range
  double max_scale = 0.75;
  Rgb glyph_color{0.95f, 0.85f, 0.2f};  // zoom variant
  Rgb background{0.0f, 0.0f, 0.0f};
};

inline std::vector<Rgb> default_palette() {
  return {Rgb{0.9f, 0.1f, 0.1f}, Rgb{0.1f, 0.85f, 0.1f}, Rgb{0.15f, 0.3f, 0.95f},
          Rgb{0.95f, 0.9f, 0.1f}, Rgb{0.1f, 0.9f, 0.9f}, Rgb{0.9f, 0.2f, 0.9f},
          Rgb{1.0f, 0.55f, 0.1f}, Rgb{0.6f, 0.6f, 0.6f}};
}

inline json to_json(const SyntheticConfig& c) {
  json j;
  j["n_samples"] = c.n_samples;
  j["image_size"] = c.image_size;
  j["n_classes"] = c.n_classes;
  j["p_corr"] = c.p_corr;
  j["palette"] = c.palette;
  j["zoom_levels"] = c.zoom_levels;
  j["seed"] = c.seed;
  j["shapes"] = c.shapes;
  j["position_jitter"] = c.position_jitter;
  j["min_scale"] = c.min_scale;
  j["max_scale"] = c.max_scale;
  j["glyph_color"] = c.glyph_color;
  j["background"] = c.background;
  return j;
}

namespace detail {

inline std::vector<Shape> class_shapes(const SyntheticConfig& cfg, const std::vector<std::string>& fallback) {
  const auto& names = cfg.shapes.empty() ? fallback : cfg.shapes;
  if (static_cast<int>(names.size()) < cfg.n_classes)
    throw ConfigError("need one glyph shape per class: " + std::to_string(cfg.n_classes) + " classes, " +
                      std::to_string(names.size()) + " shapes");
  std::vector<Shape> out;
  for (int c = 0; c < cfg.n_classes; ++c) out.push_back(shape_from_name(names[c]));
  return out;
}

inline void check_common(const SyntheticConfig& cfg) {
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be positive");
  if (cfg.image_size < 8) throw ConfigError("image_size must be at least 8");
  if (cfg.n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (!(cfg.p_corr >= 0.0 && cfg.p_corr <= 1.0)) throw ConfigError("p_corr must lie in [0,1]");
}

inline void finalize(Image& img) {
  for (auto& v : img.pixels) v = quantize8(v);
}

inline std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

}  // namespace detail

/// Class c's glyph is drawn in palette[c] with probability p_corr, otherwise in
/// a uniformly drawn palette color (which may coincide with palette[c]).
/// shortcut_mask records whether the realized color equals the class color.
inline LabeledImageSet generate_colored_shortcut(const SyntheticConfig& cfg) {
  detail::check_common(cfg);
  if (static_cast<int>(cfg.palette.size()) != cfg.n_classes)
    throw ConfigError("palette has " + std::to_string(cfg.palette.size()) + " colors but n_classes is " +
                      std::to_string(cfg.n_classes));
  if (!(cfg.min_scale > 0 && cfg.min_scale <= cfg.max_scale && cfg.max_scale <= 1.0))
    throw ConfigError("glyph scale range must satisfy 0 < min_scale <= max_scale <= 1");
  const auto shapes = detail::class_shapes(cfg, shape_names());
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_color(0, cfg.n_classes - 1);

  LabeledImageSet ds;
  for (int c = 0; c < cfg.n_classes; ++c) ds.class_names.push_back(shape_names()[static_cast<int>(shapes[c])]);
  const double size = cfg.image_size;
  for (int i = 0; i < cfg.n_samples; ++i) {
    const int cls = i % cfg.n_classes;
    const bool correlated = unit(rng) < cfg.p_corr;
    const int random_color = any_color(rng);
    const int color = correlated ? cls : random_color;
    const double scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * unit(rng);
    const double radius = scale * size / 2.0;
    const double max_off = std::min(cfg.position_jitter * size, std::max(0.0, size / 2.0 - radius));
    const double dx = (2 * unit(rng) - 1) * max_off;
    const double dy = (2 * unit(rng) - 1) * max_off;
    Image img(cfg.image_size, cfg.image_size, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = cfg.background[ch];
    draw_glyph(img, shapes[cls], size / 2 + dx, size / 2 + dy, radius, cfg.palette[color]);
    detail::finalize(img);
    ds.push_back(img, cls + 1, detail::sample_id(i), color == cls);
  }
  ds.provenance = {{"generator", "colored_shortcut"}, {"config", to_json(cfg)}};
  return ds;
}

/// Class c's glyph is rendered at zoom_levels[c] (fraction of the image side)
/// with probability p_corr, otherwise at a uniformly drawn class's level.
inline LabeledImageSet generate_zoom_shortcut(const SyntheticConfig& cfg) {
  detail::check_common(cfg);
  if (static_cast<int>(cfg.zoom_levels.size()) != cfg.n_classes)
    throw ConfigError("zoom_levels has " + std::to_string(cfg.zoom_levels.size()) + " entries but n_classes is " +
                      std::to_string(cfg.n_classes));
  for (double z : cfg.zoom_levels)
    if (!(z > 0.0 && z <= 1.0)) throw ConfigError("zoom level " + std::to_string(z) + " outside (0,1]");
  const auto shapes = detail::class_shapes(cfg, {"circle", "hexagon", "square", "triangle", "diamond", "star",
                                                 "cross", "ring"});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_level(0, cfg.n_classes - 1);

  LabeledImageSet ds;
  for (int c = 0; c < cfg.n_classes; ++c) ds.class_names.push_back(shape_names()[static_cast<int>(shapes[c])]);
  const double size = cfg.image_size;
  for (int i = 0; i < cfg.n_samples; ++i) {
    const int cls = i % cfg.n_classes;
    const bool correlated = unit(rng) < cfg.p_corr;
    const int random_level = any_level(rng);
    const int level = correlated ? cls : random_level;
    const double radius = cfg.zoom_levels[level] * size / 2.0;
    const double max_off = std::min(cfg.position_jitter * size, std::max(0.0, size / 2.0 - radius));
    const double dx = (2 * unit(rng) - 1) * max_off;
    const double dy = (2 * unit(rng) - 1) * max_off;
    Image img(cfg.image_size, cfg.image_size, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = cfg.background[ch];
    draw_glyph(img, shapes[cls], size / 2 + dx, size / 2 + dy, radius, cfg.glyph_color);
    detail::finalize(img);
    ds.push_back(img, cls + 1, detail::sample_id(i), level == cls);
  }
  ds.provenance = {{"generator", "zoom_shortcut"}, {"config", to_json(cfg)}};
  return ds;
}

// ---------------------------------------------------------------------------
// Ingestion

/// One subdirectory per class (sorted by name); PNG/JPEG files resized to
/// image_size x image_size with bilinear resampling. No augmentation.
inline LabeledImageSet load_image_folder(const fs::path& root, int image_size) {
  if (!fs::is_directory(root)) throw IngestionError("not a directory: " + root.string());
  if (image_size < 1) throw ConfigError("image_size must be positive");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IngestionError("no class subdirectories in " + root.string());

  LabeledImageSet ds;
  ds.height = ds.width = image_size;
  ds.channels = 3;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    const auto& dir = class_dirs[c];
    ds.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& f : files) {
      Image img;
      if (!read_image(f, img)) {
        std::cerr << "warning: skipping unreadable image " << f.string() << "\n";
        continue;
      }
      if (img.height != image_size || img.width != image_size) img = resize_bilinear(img, image_size, image_size);
      for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
      ds.push_back(img, static_cast<int>(c) + 1, dir.filename().string() + "/" + f.filename().string());
      ++loaded;
    }
    if (loaded == 0) throw IngestionError("class directory has no readable images: " + dir.string());
  }
  ds.provenance = {{"source", "image_folder"}, {"path", root.string()}, {"image_size", image_size}};
  return ds;
}

/// Builds a grayscale dataset from an IDX image tensor (N x h x w, u8) and an
/// IDX label vector. Labels are remapped to 1..C in ascending order of value.
inline LabeledImageSet from_idx(const idx::IdxArray& images, const idx::IdxArray& labels) {
  if (images.shape.size() != 3) throw ContractError("IDX images must have rank 3 (N x rows x cols)");
  if (labels.shape.size() != 1 || labels.shape[0] != images.shape[0])
    throw ContractError("IDX labels must be a vector with one entry per image");
  const auto px = images.as_double();
  const auto lv = labels.as_double();
  std::set<long> distinct;
  for (double v : lv) distinct.insert(std::lround(v));
  std::map<long, int> remap;
  LabeledImageSet ds;
  for (long v : distinct) {
    remap[v] = static_cast<int>(remap.size()) + 1;
    ds.class_names.push_back(std::to_string(v));
  }
  const double scale = images.type == idx::ElementType::U8 ? 255.0 : 1.0;
  const int h = static_cast<int>(images.shape[1]), w = static_cast<int>(images.shape[2]);
  for (std::size_t i = 0; i < images.shape[0]; ++i) {
    Image img(h, w, 1);
    for (int k = 0; k < h * w; ++k)
      img.pixels[k] = std::clamp(static_cast<float>(px[i * h * w + k] / scale), 0.0f, 1.0f);
    ds.push_back(img, remap[std::lround(lv[i])], detail::sample_id(i));
  }
  ds.provenance = {{"source", "idx"}};
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct DatasetSplit {
  LabeledImageSet train, val, test;
  SplitIndices indices;
};

/// Stratified, seeded split. Per class, counts follow largest-remainder
/// rounding of n_c * ratio; every split with a nonzero ratio receives at least
/// one sample of every class. Indices inside each split are ascending.
inline SplitIndices split_indices(const std::vector<int>& labels, const std::array<double, 3>& ratios,
                                  std::uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  for (double r : ratios)
    if (r < 0) throw ConfigError("split ratios must be nonnegative");
  const int active = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> dst{&out.train, &out.val, &out.test};
  for (auto& [label, members] : by_class) {
    const std::size_t n = members.size();
    if (static_cast<int>(n) < active)
      throw StratificationError("class " + std::to_string(label) + " has " + std::to_string(n) +
                                " samples, fewer than the " + std::to_string(active) + " splits");
    std::shuffle(members.begin(), members.end(), rng);
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double target = n * ratios[s];
      counts[s] = static_cast<std::size_t>(std::floor(target + 1e-9));
      rem[s] = target - counts[s];
      assigned += counts[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[s] > rem[best]) best = s;
      ++counts[best];
      rem[best] = -1;
      ++assigned;
    }
    for (int s = 0; s < 3; ++s) {
      if (ratios[s] > 0 && counts[s] == 0) {
        int donor = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[donor];
        ++counts[s];
      }
    }
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < counts[s]; ++k) dst[s]->push_back(members[pos++]);
  }
  for (auto* v : dst) std::sort(v->begin(), v->end());
  return out;
}

inline DatasetSplit split(const LabeledImageSet& ds, const std::array<double, 3>& ratios, std::uint64_t seed) {
  DatasetSplit out;
  out.indices = split_indices(ds.labels, ratios, seed);
  out.train = subset(ds, out.indices.train);
  out.val = subset(ds, out.indices.val);
  out.test = subset(ds, out.indices.test);
  return out;
}

// ---------------------------------------------------------------------------
// Archive I/O. Pixels are stored as 8-bit; generated sets are quantized to
// multiples of 1/255 at creation so the round trip is exact for them.

inline constexpr int kDatasetSchemaVersion = 1;

inline Archive to_archive(const LabeledImageSet& ds) {
  Archive a;
  a.manifest = {{"kind", "dataset"},
                {"schema_version", kDatasetSchemaVersion},
                {"n", ds.size()},
                {"height", ds.height},
                {"width", ds.width},
                {"channels", ds.channels},
                {"class_names", ds.class_names},
                {"ids", ds.ids},
                {"provenance", ds.provenance},
                {"has_shortcut_mask", ds.shortcut_mask.has_value()}};
  std::vector<std::uint8_t> px(ds.images.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(ds.images[i], 0.0f, 1.0f) * 255.0f));
  a.put<std::uint8_t>("images",
                      {ds.size(), static_cast<std::uint64_t>(ds.height), static_cast<std::uint64_t>(ds.width),
                       static_cast<std::uint64_t>(ds.channels)},
                      px);
  std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
  a.put<std::int32_t>("labels", {ds.size()}, labels);
  if (ds.shortcut_mask) a.put<std::uint8_t>("shortcut_mask", {ds.size()}, *ds.shortcut_mask);
  return a;
}

inline LabeledImageSet from_archive(const Archive& a) {
  LabeledImageSet ds;
  ds.height = a.manifest.at("height");
  ds.width = a.manifest.at("width");
  ds.channels = a.manifest.at("channels");
  ds.class_names = a.manifest.at("class_names").get<std::vector<std::string>>();
  ds.ids = a.manifest.at("ids").get<std::vector<std::string>>();
  ds.provenance = a.manifest.value("provenance", json::object());
  const auto px = a.get<std::uint8_t>("images");
  ds.images.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) ds.images[i] = px[i] / 255.0f;
  const auto labels = a.get<std::int32_t>("labels");
  ds.labels.assign(labels.begin(), labels.end());
  if (a.has("shortcut_mask")) ds.shortcut_mask = a.get<std::uint8_t>("shortcut_mask");
  ds.validate();
  return ds;
}

inline void save_dataset(const fs::path& path, const LabeledImageSet& ds) { to_archive(ds).save(path); }

inline LabeledImageSet load_dataset(const fs::path& path) {
  return from_archive(Archive::load(path, "dataset", kDatasetSchemaVersion));
}

}  // namespace latentscout::data
