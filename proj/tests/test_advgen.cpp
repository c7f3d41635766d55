#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <unistd.h>

#include "latentscout/advgen.hpp"
#include "latentscout/visual.hpp"

namespace ls = latentscout;
namespace adv = latentscout::advgen;

namespace {

ls::data::LabeledImageSet centered_glyphs(int n, int size, double level, std::uint64_t seed) {
  ls::data::SyntheticConfig c;
  c.n_samples = n;
  c.image_size = size;
  c.n_classes = 2;
  c.zoom_levels = {level, level};
  c.position_jitter = 0.0;
  c.seed = seed;
  return ls::data::generate_zoom_shortcut(c);
}

std::size_t foreground_count(const ls::Image& img, float thr = 0.3f) {
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float mx = 0;
      for (int c = 0; c < img.channels; ++c) mx = std::max(mx, img.at(y, x, c));
      n += mx >= thr;
    }
  return n;
}

float max_abs_diff(const ls::Image& a, const ls::Image& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

ls::data::LabeledImageSet tiny_split(const ls::data::LabeledImageSet& ds, std::size_t from, std::size_t to) {
  std::vector<std::size_t> idx;
  for (std::size_t i = from; i < to; ++i) idx.push_back(i);
  return ls::data::subset(ds, idx);
}

adv::CnnConfig tiny_cnn(int epochs) {
  adv::CnnConfig c;
  c.channels = {4, 4, 4, 4, 4};
  c.max_epochs = epochs;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(CropAttack, CentralHalfUpscaled) {
  ls::Image x(128, 128, 3);
  for (int y = 0; y < 128; ++y)
    for (int xx = 0; xx < 128; ++xx) x.at(y, xx, 0) = (y >= 32 && y < 96 && xx >= 32 && xx < 96) ? 1.0f : 0.0f;
  const auto out = adv::crop_zoom_attack(x, {});
  EXPECT_EQ(out.height, 128);
  EXPECT_EQ(out.width, 128);
  // the central 64x64 block was all foreground, so the crop is too
  for (float v : out.pixels) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_EQ(foreground_count(out), 128u * 128u);
}

TEST(CropAttack, FactorOneIsIdentity) {
  const auto ds = centered_glyphs(4, 64, 0.6, 1);
  adv::AttackConfig cfg;
  cfg.crop_factor = 1.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_LE(max_abs_diff(adv::crop_zoom_attack(ds.image(i), cfg), ds.image(i)), 1.0f / 255.0f);
}

TEST(CropAttack, TooSmallCropIsContractError) {
  adv::AttackConfig cfg;
  cfg.crop_factor = 0.2;
  EXPECT_THROW(adv::crop_zoom_attack(ls::Image(32, 32, 3), cfg), ls::ContractError);
  cfg.crop_factor = 0.25;
  EXPECT_NO_THROW(adv::crop_zoom_attack(ls::Image(32, 32, 3), cfg));
  cfg.crop_factor = 0.0;
  EXPECT_THROW(adv::crop_zoom_attack(ls::Image(32, 32, 3), cfg), ls::ConfigError);
}

TEST(CropAttack, ForegroundAreaGrowsByInverseSquare) {
  const auto ds = centered_glyphs(20, 64, 0.35, 2);
  const adv::AttackConfig cfg;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto before = ls::visual::foreground_bbox_area(ds.image(i));
    const auto after = ls::visual::foreground_bbox_area(adv::crop_zoom_attack(ds.image(i), cfg));
    EXPECT_GE(after / before, 0.8 / (cfg.crop_factor * cfg.crop_factor)) << i;
  }
}

TEST(CropAttack, CenteredGlyphStaysInFrame) {
  const auto ds = centered_glyphs(50, 64, 0.45, 3);
  const adv::AttackConfig cfg;
  const int lo = (64 - 32) / 2, hi = lo + 32;
  std::size_t total = 0, inside = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        float mx = 0;
        for (int c = 0; c < 3; ++c) mx = std::max(mx, img.at(y, x, c));
        if (mx < 0.3f) continue;
        ++total;
        inside += y >= lo && y < hi && x >= lo && x < hi;
      }
  }
  ASSERT_GT(total, 0u);
  EXPECT_GE(static_cast<double>(inside) / static_cast<double>(total), 0.99);
}

TEST(PadAttack, ContentOccupiesCentralTwoThirds) {
  ls::Image x(128, 128, 3);
  for (auto& v : x.pixels) v = 1.0f;
  adv::AttackConfig cfg;
  cfg.pad_pixels = 32;
  cfg.fill = ls::data::Rgb{0, 0, 0};
  const auto out = adv::pad_zoom_attack(x, cfg);
  EXPECT_EQ(out.height, 128);
  EXPECT_NEAR(ls::visual::foreground_bbox_area(out, 0.5f), (2.0 / 3) * (2.0 / 3), 0.02);
  EXPECT_NEAR(out.at(64, 64, 0), 1.0f, 1e-6);
  EXPECT_NEAR(out.at(2, 64, 0), 0.0f, 1e-6);
}

TEST(PadAttack, DefaultPadIsQuarterSize) {
  ls::Image x(32, 32, 3);
  EXPECT_EQ(adv::AttackConfig{}.pad_for(32), 8);
  EXPECT_EQ(adv::pad_image(x, adv::AttackConfig{}.pad_for(32), std::nullopt).height, 48);
}

TEST(PadAttack, ZeroPadIsIdentity) {
  const auto ds = centered_glyphs(4, 32, 0.6, 4);
  adv::AttackConfig cfg;
  cfg.pad_pixels = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_LE(max_abs_diff(adv::pad_zoom_attack(ds.image(i), cfg), ds.image(i)), 1.0f / 255.0f);
}

TEST(PadAttack, EdgeReplicateBorder) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  ls::Image x(6, 5, 3);
  for (auto& v : x.pixels) v = u(rng);
  const int pad = 3;
  const auto p = adv::pad_image(x, pad, std::nullopt);
  for (int y = 0; y < p.height; ++y)
    for (int xx = 0; xx < p.width; ++xx)
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(p.at(y, xx, c), x.at(std::clamp(y - pad, 0, 5), std::clamp(xx - pad, 0, 4), c));
}

TEST(PadAttack, WholeGlyphRemains) {
  const auto ds = centered_glyphs(20, 32, 0.9, 6);
  adv::AttackConfig cfg;
  cfg.fill = ls::data::Rgb{0, 0, 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    const auto padded = adv::pad_image(img, cfg.pad_for(32), cfg.fill);
    EXPECT_EQ(foreground_count(padded), foreground_count(img));
  }
}

TEST(Attack, TransformsAreDeterministicAndLabelPreserving) {
  const auto ds = centered_glyphs(10, 32, 0.5, 7);
  for (auto kind : {adv::AttackKind::Crop, adv::AttackKind::Pad}) {
    const auto a = adv::attack_dataset(ds, kind, {}), b = adv::attack_dataset(ds, kind, {});
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, ds.labels);
    EXPECT_EQ(a.ids, ds.ids);
  }
  EXPECT_THROW(adv::attack_kind_from_string("rotate"), ls::ConfigError);
}

TEST(Attack, ConfigJsonAndHash) {
  adv::AttackConfig c;
  EXPECT_EQ(adv::to_json(c)["fill"], "edge-replicate");
  c.fill = ls::data::Rgb{0.5f, 0.5f, 0.5f};
  const auto back = adv::attack_config_from_json(adv::to_json(c));
  EXPECT_EQ(adv::config_hash(back), adv::config_hash(c));
  EXPECT_NE(adv::config_hash(back), adv::config_hash(adv::AttackConfig{}));
  EXPECT_THROW(adv::attack_config_from_json({{"fill", "grey"}}), ls::ConfigError);
}

TEST(Evaluate, MatchesLoopOracle) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> cls(1, 3);
  std::vector<int> y(300), cp(300), ap(300);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = cls(rng), cp[i] = cls(rng), ap[i] = cls(rng);
  const auto r = adv::evaluate_predictions(y, cp, ap);
  ASSERT_EQ(r.classes.size(), 3u);
  for (const auto& c : r.classes) {
    int n = 0, ch = 0, ah = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c.label) ++n, ch += cp[i] == y[i], ah += ap[i] == y[i];
    EXPECT_EQ(c.n, static_cast<std::size_t>(n));
    EXPECT_EQ(c.clean_accuracy, static_cast<double>(ch) / n);
    EXPECT_EQ(c.adversarial_accuracy, static_cast<double>(ah) / n);
    EXPECT_EQ(c.delta, c.adversarial_accuracy - c.clean_accuracy);
  }
  EXPECT_THROW(adv::evaluate_predictions(y, cp, {1}), ls::ContractError);
}

TEST(ReferenceCnn, OneEpochDeterministicAndZeroSelfDelta) {
  const auto ds = centered_glyphs(48, 32, 0.6, 9);
  const auto tr = tiny_split(ds, 0, 32), va = tiny_split(ds, 32, 48);
  const auto clf = adv::train_reference_cnn(tr, va, tiny_cnn(1));
  EXPECT_EQ(clf.history().size(), 1u);
  EXPECT_EQ(clf.predict(va), clf.predict(va));
  const auto r = adv::evaluate_attack(clf, va, va);
  for (const auto& c : r.classes) EXPECT_EQ(c.delta, 0.0);
  auto shifted = va;
  shifted.labels[0] = shifted.labels[0] == 1 ? 2 : 1;
  EXPECT_THROW(adv::evaluate_attack(clf, va, shifted), ls::ContractError);

  const auto path = ls::fs::temp_directory_path() / ("ls_cnn_" + std::to_string(::getpid()) + ".bin");
  clf.save(path);
  const auto back = adv::ReferenceCnn::load(path);
  ls::fs::remove(path);
  EXPECT_EQ(back.predict(va), clf.predict(va));
}

TEST(ReferenceCnn, LearnsZoomShortcut) {
  ls::data::SyntheticConfig c;
  c.n_samples = 400;
  c.image_size = 32;
  c.n_classes = 2;
  c.zoom_levels = {0.9, 0.3};
  c.seed = 10;
  const auto ds = ls::data::generate_zoom_shortcut(c);
  const auto sp = ls::data::split(ds, {0.7, 0.15, 0.15}, 1);
  auto cfg = tiny_cnn(15);
  cfg.channels = {8, 8, 8, 8, 8};
  cfg.learning_rate = 0.005;
  const auto clf = adv::train_reference_cnn(sp.train, sp.val, cfg);
  const auto r = adv::evaluate_attack(clf, sp.test, sp.test);
  EXPECT_GE(r.clean_accuracy, 0.9);
}
