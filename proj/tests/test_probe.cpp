#include <gtest/gtest.h>

#include <random>

#include "checks.hpp"
#include "latentscout/analysis.hpp"
#include "latentscout/probe.hpp"

namespace ls = latentscout;
namespace probe = latentscout::probe;

namespace {

// dim 1 carries the class with a margin, the rest is noise
ls::LatentTable separable(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> cols(d, std::vector<double>(n));
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = 1 + i % 2;
    cols[0][i] = (labels[i] == 1 ? -2.0 : 2.0) + 0.3 * n01(rng);
    for (int j = 1; j < d; ++j) cols[j][i] = n01(rng);
  }
  return checks::table_from_columns(cols, labels);
}

probe::ProbeHead head(int d, int C, std::vector<double> theta) {
  probe::ProbeHead h;
  h.d = d;
  h.n_classes = C;
  h.theta = std::move(theta);
  h.bias.assign(C, 0.0);
  return h;
}

}  // namespace

TEST(Probe, SeparableDimensionReachesFullAccuracy) {
  const auto tr = separable(400, 4, 1), va = separable(200, 4, 2);
  probe::ProbeConfig cfg;
  cfg.seed = 3;
  const auto h = probe::train_probe(tr, va, cfg);
  EXPECT_GE(h.val_accuracy, 0.99);
  EXPECT_EQ(probe::rank_by_predictiveness(h, 1), (std::vector<int>{1}));
}

TEST(Probe, ShuffledLabelsStayAtChance) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> coin(1, 2);
  auto make = [&](int n) {
    std::vector<std::vector<double>> cols(4, std::vector<double>(n));
    for (auto& c : cols)
      for (auto& v : c) v = n01(rng);
    std::vector<int> labels(n);
    for (auto& y : labels) y = coin(rng);
    return checks::table_from_columns(cols, labels);
  };
  const auto tr = make(2000), va = make(2000);
  const auto h = probe::train_probe(tr, va, {});
  EXPECT_NEAR(h.val_accuracy, 0.5, 0.05);
}

TEST(Probe, EarlyStoppingWithinPatience) {
  const auto tr = separable(200, 3, 5), va = separable(100, 3, 6);
  probe::ProbeConfig cfg;
  cfg.patience = 10;
  cfg.max_epochs = 400;
  cfg.learning_rate = 0.05;
  const auto h = probe::train_probe(tr, va, cfg);
  EXPECT_GE(h.best_epoch, 1);
  EXPECT_LE(h.epochs, h.best_epoch + cfg.patience);
  if (h.epochs < cfg.max_epochs) {
    EXPECT_EQ(h.epochs, h.best_epoch + cfg.patience);
  }
}

TEST(Probe, SingleClassIsContractError) {
  auto t = checks::table_from_columns({{0.1, 0.2, 0.3}}, {1, 1, 1});
  EXPECT_THROW(probe::train_probe(t, t, {}), ls::ContractError);
}

TEST(Probe, TrainingLeavesEncoderUntouched) {
  const auto model = checks::tiny_vae(4, 3, 9);
  const auto before = model.parameter_digest();
  ls::data::SyntheticConfig c;
  c.n_samples = 20;
  c.n_classes = 2;
  c.palette = ls::data::default_palette();
  c.palette.resize(2);
  const auto t = ls::analysis::encode_dataset(model, ls::data::generate_colored_shortcut(c));
  probe::train_probe(t, t, {});
  EXPECT_EQ(model.parameter_digest(), before);
}

TEST(Predictiveness, Examples) {
  const auto h = head(2, 2, {0.5, -1.5, 0.0, 0.0});
  EXPECT_EQ(probe::predictiveness(h, 1), 2.0);
  EXPECT_EQ(probe::predictiveness(h, 2), 0.0);
  EXPECT_THROW(probe::predictiveness(h, 3), ls::ContractError);
  auto b = h;
  b.bias = {100.0, -100.0};
  EXPECT_EQ(probe::predictiveness_all(b), probe::predictiveness_all(h));
}

TEST(Predictiveness, ColumnNegationAndPermutation) {
  const auto o = checks::prop_predictiveness_invariance();
  EXPECT_TRUE(o.ok) << o.detail;
  auto h = head(3, 2, {0.3, -0.7, 1.2, 0.4, -0.1, 0.0});
  const auto base = probe::predictiveness_all(h);
  for (int j = 0; j < 3; ++j) h.theta[j * 2 + 1] *= -1;
  EXPECT_EQ(probe::predictiveness_all(h), base);
}

TEST(Predictiveness, RankingAndTies) {
  EXPECT_EQ(ls::analysis::top_k({3, 1, 2}, 1), (std::vector<int>{1}));
  const auto h = head(3, 1, {1.0, 2.0, 2.0});
  EXPECT_EQ(probe::rank_by_predictiveness(h, 2), (std::vector<int>{2, 3}));
}

TEST(ProbeAccuracy, ZeroHeadPredictsFirstClass) {
  const auto t = checks::table_from_columns({{1, -1, 2, -2, 3, -3, 0.5}}, {1, 2, 1, 2, 2, 2, 2});
  const auto h = head(1, 2, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(probe::probe_accuracy(h, t), 2.0 / 7.0);
}

TEST(ProbeAccuracy, MatchesLoopOracle) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> cls(1, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 4, C = 3, n = 50;
    std::vector<std::vector<double>> cols(d, std::vector<double>(n));
    for (auto& c : cols)
      for (auto& v : c) v = n01(rng);
    std::vector<int> labels(n);
    for (auto& y : labels) y = cls(rng);
    const auto t = checks::table_from_columns(cols, labels);
    std::vector<double> theta(d * C);
    for (auto& w : theta) w = n01(rng);
    auto h = head(d, C, theta);
    for (auto& b : h.bias) b = n01(rng);
    int hit = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> logit(C);
      for (int c = 0; c < C; ++c) {
        logit[c] = h.bias[c];
        for (int j = 0; j < d; ++j) logit[c] += theta[j * C + c] * cols[j][i];
      }
      int arg = 0;
      for (int c = 1; c < C; ++c)
        if (logit[c] > logit[arg]) arg = c;
      hit += arg + 1 == labels[i];
    }
    EXPECT_EQ(probe::probe_accuracy(h, t), hit / static_cast<double>(n));
  }
}

TEST(ProbeHead, JsonRoundTrip) {
  const auto tr = separable(100, 3, 8);
  const auto h = probe::train_probe(tr, tr, {});
  const auto back = probe::probe_from_json(probe::to_json(h));
  EXPECT_EQ(back.theta, h.theta);
  EXPECT_EQ(back.bias, h.bias);
  EXPECT_EQ(back.best_epoch, h.best_epoch);
  EXPECT_EQ(back.val_accuracy, h.val_accuracy);
}
