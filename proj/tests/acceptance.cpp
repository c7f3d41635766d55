// Acceptance runner: one PASS/FAIL line per primary criterion.
//
//   acceptance                 all criteria
//   acceptance --criterion 3   one criterion
//
// Criteria listed in kKnownFailures are expected to fail; the
// process exits nonzero only when an outcome differs from expectation.

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>

#include "checks.hpp"
#include "latentscout/advgen.hpp"
#include "latentscout/analysis.hpp"
#include "latentscout/probe.hpp"
#include "latentscout/visual.hpp"

namespace ls = latentscout;
using checks::num;
using checks::Outcome;

namespace {

// Tolerances and sizes pinned here.
constexpr int kSamples = 10000;
constexpr int kImage = 32;
constexpr int kMaxEpochs = 30;
constexpr double kColorFactor = 3.0;      // color shift vs median dim
constexpr double kBboxRatio = 1.5;        // zoom traversal
constexpr double kCleanAccuracy = 0.95;   // reference CNN
constexpr double kAttackDrop = 0.15;      // distant class accuracy drop
constexpr double kNullFactor = 3.0;       // MPWD vs median
constexpr std::uint64_t kSeed = 7;
constexpr double kNearLevel = 0.9, kDistantLevel = 0.3;

// Outcomes analysed in the decisions ledger.
const std::set<int> kKnownFailures = {6};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Trained {
  ls::data::DatasetSplit split;
  ls::vae::TrainedVae model;
  ls::LatentTable train_latents;
  ls::analysis::DimensionScoreboard scoreboard;
  ls::probe::ProbeHead head;
};

Trained train_and_score(const ls::data::LabeledImageSet& ds, int d, double beta, const std::string& tag) {
  auto sp = ls::data::split(ds, {0.8, 0.1, 0.1}, kSeed);
  ls::vae::TrainConfig cfg;
  cfg.latent_dim = d;
  cfg.beta = beta;
  cfg.image_size = kImage;
  cfg.max_epochs = kMaxEpochs;
  cfg.seed = kSeed;
  cfg.encoder_channels = {16, 32, 64, 128, 256};
  cfg.decoder_channels = {256, 128, 64, 32, 16};
  const auto t0 = std::chrono::steady_clock::now();
  auto model = ls::vae::train(sp.train, sp.val, cfg, [&](const ls::vae::EpochRecord& r) {
    std::cerr << "  [" << tag << "] epoch " << r.epoch << " val_loss " << num(r.val_loss) << " ("
              << static_cast<int>(seconds_since(t0)) << " s)\n";
  });
  auto lt = ls::analysis::encode_dataset(model, sp.train);
  const auto lv = ls::analysis::encode_dataset(model, sp.val);
  auto sb = ls::analysis::score_dimensions(lt);
  ls::probe::ProbeConfig pc;
  pc.seed = kSeed + 1;
  auto head = ls::probe::train_probe(lt, lv, pc);
  ls::analysis::set_predictiveness(sb, ls::probe::predictiveness_all(head));
  return {std::move(sp), std::move(model), std::move(lt), std::move(sb), std::move(head)};
}

std::vector<ls::Image> traversal_frames(const Trained& t, int dim) {
  ls::visual::TraversalSpec spec;
  spec.dim = dim;
  return ls::visual::traverse(t.model, t.train_latents, spec).frames;
}

std::string ranks(const ls::analysis::DimensionRecord& r) {
  return "dim " + std::to_string(r.dim) + " (MPWD rank " + std::to_string(r.mpwd_rank) + ", pred rank " +
         std::to_string(r.pred_rank) + ")";
}

ls::data::SyntheticConfig colored_config(double p_corr) {
  ls::data::SyntheticConfig c;
  c.n_samples = kSamples;
  c.image_size = kImage;
  c.n_classes = 5;
  c.palette = ls::data::default_palette();
  c.palette.resize(5);
  c.p_corr = p_corr;
  c.seed = kSeed;
  return c;
}

ls::data::SyntheticConfig zoom_config(int n) {
  ls::data::SyntheticConfig c;
  c.n_samples = n;
  c.image_size = kImage;
  c.n_classes = 2;
  c.zoom_levels = {kNearLevel, kDistantLevel};
  c.p_corr = 0.95;
  c.seed = kSeed;
  return c;
}

Outcome color_shortcut() {
  Outcome o{"planted color shortcut ranks top-3 by MPWD and predictiveness"};
  const auto t = train_and_score(ls::data::generate_colored_shortcut(colored_config(0.995)), 16, 2.5, "color");
  std::vector<double> shift;
  for (int j = 1; j <= 16; ++j) shift.push_back(ls::visual::color_shift(traversal_frames(t, j)));
  auto sorted = shift;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[7] + sorted[8]);
  std::vector<int> color_dims;
  for (int j = 1; j <= 16; ++j)
    if (shift[j - 1] > kColorFactor * median) color_dims.push_back(j);
  bool hit = false;
  std::string dims;
  for (int j : color_dims) {
    const auto& r = t.scoreboard.at(j);
    hit = hit || (r.mpwd_rank <= 3 && r.pred_rank <= 3);
    dims += (dims.empty() ? "" : ", ") + ranks(r) + " shift " + num(shift[j - 1]);
  }
  if (color_dims.empty()) o.fail("no dimension sweeps color");
  else if (!hit) o.fail("no color dimension is top-3 by both scores");
  o.note("median shift " + num(median) + "; color dims: " + dims + "; probe val accuracy " + num(t.head.val_accuracy));
  return o;
}

Outcome zoom_shortcut() {
  Outcome o{"planted zoom shortcut: top-3 dim changes bbox area >= 1.5x"};
  const auto t = train_and_score(ls::data::generate_zoom_shortcut(zoom_config(kSamples)), 10, 3.0, "zoom");
  const auto cand = ls::analysis::candidate_dims(t.scoreboard, 3);
  double best = 0;
  std::string dims;
  for (int j : cand) {
    const double ratio = ls::visual::bbox_area_ratio(traversal_frames(t, j));
    best = std::max(best, ratio);
    dims += (dims.empty() ? "" : ", ") + ranks(t.scoreboard.at(j)) + " ratio " + num(ratio);
  }
  if (best < kBboxRatio) o.fail("largest bbox ratio " + num(best));
  o.note(dims);
  return o;
}

Outcome zoom_attack() {
  Outcome o{"crop attack drops distant-class accuracy by >= 15 points"};
  const auto ds = ls::data::generate_zoom_shortcut(zoom_config(4000));
  const auto sp = ls::data::split(ds, {0.8, 0.1, 0.1}, kSeed);
  ls::advgen::CnnConfig cfg;
  cfg.max_epochs = 15;
  cfg.seed = kSeed + 2;
  const auto t0 = std::chrono::steady_clock::now();
  const auto clf = ls::advgen::train_reference_cnn(sp.train, sp.val, cfg, [&](const ls::advgen::CnnEpoch& e) {
    std::cerr << "  [cnn] epoch " << e.epoch << " val_accuracy " << num(e.val_accuracy) << " ("
              << static_cast<int>(seconds_since(t0)) << " s)\n";
  });
  // crop the distant glyph up to the near class's scale
  ls::advgen::AttackConfig ac;
  ac.crop_factor = kDistantLevel / kNearLevel;
  const auto attacked = ls::advgen::attack_dataset(sp.test, ls::advgen::AttackKind::Crop, ac);
  const auto rep = ls::advgen::evaluate_attack(clf, sp.test, attacked, ac);
  // class 2 is rendered at the smaller zoom level
  const auto& distant = rep.classes.at(1);
  if (rep.clean_accuracy < kCleanAccuracy) o.fail("clean accuracy " + num(rep.clean_accuracy));
  if (-distant.delta < kAttackDrop) o.fail("distant class drop " + num(-distant.delta));
  o.note("crop factor " + num(ac.crop_factor) + "; clean accuracy " + num(rep.clean_accuracy) + "; distant class " +
         num(distant.clean_accuracy) + " -> " + num(distant.adversarial_accuracy) + "; near class " + num(rep.classes.at(0).clean_accuracy) + " -> " +
         num(rep.classes.at(0).adversarial_accuracy));
  return o;
}

Outcome suite(const std::string& name, const std::vector<Outcome>& parts) {
  Outcome o{name};
  for (const auto& p : parts) {
    if (!p.ok) o.fail(p.name + ": " + p.detail);
    std::cerr << "  " << (p.ok ? "ok   " : "FAIL ") << p.name << ": " << p.detail << "\n";
  }
  o.note(std::to_string(parts.size()) + " checks");
  return o;
}

Outcome null_control() {
  Outcome o{"null control: no dimension above 3x median MPWD"};
  const auto t = train_and_score(ls::data::generate_colored_shortcut(colored_config(1.0 / 5)), 16, 2.5, "null");
  std::string above;
  for (const auto& r : t.scoreboard.dims)
    if (r.mpwd > kNullFactor * t.scoreboard.median_mpwd)
      above += (above.empty() ? "" : ", ") + std::to_string(r.dim) + " (" + num(r.mpwd) + ")";
  bool flagged = false;
  for (const auto& r : t.scoreboard.dims) flagged = flagged || r.above_threshold;
  if (!above.empty()) o.fail("dims above threshold: " + above);
  if (!above.empty() != flagged) o.fail("scoreboard flags disagree with the threshold");
  o.note("median MPWD " + num(t.scoreboard.median_mpwd));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, color_shortcut},
      {2, zoom_shortcut},
      {3, zoom_attack},
      {4, [] { return suite("math oracles", checks::oracle_suite()); }},
      {5, [] { return suite("metric and property suites", checks::property_suite()); }},
      {6, null_control},
  };
  int unexpected = 0, passed = 0, ran = 0;
  for (const auto& [id, run] : criteria) {
    if (only && id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.name = "criterion " + std::to_string(id);
      o.fail(std::string("error: ") + e.what());
    }
    const bool known = kKnownFailures.count(id) > 0;
    ++ran;
    passed += o.ok;
    if (o.ok == known) ++unexpected;
    std::cout << (o.ok ? "PASS" : "FAIL") << " [" << id << "] " << o.name << " | " << o.detail << " | "
              << static_cast<int>(seconds_since(t0)) << " s" << (known && !o.ok ? " | known failure" : "")
              << (known && o.ok ? " | unexpected pass, update kKnownFailures" : "") << std::endl;
  }
  std::cout << passed << "/" << ran << " criteria passed" << std::endl;
  return unexpected == 0 ? 0 : 1;
}
