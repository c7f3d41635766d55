#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <unistd.h>

#include "checks.hpp"
#include "latentscout/visual.hpp"

namespace ls = latentscout;
namespace visual = latentscout::visual;

namespace {

ls::data::LabeledImageSet small_set(int n, std::uint64_t seed) {
  ls::data::SyntheticConfig c;
  c.n_samples = n;
  c.n_classes = 3;
  c.palette = ls::data::default_palette();
  c.palette.resize(3);
  c.seed = seed;
  return ls::data::generate_colored_shortcut(c);
}

std::size_t arg_peak(const ls::analysis::KdeCurve& k) {
  return static_cast<std::size_t>(std::max_element(k.density.begin(), k.density.end()) - k.density.begin());
}

}  // namespace

TEST(Sweep, LinearlySpacedValues) {
  EXPECT_EQ(visual::sweep_values(-1, 1, 3), (std::vector<double>{-1, 0, 1}));
  const auto v = visual::sweep_values(-3.75, 3.64, 8);
  EXPECT_EQ(v.front(), -3.75);
  EXPECT_NEAR(v.back(), 3.64, 1e-12);
  const double step = v[1] - v[0];
  for (std::size_t t = 1; t + 1 < v.size(); ++t) EXPECT_NEAR(v[t + 1] - v[t], step, 1e-12);
  EXPECT_THROW(visual::sweep_values(0, 1, 1), ls::ContractError);
  EXPECT_THROW(visual::sweep_values(0, INFINITY, 4), ls::ContractError);
}

TEST(Traverse, IdentityCases) {
  const auto o = checks::prop_traversal_identity();
  EXPECT_TRUE(o.ok) << o.detail;
}

TEST(Traverse, DefaultsToMedianInstanceAndDatasetRange) {
  const auto model = checks::tiny_vae(3, 3, 1);
  const auto ds = small_set(9, 1);
  const auto t = ls::analysis::encode_dataset(model, ds);
  visual::TraversalSpec spec;
  spec.dim = 2;
  spec.steps = 5;
  const auto tr = visual::traverse(model, t, spec);
  EXPECT_EQ(tr.instance_id, t.ids[visual::median_instance(t, 2)]);
  const auto col = t.column(2);
  EXPECT_EQ(tr.values.front(), *std::min_element(col.begin(), col.end()));
  EXPECT_NEAR(tr.values.back(), *std::max_element(col.begin(), col.end()), 1e-12);
  EXPECT_EQ(tr.frames.size(), 5u);
  // other coordinates stay at the instance's mu
  auto z = t.row_mu(visual::median_instance(t, 2));
  z[1] = tr.values[3];
  EXPECT_EQ(model.decode(z).pixels, tr.frames[3].pixels);
}

TEST(Traverse, UnknownInstanceIsNotFound) {
  const auto model = checks::tiny_vae(3, 3, 1);
  const auto t = ls::analysis::encode_dataset(model, small_set(4, 1));
  visual::TraversalSpec spec;
  spec.instance_id = "nope";
  EXPECT_THROW(visual::traverse(model, t, spec), ls::NotFoundError);
  spec.instance_id.clear();
  spec.dim = 4;
  EXPECT_THROW(visual::traverse(model, t, spec), ls::ContractError);
}

TEST(Extremes, ArgsortEnds) {
  const auto ds = small_set(3, 2);
  auto t = checks::table_from_columns({{3, 1, 2}}, ds.labels);
  const auto e = visual::extremes(t, ds, 1, 1);
  EXPECT_EQ(e.min_rows, (std::vector<std::size_t>{1}));
  EXPECT_EQ(e.max_rows, (std::vector<std::size_t>{0}));
  EXPECT_EQ(e.min_images[0].pixels, ds.image(1).pixels);
  EXPECT_THROW(visual::extremes(t, ds, 1, 2), ls::ContractError);
  EXPECT_THROW(visual::extremes(t, ds, 1, 0), ls::ContractError);
}

TEST(Extremes, HalfSplitsAtMedian) {
  const auto ds = small_set(10, 3);
  std::mt19937_64 rng(1);
  auto col = checks::draw(rng, 10);
  const auto t = checks::table_from_columns({col}, ds.labels);
  const auto e = visual::extremes(t, ds, 1, 5);
  std::set<std::size_t> all(e.min_rows.begin(), e.min_rows.end());
  all.insert(e.max_rows.begin(), e.max_rows.end());
  EXPECT_EQ(all.size(), 10u);
  double lo_max = -1e9, hi_min = 1e9;
  for (auto r : e.min_rows) lo_max = std::max(lo_max, col[r]);
  for (auto r : e.max_rows) hi_min = std::min(hi_min, col[r]);
  EXPECT_LT(lo_max, hi_min);
}

TEST(KdePlot, SeparatedClassesHaveDistantModes) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<double> col;
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) {
    const int y = 1 + i % 2;
    col.push_back(n01(rng) + (y == 2 ? 10.0 : 0.0));
    labels.push_back(y);
  }
  const auto curves = visual::kde_plot_data(checks::table_from_columns({col}, labels), 1);
  ASSERT_EQ(curves.size(), 2u);
  EXPECT_EQ(curves[0].grid, curves[1].grid);
  const double sep = std::abs(curves[0].grid[arg_peak(curves[0])] - curves[1].grid[arg_peak(curves[1])]);
  EXPECT_GT(sep, 4 * std::max(curves[0].h, curves[1].h));
}

TEST(KdePlot, SingleClassIntegratesToOne) {
  std::mt19937_64 rng(5);
  const auto col = checks::draw(rng, 200);
  const auto curves = visual::kde_plot_data(checks::table_from_columns({col}, std::vector<int>(200, 1)), 1);
  ASSERT_EQ(curves.size(), 1u);
  EXPECT_NEAR(visual::trapezoid(curves[0].grid, curves[0].density), 1.0, 1e-3);
}

TEST(KdePlot, IdenticalClassesGiveIdenticalCurves) {
  std::mt19937_64 rng(6);
  const auto half = checks::draw(rng, 50);
  std::vector<double> col = half;
  col.insert(col.end(), half.begin(), half.end());
  std::vector<int> labels(50, 1);
  labels.insert(labels.end(), 50, 2);
  const auto curves = visual::kde_plot_data(checks::table_from_columns({col}, labels), 1);
  EXPECT_EQ(curves[0].density, curves[1].density);
}

TEST(Metrics, ColorShiftAndBboxRatio) {
  ls::Image red(8, 8, 3), blue(8, 8, 3), small(8, 8, 3), big(8, 8, 3);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) red.at(y, x, 0) = 1, blue.at(y, x, 2) = 1;
  small.at(4, 4, 0) = 1;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x) big.at(y, x, 0) = 1;
  EXPECT_EQ(visual::color_shift({red, red}), 0.0);
  EXPECT_GT(visual::color_shift({red, blue}), 0.5);
  EXPECT_DOUBLE_EQ(visual::foreground_bbox_area(big), 0.5);
  EXPECT_DOUBLE_EQ(visual::bbox_area_ratio({small, big}), 32.0);
}

class ReportTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = ls::fs::temp_directory_path() / ("ls_report_" + std::to_string(::getpid()) + "_" +
                                            testing::UnitTest::GetInstance()->current_test_info()->name());
    ls::fs::remove_all(dir_);
    ls::fs::create_directories(dir_);
    model_ = std::make_unique<ls::vae::TrainedVae>(checks::tiny_vae(8, 3, 3));
    ds_ = small_set(24, 4);
    t_ = ls::analysis::encode_dataset(*model_, ds_);
    in_.run_id = "r1";
    in_.run_dir = dir_;
    in_.k = 3;
    in_.scoreboard = ls::analysis::score_dimensions(t_);
    // predictiveness top-3 chosen disjoint from the MPWD top-3
    const auto top_m = ls::analysis::rank_by_mpwd(in_.scoreboard, 3);
    std::vector<double> pred(8, 0.0);
    double v = 10;
    for (int j = 1; j <= 8 && v > 7; ++j)
      if (std::find(top_m.begin(), top_m.end(), j) == top_m.end()) pred[j - 1] = v--;
    ls::analysis::set_predictiveness(in_.scoreboard, pred);
    in_.config = {{"seed", 1}};
    in_.provenance = {{"checkpoint.bin", std::string(64, 'a')}};
  }
  void TearDown() override { ls::fs::remove_all(dir_); }
  void write_all() {
    for (int dim : ls::analysis::candidate_dims(in_.scoreboard, 3)) visual::write_evidence(dir_, *model_, t_, ds_, dim);
  }
  ls::fs::path dir_;
  std::unique_ptr<ls::vae::TrainedVae> model_;
  ls::data::LabeledImageSet ds_;
  ls::LatentTable t_;
  visual::ReportInput in_;
};

TEST_F(ReportTest, SectionsForUnionOfTopK) {
  write_all();
  const auto rep = visual::assemble_report(in_);
  EXPECT_EQ(rep.candidates.size(), 6u);
  EXPECT_EQ(rep.candidates, ls::analysis::candidate_dims(in_.scoreboard, 3));
  int sections = 0;
  for (std::size_t p = 0; (p = rep.markdown.find("### Dimension ", p)) != std::string::npos; ++p) ++sections;
  EXPECT_EQ(sections, 6);
  for (int dim : rep.candidates) {
    EXPECT_NE(rep.markdown.find("### Dimension " + std::to_string(dim) + "\n"), std::string::npos);
    EXPECT_NE(rep.html.find("<h3>Dimension " + std::to_string(dim) + "</h3>"), std::string::npos);
  }
  EXPECT_NE(rep.html.find("data:image/png;base64,"), std::string::npos);
  EXPECT_NE(rep.markdown.find(std::string(64, 'a')), std::string::npos);
}

TEST_F(ReportTest, NoVerdictsMeansAllPending) {
  write_all();
  const auto rep = visual::assemble_report(in_);
  int pending = 0;
  for (std::size_t p = 0; (p = rep.markdown.find("Verdict: **pending**", p)) != std::string::npos; ++p) ++pending;
  EXPECT_EQ(pending, 6);
  in_.verdicts[rep.candidates[0]] = {"shortcut", "color <sweep>", "ana", "2026-01-01T00:00:00Z"};
  const auto with = visual::assemble_report(in_);
  EXPECT_NE(with.markdown.find("Verdict: **shortcut** by ana"), std::string::npos);
  EXPECT_NE(with.html.find("color &lt;sweep&gt;"), std::string::npos);
}

TEST_F(ReportTest, RegenerationIsByteIdentical) {
  write_all();
  const auto a = visual::assemble_report(in_), b = visual::assemble_report(in_);
  EXPECT_EQ(a.markdown, b.markdown);
  EXPECT_EQ(a.html, b.html);
}

TEST_F(ReportTest, MissingEvidenceNamesDim) {
  write_all();
  const int dim = ls::analysis::candidate_dims(in_.scoreboard, 3)[2];
  ls::fs::remove(visual::evidence_paths(dir_, dim).extremes_max);
  try {
    visual::assemble_report(in_);
    FAIL();
  } catch (const ls::AssemblyError& e) {
    EXPECT_NE(std::string(e.what()).find("dim " + std::to_string(dim)), std::string::npos);
  }
}

TEST_F(ReportTest, EvidenceFilesResolveInsideRunDir) {
  const auto p = visual::write_evidence(dir_, *model_, t_, ds_, 1);
  for (const auto& f : {p.traversal, p.extremes_min, p.extremes_max, p.kde}) {
    EXPECT_TRUE(ls::fs::exists(f));
    EXPECT_EQ(ls::fs::relative(f, dir_).string().rfind("..", 0), std::string::npos);
  }
  const auto curves = nlohmann::json::parse(ls::read_file(p.kde));
  EXPECT_EQ(curves.size(), 3u);
  EXPECT_TRUE(curves[0].contains("density"));
}
