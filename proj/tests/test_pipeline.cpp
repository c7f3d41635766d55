#include <gtest/gtest.h>

#include <unistd.h>

#include "checks.hpp"
#include "latentscout/pipeline.hpp"

namespace ls = latentscout;
namespace pl = latentscout::pipeline;
namespace rs = latentscout::runstore;

namespace {

class PipelineTest : public testing::Test {
 protected:
  void SetUp() override {
    root_ = ls::fs::temp_directory_path() / ("ls_pipe_" + std::to_string(::getpid()) + "_" +
                                             testing::UnitTest::GetInstance()->current_test_info()->name());
    ls::fs::remove_all(root_);
    ls::fs::create_directories(root_);
    store_ = std::make_unique<rs::RunStore>(root_);
    id_ = store_->create_run(json::object(), ls::config::to_json(ls::config::from_json(checks::tiny_pipeline_json())))
              .run_id;
  }
  void TearDown() override { ls::fs::remove_all(root_); }

  template <class F>
  std::string state_error(F f) {
    try {
      f();
    } catch (const ls::StateError& e) {
      return e.what();
    }
    return "";
  }

  using json = nlohmann::json;
  ls::fs::path root_;
  std::unique_ptr<rs::RunStore> store_;
  std::string id_;
};

}  // namespace

TEST_F(PipelineTest, StagesRequireTheirPredecessor) {
  EXPECT_NE(state_error([&] { pl::stage_train(*store_, id_); }).find("'dataset'"), std::string::npos);
  pl::stage_dataset(*store_, id_);
  EXPECT_NE(state_error([&] { pl::stage_analyze(*store_, id_); }).find("'train'"), std::string::npos);
  EXPECT_NE(state_error([&] { pl::stage_probe(*store_, id_); }).find("'analyze'"), std::string::npos);
  EXPECT_NE(state_error([&] { pl::stage_evidence(*store_, id_); }).find("'analyze'"), std::string::npos);
  EXPECT_NE(state_error([&] { pl::stage_report(*store_, id_); }).find("'evidence'"), std::string::npos);
  EXPECT_EQ(store_->get_run(id_).status, rs::RunStatus::Training);
}

TEST_F(PipelineTest, FullRunProducesArtifacts) {
  const auto res = pl::run_pipeline(*store_, id_);
  ASSERT_EQ(res.size(), 6u);
  for (const auto& r : res) EXPECT_FALSE(r.skipped) << r.stage;
  const auto dir = store_->run_dir(id_);
  for (const char* f : {"manifest.json", "checkpoint.bin", "latents.csv", "scores.json", "probe.json", "report.html",
                        "report.md", "dataset.lsar", "split.json", "train_log.jsonl"})
    EXPECT_TRUE(ls::fs::exists(dir / f)) << f;
  const auto m = store_->get_run(id_);
  EXPECT_EQ(m.status, rs::RunStatus::Analyzed);
  const auto sb = pl::load_scoreboard(dir, 3.0);
  EXPECT_TRUE(sb.has_predictiveness);
  for (int j : ls::analysis::candidate_dims(sb, 3)) {
    const auto p = ls::visual::evidence_paths(dir, j);
    EXPECT_TRUE(ls::fs::exists(p.traversal));
    EXPECT_TRUE(ls::fs::exists(p.kde));
    EXPECT_TRUE(ls::fs::exists(dir / "kde" / ("dim_" + std::to_string(j) + ".png")));
  }
  // latents cover exactly the training split
  EXPECT_EQ(ls::load_latent_table(dir / "latents.csv").size(), m.stages["dataset"]["detail"]["train"].get<std::size_t>());
}

TEST_F(PipelineTest, RerunSkipsUnlessForced) {
  pl::run_pipeline(*store_, id_);
  const auto report = ls::read_file(store_->run_dir(id_) / "report.md");
  for (const auto& r : pl::run_pipeline(*store_, id_)) EXPECT_TRUE(r.skipped) << r.stage;
  pl::StageOptions force;
  force.force = true;
  const auto again = pl::run_pipeline(*store_, id_, force);
  for (const auto& r : again) EXPECT_FALSE(r.skipped) << r.stage;
  // same seed and config give the same report
  EXPECT_EQ(ls::read_file(store_->run_dir(id_) / "report.md"), report);
}

TEST_F(PipelineTest, MissingArtifactNamesStage) {
  pl::run_pipeline(*store_, id_);
  ls::fs::remove(store_->run_dir(id_) / "latents.csv");
  const auto msg = state_error([&] { pl::stage_evidence(*store_, id_); });
  EXPECT_NE(msg.find("latents.csv"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'analyze'"), std::string::npos) << msg;
  // rerunning the stage restores it
  pl::stage_analyze(*store_, id_);
  EXPECT_TRUE(ls::fs::exists(store_->run_dir(id_) / "latents.csv"));
}

TEST_F(PipelineTest, VerdictsFlowIntoReport) {
  pl::run_pipeline(*store_, id_);
  const auto dims = pl::report_input(*store_, id_).scoreboard.dims;
  const int dim = ls::analysis::candidate_dims(pl::load_scoreboard(store_->run_dir(id_), 3.0), 3)[0];
  store_->record_verdict(id_, dim, 4, rs::Verdict::Shortcut, "hue", "ana");
  EXPECT_TRUE(pl::refresh_report(*store_, id_));
  const auto md = ls::read_file(store_->run_dir(id_) / "report.md");
  EXPECT_NE(md.find("Verdict: **shortcut** by ana"), std::string::npos);
  EXPECT_EQ(store_->get_run(id_).status, rs::RunStatus::Judged);
  EXPECT_EQ(dims.size(), 4u);
}

TEST_F(PipelineTest, AttackStageWritesReport) {
  pl::stage_dataset(*store_, id_);
  const auto r = pl::stage_attack(*store_, id_);
  const auto rep = nlohmann::json::parse(ls::read_file(store_->run_dir(id_) / "attack_report.json"));
  EXPECT_EQ(rep["attack"], "crop");
  EXPECT_EQ(rep["config_hash"].get<std::string>().size(), 64u);
  for (const auto& c : rep["classes"]) EXPECT_GT(c["n"].get<int>(), 0);
  EXPECT_TRUE(pl::stage_attack(*store_, id_).skipped);
  EXPECT_FALSE(r.skipped);
}

TEST(ResolveDims, Specs) {
  ls::analysis::DimensionScoreboard sb = ls::analysis::score_dimensions(
      checks::table_from_columns({{0, 1, 2, 3}, {0, 0, 5, 5}, {1, 1, 1, 2}}, {1, 1, 2, 2}));
  EXPECT_EQ(pl::resolve_dims("all", sb, 1), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(pl::resolve_dims("3,1,3", sb, 1), (std::vector<int>{1, 3}));
  EXPECT_EQ(pl::resolve_dims("top", sb, 1), (std::vector<int>{2}));
  EXPECT_THROW(pl::resolve_dims("one", sb, 1), ls::ConfigError);
  EXPECT_THROW(pl::resolve_dims("4", sb, 1), ls::ContractError);
}
