#include <gtest/gtest.h>

#include <thread>

#include <unistd.h>

#include "checks.hpp"
#include "latentscout/pipeline.hpp"
#include "latentscout/server.hpp"

namespace ls = latentscout;
namespace rs = latentscout::runstore;
using json = nlohmann::json;

namespace {

class ServerTest : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new ls::fs::path(ls::fs::temp_directory_path() / ("ls_srv_" + std::to_string(::getpid())));
    ls::fs::remove_all(*root_);
    ls::fs::create_directories(*root_ / "empty");
    ls::fs::create_directories(*root_ / "full");
    rs::RunStore store(*root_ / "full");
    pending_ = new std::string(
        store.create_run(json::object(), ls::config::to_json(ls::config::from_json(checks::tiny_pipeline_json()))).run_id);
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    run_ = new std::string(
        store.create_run(json::object(), ls::config::to_json(ls::config::from_json(checks::tiny_pipeline_json()))).run_id);
    ls::pipeline::run_pipeline(store, *run_);
  }
  static void TearDownTestSuite() {
    ls::fs::remove_all(*root_);
    delete root_;
    delete run_;
    delete pending_;
  }

  void start(const ls::fs::path& dir) {
    server_ = std::make_unique<ls::server::ApiServer>(dir);
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->listen(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  static ls::fs::path* root_;
  static std::string* run_;
  static std::string* pending_;
  std::unique_ptr<ls::server::ApiServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

ls::fs::path* ServerTest::root_ = nullptr;
std::string* ServerTest::run_ = nullptr;
std::string* ServerTest::pending_ = nullptr;

}  // namespace

TEST_F(ServerTest, EmptyStoreListsNothing) {
  start(*root_ / "empty");
  const auto r = client_->Get("/api/runs");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body), json::array());
}

TEST_F(ServerTest, ListAndDetail) {
  start(*root_ / "full");
  const auto list = json::parse(client_->Get("/api/runs")->body);
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0]["run_id"], *run_);
  const auto r = client_->Get("/api/runs/" + *run_);
  ASSERT_EQ(r->status, 200);
  const auto body = json::parse(r->body);
  EXPECT_EQ(body["manifest"]["run_id"], *run_);
  EXPECT_EQ(body["scoreboard"].size(), 4u);
  EXPECT_EQ(body["k"], 3);
  EXPECT_FALSE(body["candidates"].empty());
}

TEST_F(ServerTest, UnknownRunIs404) {
  start(*root_ / "full");
  EXPECT_EQ(client_->Get("/api/runs/nope")->status, 404);
  EXPECT_EQ(post("/api/runs/nope/decode", {{"z", {0, 0, 0, 0}}})->status, 404);
  EXPECT_EQ(client_->Get("/api/elsewhere")->status, 404);
}

TEST_F(ServerTest, DecodeReturnsDeterministicPng) {
  start(*root_ / "full");
  const auto a = post("/api/runs/" + *run_ + "/decode", {{"z", {0.1, -0.4, 1.5, 0.0}}});
  const auto b = post("/api/runs/" + *run_ + "/decode", {{"z", {0.1, -0.4, 1.5, 0.0}}});
  ASSERT_EQ(a->status, 200);
  EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(a->body.substr(1, 3), "PNG");
  EXPECT_EQ(a->body, b->body);
  const auto model = ls::vae::TrainedVae::load(ls::fs::path(*root_) / "full" / "runs" / *run_ / "checkpoint.bin");
  const auto png = ls::encode_png(model.decode({0.1, -0.4, 1.5, 0.0}));
  EXPECT_EQ(a->body, std::string(png.begin(), png.end()));
}

TEST_F(ServerTest, DecodeWrongLengthIs422NamingD) {
  start(*root_ / "full");
  const auto r = post("/api/runs/" + *run_ + "/decode", {{"z", {1.0, 2.0}}});
  ASSERT_EQ(r->status, 422);
  EXPECT_NE(json::parse(r->body)["error"].get<std::string>().find("expected d=4"), std::string::npos);
  EXPECT_EQ(client_->Post("/api/runs/" + *run_ + "/decode", "{not json", "application/json")->status, 422);
}

TEST_F(ServerTest, UnanalyzedRunIs409) {
  start(*root_ / "full");
  EXPECT_EQ(post("/api/runs/" + *pending_ + "/decode", {{"z", {0, 0, 0, 0}}})->status, 409);
  EXPECT_EQ(post("/api/runs/" + *pending_ + "/dims/1/verdict", {{"verdict", "valid"}})->status, 409);
  EXPECT_EQ(client_->Get("/api/runs/" + *pending_ + "/dims/1/traversal")->status, 409);
}

TEST_F(ServerTest, TraversalExtremesKde) {
  start(*root_ / "full");
  const auto t = client_->Get("/api/runs/" + *run_ + "/dims/2/traversal?steps=5");
  ASSERT_EQ(t->status, 200);
  const auto tj = json::parse(t->body);
  EXPECT_EQ(tj["frames"].size(), 5u);
  EXPECT_EQ(tj["values"].size(), 5u);
  EXPECT_EQ(client_->Get("/api/runs/" + *run_ + "/dims/9/traversal")->status, 422);
  EXPECT_EQ(client_->Get("/api/runs/" + *run_ + "/dims/2/traversal?steps=1")->status, 422);

  const auto e = json::parse(client_->Get("/api/runs/" + *run_ + "/dims/2/extremes")->body);
  EXPECT_EQ(e["min"].size(), 4u);
  EXPECT_EQ(e["max"].size(), 4u);
  EXPECT_LE(e["min"][3]["value"].get<double>(), e["max"][0]["value"].get<double>());

  const auto k = client_->Get("/api/runs/" + *run_ + "/dims/2/kde");
  ASSERT_EQ(k->status, 200);
  EXPECT_EQ(json::parse(k->body).size(), 3u);
}

TEST_F(ServerTest, VerdictRoundTripAndReport) {
  start(*root_ / "full");
  const auto r = post("/api/runs/" + *run_ + "/dims/3/verdict", {{"verdict", "shortcut"}, {"notes", "hue"}, {"judge", "ana"}});
  ASSERT_EQ(r->status, 201);
  EXPECT_EQ(json::parse(r->body)["verdict"], "shortcut");
  const auto detail = json::parse(client_->Get("/api/runs/" + *run_)->body);
  EXPECT_EQ(detail["verdicts"]["3"]["notes"], "hue");
  EXPECT_EQ(post("/api/runs/" + *run_ + "/dims/3/verdict", {{"verdict", "maybe"}})->status, 422);
  EXPECT_EQ(post("/api/runs/" + *run_ + "/dims/5/verdict", {{"verdict", "valid"}})->status, 422);

  const auto md = client_->Get("/api/runs/" + *run_ + "/report?format=md");
  ASSERT_EQ(md->status, 200);
  EXPECT_NE(md->body.find("### Dimension"), std::string::npos);
  const auto html = client_->Get("/api/runs/" + *run_ + "/report");
  ASSERT_EQ(html->status, 200);
  EXPECT_NE(html->body.find("<h3>Dimension"), std::string::npos);
  EXPECT_EQ(client_->Get("/api/runs/" + *run_ + "/report?format=pdf")->status, 422);
  EXPECT_EQ(client_->Get("/api/runs/" + *pending_ + "/report")->status, 409);
}

TEST(HttpStatus, ErrorKindMapping) {
  EXPECT_EQ(ls::server::http_status(ls::NotFoundError("x")), 404);
  EXPECT_EQ(ls::server::http_status(ls::StateError("x")), 409);
  EXPECT_EQ(ls::server::http_status(ls::ContractError("x")), 422);
  EXPECT_EQ(ls::server::http_status(ls::ConfigError("x")), 422);
  EXPECT_EQ(ls::server::http_status(ls::IoError("x")), 500);
}
