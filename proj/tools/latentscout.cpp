// latentscout command line: dataset generation, training, analysis, probing,
// evidence, attack, reporting and serving over a run root.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "latentscout/config.hpp"
#include "latentscout/pipeline.hpp"
#include "latentscout/runstore.hpp"
#include "latentscout/server.hpp"

namespace ls = latentscout;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string run_root;
  std::string run_id;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<double> beta;
  std::optional<int> latent_dim;
  bool force = false;
  bool quiet = false;
  std::string dims;
  std::string attack_kind;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string out;
  std::string format = "html";
};

int exit_code(const ls::Error& e) {
  const auto& k = e.kind();
  if (k == "config" || k == "contract" || k == "parse") return 2;
  if (k == "state") return 3;
  if (k == "not_found") return 4;
  return 1;
}

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"ok", false}, {"error", kind}, {"message", message}}.dump() << std::endl;
}

/// Config overrides from flags, in the config's JSON layout.
json overrides(const Options& o) {
  json j = json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.k) j["analysis"]["k"] = *o.k;
  if (o.beta) j["train"]["beta"] = *o.beta;
  if (o.latent_dim) j["train"]["latent_dim"] = *o.latent_dim;
  if (!o.dims.empty()) j["evidence"]["dims"] = o.dims;
  if (!o.attack_kind.empty()) j["attack"]["kind"] = o.attack_kind;
  return j;
}

ls::config::PipelineConfig base_config(const Options& o) {
  if (o.config_path.empty()) return ls::config::default_config();
  return ls::config::from_json(ls::config::read_config_file(o.config_path));
}

/// Resolves the run a command acts on; applies flag overrides to its config.
std::string resolve_run(ls::runstore::RunStore& store, const Options& o, bool create) {
  const json ov = overrides(o);
  if (o.run_id.empty() && create) {
    auto cfg = ls::config::apply_json(base_config(o), ov);
    cfg.validate();
    return store.create_run(json::object(), ls::config::to_json(cfg)).run_id;
  }
  std::string id = o.run_id;
  if (id.empty()) {
    const auto runs = store.list_runs();
    if (runs.empty()) throw ls::NotFoundError("no runs under " + store.runs_dir().string() + "; pass --run or run `dataset gen`");
    id = runs.front().run_id;
  }
  const auto m = store.get_run(id);
  if (!o.config_path.empty() || !ov.empty()) {
    auto cfg = o.config_path.empty() ? ls::pipeline::run_config(m) : base_config(o);
    cfg = ls::config::apply_json(cfg, ov);
    cfg.validate();
    const json cj = ls::config::to_json(cfg);
    if (cj != m.config) store.update_run(id, [&](ls::runstore::RunManifest& mm) { mm.config = cj; });
  }
  return id;
}

void print_ok(const std::string& command, const std::string& id, const json& extra) {
  json out = {{"ok", true}, {"command", command}, {"run_id", id}};
  for (const auto& [key, v] : extra.items()) out[key] = v;
  std::cout << out.dump() << std::endl;
}

json stage_list(const std::vector<ls::pipeline::StageResult>& rs) {
  json a = json::array();
  for (const auto& r : rs) a.push_back(ls::pipeline::to_json(r));
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  if (const char* env = std::getenv("LATENTSCOUT_RUN_ROOT")) o.run_root = env;
  if (o.run_root.empty()) o.run_root = ".";

  CLI::App app{"Latent shortcut detection toolkit"};
  app.require_subcommand(1);
  app.add_option("--config", o.config_path, "TOML or JSON pipeline config");
  app.add_option("--run-root", o.run_root, "Directory holding runs/ (default $LATENTSCOUT_RUN_ROOT or .)");
  app.add_option("--run", o.run_id, "Run id (default: newest run, or a new run for dataset gen / pipeline)");
  app.add_option("--seed", o.seed, "Override the global seed");
  app.add_option("--k", o.k, "Top-k dims per ranking")->check(CLI::PositiveNumber);
  app.add_option("--beta", o.beta, "Override the KL weight");
  app.add_option("--latent-dim", o.latent_dim, "Override the latent dimensionality")->check(CLI::PositiveNumber);
  app.add_flag("--force", o.force, "Rerun stages even if inputs are unchanged");
  app.add_flag("-q,--quiet", o.quiet, "No progress output on stderr");

  auto* dataset = app.add_subcommand("dataset", "Dataset commands");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "Build the configured dataset and its split");
  auto* train = app.add_subcommand("train", "Train the Beta-VAE");
  auto* analyze = app.add_subcommand("analyze", "Encode the dataset and score dimensions");
  auto* probe_cmd = app.add_subcommand("probe", "Fit the linear probe and add predictiveness scores");
  auto* evidence = app.add_subcommand("evidence", "Write traversals, extremes and KDE plots");
  evidence->add_option("--dims", o.dims, "top | all | comma-separated dims");
  auto* attack = app.add_subcommand("attack", "Train the reference CNN and evaluate a shortcut attack");
  attack->add_option("--kind", o.attack_kind, "crop | pad")->check(CLI::IsMember({"crop", "pad"}));
  auto* report = app.add_subcommand("report", "Assemble the shortcut report");
  report->add_option("--out", o.out, "Also write the report to this file");
  report->add_option("--format", o.format, "html | md")->check(CLI::IsMember({"html", "md"}));
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API over the run root");
  serve->add_option("--port", o.port, "Port (0 picks a free one)");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--static", o.static_dir, "Directory of console assets mounted at /");
  auto* pipe = app.add_subcommand("pipeline", "dataset, train, analyze, probe, evidence, report");
  pipe->add_option("--dims", o.dims, "top | all | comma-separated dims");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 2;
  }

  try {
    ls::runstore::RunStore store(o.run_root);
    ls::pipeline::StageOptions sopt{o.force, o.quiet ? nullptr : &std::cerr};

    if (serve->parsed()) {
      ls::server::ApiServer srv(o.run_root, o.static_dir.empty() ? std::nullopt
                                                                 : std::optional<ls::fs::path>(o.static_dir));
      const int port = srv.bind(o.host, o.port);
      std::cout << json{{"ok", true}, {"command", "serve"}, {"host", o.host}, {"port", port}}.dump() << std::endl;
      srv.listen();
      return 0;
    }

    const bool creates = gen->parsed() || pipe->parsed();
    const std::string id = resolve_run(store, o, creates);
    using namespace ls::pipeline;

    if (gen->parsed()) {
      print_ok("dataset gen", id, {{"stages", stage_list({stage_dataset(store, id, sopt)})}});
    } else if (train->parsed()) {
      print_ok("train", id, {{"stages", stage_list({stage_train(store, id, sopt)})}});
    } else if (analyze->parsed()) {
      print_ok("analyze", id, {{"stages", stage_list({stage_analyze(store, id, sopt)})}});
    } else if (probe_cmd->parsed()) {
      print_ok("probe", id, {{"stages", stage_list({stage_probe(store, id, sopt)})}});
    } else if (evidence->parsed()) {
      print_ok("evidence", id, {{"stages", stage_list({stage_evidence(store, id, sopt)})}});
    } else if (attack->parsed()) {
      const auto r = stage_attack(store, id, sopt);
      print_ok("attack", id, {{"stages", stage_list({r})}, {"report", (store.run_dir(id) / "attack_report.json").string()}});
    } else if (report->parsed()) {
      const auto r = stage_report(store, id, sopt);
      const auto file = store.run_dir(id) / (o.format == "md" ? "report.md" : "report.html");
      if (!o.out.empty()) ls::write_atomic(o.out, ls::read_file(file));
      print_ok("report", id, {{"stages", stage_list({r})}, {"report", o.out.empty() ? file.string() : o.out}});
    } else if (pipe->parsed()) {
      const auto rs = run_pipeline(store, id, sopt);
      print_ok("pipeline", id,
               {{"stages", stage_list(rs)}, {"status", ls::runstore::to_string(store.get_run(id).status)},
                {"run_dir", store.run_dir(id).string()}});
    }
    return 0;
  } catch (const ls::Error& e) {
    fail_line(e.kind(), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return 1;
  }
}
