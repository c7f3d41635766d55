#pragma once

// Stages over a run directory. Each stage records a hash of its inputs and of
// the files it wrote; rerunning with identical inputs and intact outputs is a
// no-op unless forced.

#include <nlohmann/json.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "latentscout/advgen.hpp"
#include "latentscout/analysis.hpp"
#include "latentscout/config.hpp"
#include "latentscout/data.hpp"
#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"
#include "latentscout/idx.hpp"
#include "latentscout/latent_table.hpp"
#include "latentscout/probe.hpp"
#include "latentscout/runstore.hpp"
#include "latentscout/vae.hpp"
#include "latentscout/visual.hpp"

namespace latentscout::pipeline {

using json = nlohmann::json;
using runstore::RunStore;

struct StageOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

struct StageResult {
  std::string stage;
  bool skipped = false;
  json detail = json::object();
};

inline json to_json(const StageResult& r) { return {{"stage", r.stage}, {"skipped", r.skipped}, {"detail", r.detail}}; }

inline config::PipelineConfig run_config(const runstore::RunManifest& m) { return config::from_json(m.config); }

/// Builds the dataset described by the config (synthetic or ingested).
inline data::LabeledImageSet build_dataset(const config::PipelineConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind == "colored") return data::generate_colored_shortcut(d.synth);
  if (d.kind == "zoom") return data::generate_zoom_shortcut(d.synth);
  if (d.kind == "folder") return data::load_image_folder(d.path, d.synth.image_size);
  auto ds = data::from_idx(idx::parse_idx(d.idx_images), idx::parse_idx(d.idx_labels));
  if (ds.height != d.synth.image_size) {
    data::LabeledImageSet resized;
    resized.class_names = ds.class_names;
    for (std::size_t i = 0; i < ds.size(); ++i)
      resized.push_back(resize_bilinear(ds.image(i), d.synth.image_size, d.synth.image_size), ds.labels[i], ds.ids[i]);
    resized.provenance = ds.provenance;
    ds = std::move(resized);
  }
  return ds;
}

namespace detail {

inline json outputs_hash(const fs::path& dir, const std::vector<std::string>& files) {
  json o = json::object();
  for (const auto& f : files) o[f] = sha256_file(dir / f);
  return o;
}

inline bool outputs_intact(const fs::path& dir, const json& recorded) {
  for (const auto& [f, h] : recorded.items())
    if (!fs::exists(dir / f) || sha256_file(dir / f) != h.get<std::string>()) return false;
  return true;
}

inline void log(const StageOptions& o, const std::string& line) {
  if (o.log) *o.log << line << std::endl;
}

}  // namespace detail

/// Output hashes of a completed stage; StateError naming the stage if absent.
inline json require_stage(const runstore::RunManifest& m, const std::string& stage, const fs::path& dir) {
  if (!m.stages.contains(stage))
    throw StateError("run " + m.run_id + " is missing stage '" + stage + "'; run `" + stage + "` first");
  const auto& outs = m.stages[stage].at("outputs");
  for (const auto& [f, h] : outs.items())
    if (!fs::exists(dir / f))
      throw StateError("run " + m.run_id + ": artifact " + f + " of stage '" + stage + "' is missing; rerun `" + stage +
                       "`");
  return outs;
}

/// Runs `body` unless the recorded input hash matches and outputs are intact.
/// `body` returns the relative paths it wrote plus a detail object.
inline StageResult run_stage(RunStore& store, const std::string& id, const std::string& stage,
                             const std::string& input_hash, const StageOptions& opt,
                             const std::function<std::pair<std::vector<std::string>, json>()>& body) {
  const fs::path dir = store.run_dir(id);
  FileLock lock(dir / ".pipeline.lock");
  const auto m = store.get_run(id);
  StageResult r;
  r.stage = stage;
  if (!opt.force && m.stages.contains(stage) && m.stages[stage].value("input_hash", "") == input_hash &&
      detail::outputs_intact(dir, m.stages[stage].at("outputs"))) {
    r.skipped = true;
    r.detail = m.stages[stage].value("detail", json::object());
    detail::log(opt, stage + ": inputs unchanged, skipped");
    return r;
  }
  auto [files, info] = body();
  r.detail = info;
  const json outs = detail::outputs_hash(dir, files);
  store.update_run(id, [&](runstore::RunManifest& mm) {
    mm.stages[stage] = {{"input_hash", input_hash}, {"outputs", outs}, {"detail", info}};
  });
  return r;
}

inline std::string hash_of(const json& j) { return sha256_hex(j.dump()); }

// ---------------------------------------------------------------------------
// Artifact loading

inline data::SplitIndices load_split(const fs::path& dir) {
  const auto j = json::parse(read_file(dir / "split.json"));
  return {j.at("train").get<std::vector<std::size_t>>(), j.at("val").get<std::vector<std::size_t>>(),
          j.at("test").get<std::vector<std::size_t>>()};
}

inline data::DatasetSplit load_dataset_split(const fs::path& dir) {
  const auto ds = data::load_dataset(dir / "dataset.lsar");
  data::DatasetSplit s;
  s.indices = load_split(dir);
  s.train = data::subset(ds, s.indices.train);
  s.val = data::subset(ds, s.indices.val);
  s.test = data::subset(ds, s.indices.test);
  return s;
}

inline analysis::DimensionScoreboard load_scoreboard(const fs::path& dir, double threshold_factor) {
  return analysis::scoreboard_from_json(json::parse(read_file(dir / "scores.json")), threshold_factor);
}

// ---------------------------------------------------------------------------
// Stages

inline StageResult stage_dataset(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const auto cfg = run_config(m);
  const fs::path dir = store.run_dir(id);
  const std::string in = hash_of({{"dataset", config::to_json(cfg)["dataset"]}, {"seed", cfg.seed}});
  auto r = run_stage(store, id, "dataset", in, opt, [&] {
    detail::log(opt, "dataset: building " + cfg.dataset.kind + " dataset");
    const auto ds = build_dataset(cfg);
    ds.validate();
    const auto idx = data::split_indices(ds.labels, cfg.dataset.split, cfg.seed);
    data::save_dataset(dir / "dataset.lsar", ds);
    write_atomic(dir / "split.json", json({{"train", idx.train}, {"val", idx.val}, {"test", idx.test}}).dump());
    json info = {{"n", ds.size()},
                 {"n_classes", ds.n_classes()},
                 {"train", idx.train.size()},
                 {"val", idx.val.size()},
                 {"test", idx.test.size()}};
    if (ds.shortcut_mask) info["shortcut_rate"] = ds.shortcut_rate();
    return std::pair{std::vector<std::string>{"dataset.lsar", "split.json"}, info};
  });
  const auto outs = store.get_run(id).stages["dataset"]["outputs"];
  store.update_run(id, [&](runstore::RunManifest& mm) {
    mm.dataset = {{"ref", "dataset.lsar"}, {"kind", cfg.dataset.kind}, {"hash", outs["dataset.lsar"]}};
  });
  return r;
}

inline StageResult stage_train(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto up = require_stage(m, "dataset", dir);
  const auto cfg = run_config(m);
  const std::string in = hash_of({{"train", vae::to_json(cfg.train)}, {"dataset", up}});
  return run_stage(store, id, "train", in, opt, [&] {
    const auto sp = load_dataset_split(dir);
    detail::log(opt, "train: " + std::to_string(sp.train.size()) + " train / " + std::to_string(sp.val.size()) +
                         " val samples, d=" + std::to_string(cfg.train.latent_dim) +
                         " beta=" + format_double(cfg.train.beta));
    std::string jsonl;
    const auto model = vae::train(sp.train, sp.val, cfg.train, [&](const vae::EpochRecord& rec) {
      jsonl += vae::to_json(rec).dump() + "\n";
      detail::log(opt, "train: " + vae::to_json(rec).dump());
    });
    model.save(dir / "checkpoint.bin");
    write_atomic(dir / "train_log.jsonl", jsonl);
    double best = model.history().front().val_loss;
    int best_epoch = 1;
    for (const auto& h : model.history())
      if (h.val_loss < best) best = h.val_loss, best_epoch = h.epoch;
    return std::pair{std::vector<std::string>{"checkpoint.bin", "train_log.jsonl"},
                     json{{"epochs", model.history().size()}, {"best_epoch", best_epoch}, {"best_val_loss", best}}};
  });
}

inline StageResult stage_analyze(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto up = require_stage(m, "train", dir);
  const auto cfg = run_config(m);
  const std::string in =
      hash_of({{"analysis", config::to_json(cfg)["analysis"]}, {"train", up}, {"dataset", m.stages["dataset"]["outputs"]}});
  auto r = run_stage(store, id, "analyze", in, opt, [&] {
    const auto sp = load_dataset_split(dir);
    const auto model = vae::TrainedVae::load(dir / "checkpoint.bin");
    detail::log(opt, "analyze: encoding " + std::to_string(sp.train.size()) + " training samples");
    const auto lt = analysis::encode_dataset(model, sp.train);
    const auto lv = analysis::encode_dataset(model, sp.val);
    save_latent_table(dir / "latents.csv", lt);
    save_latent_table(dir / "latents_val.csv", lv);
    const auto sb = analysis::score_dimensions(lt, cfg.analysis.threshold_factor);
    write_atomic(dir / "scores.json", analysis::to_json(sb).dump(2));
    write_atomic(dir / "hyperparams.json", vae::to_json(vae::suggest_hyperparams(model, lt)).dump(2));
    std::vector<int> above;
    for (const auto& d : sb.dims)
      if (d.above_threshold) above.push_back(d.dim);
    return std::pair{std::vector<std::string>{"latents.csv", "latents_val.csv", "hyperparams.json"},
                     json{{"top_mpwd", analysis::rank_by_mpwd(sb, cfg.analysis.k)},
                          {"median_mpwd", sb.median_mpwd},
                          {"above_threshold", above}}};
  });
  // scores.json is rewritten by the probe stage, so it is checked separately.
  if (r.skipped && !fs::exists(dir / "scores.json")) {
    StageOptions forced = opt;
    forced.force = true;
    return stage_analyze(store, id, forced);
  }
  store.advance_status(id, runstore::RunStatus::Analyzed);
  return r;
}

inline StageResult stage_probe(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto up = require_stage(m, "analyze", dir);
  if (!fs::exists(dir / "scores.json")) throw StateError("run " + id + " has no scores.json; rerun `analyze`");
  const auto cfg = run_config(m);
  const std::string in = hash_of({{"probe", config::to_json(cfg)["probe"]}, {"seed", cfg.seed}, {"analyze", up}});
  return run_stage(store, id, "probe", in, opt, [&] {
    const auto lt = load_latent_table(dir / "latents.csv");
    const auto lv = load_latent_table(dir / "latents_val.csv");
    const auto head = probe::train_probe(lt, lv, cfg.probe);
    probe::save_probe(dir / "probe.json", head);
    auto sb = load_scoreboard(dir, cfg.analysis.threshold_factor);
    analysis::set_predictiveness(sb, probe::predictiveness_all(head));
    write_atomic(dir / "scores.json", analysis::to_json(sb).dump(2));
    detail::log(opt, "probe: val accuracy " + format_double(head.val_accuracy));
    return std::pair{std::vector<std::string>{"probe.json", "scores.json"},
                     json{{"val_accuracy", head.val_accuracy},
                          {"epochs", head.epochs},
                          {"top_predictiveness", probe::rank_by_predictiveness(head, cfg.analysis.k)}}};
  });
}

/// "top" (union of top-k by both scores), "all", or a comma-separated list.
inline std::vector<int> resolve_dims(const std::string& spec, const analysis::DimensionScoreboard& sb, int k) {
  if (spec == "top") return analysis::candidate_dims(sb, std::min(k, sb.d()));
  std::vector<int> out;
  if (spec == "all") {
    for (int j = 1; j <= sb.d(); ++j) out.push_back(j);
    return out;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int j = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      if (j < 1 || j > sb.d()) throw ContractError("dimension " + tok + " outside 1.." + std::to_string(sb.d()));
      out.push_back(j);
    } catch (const std::logic_error&) {
      throw ConfigError("--dims expects top, all or a comma-separated list of dims (got '" + spec + "')");
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw ConfigError("--dims selected no dimensions");
  return out;
}

inline StageResult stage_evidence(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto cfg = run_config(m);
  const auto an = require_stage(m, "analyze", dir);
  json pr = json::object();
  if (m.stages.contains("probe")) pr = require_stage(m, "probe", dir);
  const auto sb = load_scoreboard(dir, cfg.analysis.threshold_factor);
  const auto dims = resolve_dims(cfg.evidence.dims, sb, cfg.analysis.k);
  const std::string in = hash_of({{"evidence", config::to_json(cfg)["evidence"]},
                                  {"dims", dims},
                                  {"train", m.stages["train"]["outputs"]},
                                  {"dataset", m.stages["dataset"]["outputs"]},
                                  {"analyze", an},
                                  {"probe", pr},
                                  {"scores", sha256_file(dir / "scores.json")}});
  return run_stage(store, id, "evidence", in, opt, [&] {
    const auto model = vae::TrainedVae::load(dir / "checkpoint.bin");
    const auto lt = load_latent_table(dir / "latents.csv");
    const auto sp = load_dataset_split(dir);
    std::vector<std::string> files;
    for (int j : dims) {
      detail::log(opt, "evidence: dim " + std::to_string(j));
      const auto p = visual::write_evidence(dir, model, lt, sp.train, j, cfg.evidence.options);
      const fs::path chart = dir / "kde" / ("dim_" + std::to_string(j) + ".png");
      std::vector<analysis::KdeCurve> curves;
      for (const auto& c : json::parse(read_file(p.kde))) curves.push_back(analysis::kde_curve_from_json(c));
      write_png(chart, visual::render_kde_chart(curves));
      for (const auto& f : {p.traversal, p.extremes_min, p.extremes_max, p.kde, chart})
        files.push_back(fs::relative(f, dir).generic_string());
    }
    return std::pair{files, json{{"dims", dims}}};
  });
}

inline visual::ReportInput report_input(RunStore& store, const std::string& id) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto cfg = run_config(m);
  require_stage(m, "analyze", dir);
  visual::ReportInput in;
  in.run_id = id;
  in.run_dir = dir;
  in.k = cfg.analysis.k;
  in.scoreboard = load_scoreboard(dir, cfg.analysis.threshold_factor);
  for (const auto& [dim, v] : store.active_verdicts(id))
    in.verdicts[dim] = {runstore::to_string(v.verdict), v.notes, v.judge, v.timestamp};
  in.config = m.config;
  json prov = json::object();
  for (const auto& [stage, body] : m.stages.items()) {
    if (stage == "report") continue;
    for (const auto& [f, h] : body.at("outputs").items())
      if (f.find('/') == std::string::npos) prov[f] = h;
  }
  in.provenance = prov;
  return in;
}

inline StageResult stage_report(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto ev = require_stage(m, "evidence", dir);
  const fs::path verdicts = dir / "verdicts.jsonl";
  const std::string in = hash_of({{"evidence", ev},
                                  {"scores", sha256_file(dir / "scores.json")},
                                  {"config", m.config},
                                  {"verdicts", fs::exists(verdicts) ? sha256_file(verdicts) : ""}});
  return run_stage(store, id, "report", in, opt, [&] {
    const auto rep = visual::assemble_report(report_input(store, id));
    write_atomic(dir / "report.html", rep.html);
    write_atomic(dir / "report.md", rep.markdown);
    detail::log(opt, "report: " + (dir / "report.html").string());
    return std::pair{std::vector<std::string>{"report.html", "report.md"}, json{{"candidates", rep.candidates}}};
  });
}

inline StageResult stage_attack(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  const auto m = store.get_run(id);
  const fs::path dir = store.run_dir(id);
  const auto up = require_stage(m, "dataset", dir);
  const auto cfg = run_config(m);
  const std::string in = hash_of({{"attack", config::to_json(cfg)["attack"]}, {"seed", cfg.seed}, {"dataset", up}});
  return run_stage(store, id, "attack", in, opt, [&] {
    const auto sp = load_dataset_split(dir);
    detail::log(opt, "attack: training reference classifier");
    const auto cnn = advgen::train_reference_cnn(sp.train, sp.val, cfg.attack.cnn, [&](const advgen::CnnEpoch& e) {
      detail::log(opt, "attack: epoch " + std::to_string(e.epoch) + " val_loss " + format_double(e.val_loss) +
                           " val_accuracy " + format_double(e.val_accuracy));
    });
    cnn.save(dir / "classifier.bin");
    const auto attacked = advgen::attack_dataset(sp.test, cfg.attack.kind, cfg.attack.attack);
    data::save_dataset(dir / "attacked_test.lsar", attacked);
    auto rep = advgen::evaluate_attack(cnn, sp.test, attacked, cfg.attack.attack);
    auto rj = advgen::to_json(rep);
    rj["attack"] = advgen::to_string(cfg.attack.kind);
    write_atomic(dir / "attack_report.json", rj.dump(2));
    return std::pair{std::vector<std::string>{"classifier.bin", "attacked_test.lsar", "attack_report.json"},
                     json{{"clean_accuracy", rep.clean_accuracy}, {"adversarial_accuracy", rep.adversarial_accuracy}}};
  });
}

/// dataset -> train -> analyze -> probe -> evidence -> report.
inline std::vector<StageResult> run_pipeline(RunStore& store, const std::string& id, const StageOptions& opt = {}) {
  std::vector<StageResult> out;
  out.push_back(stage_dataset(store, id, opt));
  out.push_back(stage_train(store, id, opt));
  out.push_back(stage_analyze(store, id, opt));
  out.push_back(stage_probe(store, id, opt));
  out.push_back(stage_evidence(store, id, opt));
  out.push_back(stage_report(store, id, opt));
  return out;
}

/// Regenerates report files if evidence exists; returns false otherwise.
inline bool refresh_report(RunStore& store, const std::string& id) {
  try {
    stage_report(store, id);
    return true;
  } catch (const StateError&) {
    return false;
  } catch (const AssemblyError&) {
    return false;
  }
}

}  // namespace latentscout::pipeline
