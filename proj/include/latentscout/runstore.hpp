#pragma once

// One directory per run under <root>/runs/<id>/. Manifests and verdict logs
// are rewritten atomically; verdict writers serialize on a per-run lock.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"

namespace latentscout::runstore {

using json = nlohmann::json;

inline constexpr int kManifestSchemaVersion = 1;

enum class RunStatus { Training = 0, Analyzed = 1, Judged = 2 };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Training: return "training";
    case RunStatus::Analyzed: return "analyzed";
    case RunStatus::Judged: return "judged";
  }
  return "";
}

inline RunStatus run_status_from_string(const std::string& s) {
  if (s == "training") return RunStatus::Training;
  if (s == "analyzed") return RunStatus::Analyzed;
  if (s == "judged") return RunStatus::Judged;
  throw ParseError("unknown run status '" + s + "'", 0);
}

struct RunManifest {
  std::string run_id;
  json dataset = json::object();  // {"ref": ..., "hash": ...}
  json config = json::object();   // full pipeline configuration
  RunStatus status = RunStatus::Training;
  std::int64_t created_at_us = 0;
  int schema_version = kManifestSchemaVersion;
  json stages = json::object();  // stage name -> {"input_hash", "outputs": {file: sha256}}

  friend bool operator==(const RunManifest& a, const RunManifest& b) {
    return a.run_id == b.run_id && a.dataset == b.dataset && a.config == b.config && a.status == b.status &&
           a.created_at_us == b.created_at_us && a.schema_version == b.schema_version && a.stages == b.stages;
  }
};

/// UTC ISO-8601 with microseconds.
inline std::string format_timestamp(std::int64_t us) {
  const std::time_t secs = static_cast<std::time_t>(us / 1000000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(us % 1000000));
  return buf;
}

inline std::int64_t now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline json to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},
          {"dataset", m.dataset},
          {"config", m.config},
          {"status", to_string(m.status)},
          {"created_at", format_timestamp(m.created_at_us)},
          {"created_at_us", m.created_at_us},
          {"schema_version", m.schema_version},
          {"stages", m.stages}};
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kManifestSchemaVersion)
    throw ParseError("manifest schema version " + std::to_string(m.schema_version) + " is not supported", 0);
  m.run_id = j.at("run_id").get<std::string>();
  m.dataset = j.value("dataset", json::object());
  m.config = j.value("config", json::object());
  m.status = run_status_from_string(j.at("status").get<std::string>());
  m.created_at_us = j.at("created_at_us").get<std::int64_t>();
  m.stages = j.value("stages", json::object());
  return m;
}

/// Random (version 4) UUID.
inline std::string make_uuid() {
  thread_local std::mt19937_64 rng{std::random_device{}() ^
                                   static_cast<std::uint64_t>(now_us()) * 0x9E3779B97F4A7C15ULL};
  std::uint64_t hi = rng(), lo = rng();
  hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
  return buf;
}

enum class Verdict { Shortcut, Valid, Unclear };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Shortcut: return "shortcut";
    case Verdict::Valid: return "valid";
    case Verdict::Unclear: return "unclear";
  }
  return "";
}

inline Verdict verdict_from_string(const std::string& s) {
  if (s == "shortcut") return Verdict::Shortcut;
  if (s == "valid") return Verdict::Valid;
  if (s == "unclear") return Verdict::Unclear;
  throw ContractError("verdict must be one of shortcut, valid, unclear (got '" + s + "')");
}

struct VerdictRecord {
  std::string run_id;
  int dim = 0;
  Verdict verdict = Verdict::Unclear;
  std::string notes;
  std::string judge;
  std::string timestamp;
};

inline json to_json(const VerdictRecord& v) {
  return {{"run_id", v.run_id},   {"dim", v.dim},     {"verdict", to_string(v.verdict)},
          {"notes", v.notes},     {"judge", v.judge}, {"timestamp", v.timestamp}};
}

inline VerdictRecord verdict_from_json(const json& j) {
  return {j.at("run_id").get<std::string>(), j.at("dim").get<int>(),
          verdict_from_string(j.at("verdict").get<std::string>()), j.value("notes", ""), j.value("judge", ""),
          j.value("timestamp", "")};
}

class RunStore {
 public:
  explicit RunStore(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path runs_dir() const { return root_ / "runs"; }
  fs::path run_dir(const std::string& id) const { return runs_dir() / id; }

  RunManifest create_run(json dataset, json config) {
    RunManifest m;
    do {
      m.run_id = make_uuid();
    } while (fs::exists(run_dir(m.run_id)));
    m.dataset = std::move(dataset);
    m.config = std::move(config);
    m.created_at_us = now_us();
    fs::create_directories(run_dir(m.run_id));
    write_manifest(m);
    return m;
  }

  bool exists(const std::string& id) const {
    return valid_id(id) && fs::exists(run_dir(id) / "manifest.json");
  }

  RunManifest get_run(const std::string& id) const {
    if (!exists(id)) throw NotFoundError("unknown run '" + id + "'");
    try {
      return manifest_from_json(json::parse(read_file(run_dir(id) / "manifest.json")));
    } catch (const json::exception& e) {
      throw ParseError("manifest of run " + id + ": " + e.what(), 0);
    }
  }

  /// Newest first; equal timestamps ordered by id.
  std::vector<RunManifest> list_runs() const {
    std::vector<RunManifest> out;
    if (!fs::exists(runs_dir())) return out;
    for (const auto& e : fs::directory_iterator(runs_dir())) {
      if (!e.is_directory()) continue;
      const auto id = e.path().filename().string();
      if (exists(id)) out.push_back(get_run(id));
    }
    std::sort(out.begin(), out.end(), [](const RunManifest& a, const RunManifest& b) {
      if (a.created_at_us != b.created_at_us) return a.created_at_us > b.created_at_us;
      return a.run_id < b.run_id;
    });
    return out;
  }

  void write_manifest(const RunManifest& m) const {
    write_atomic(run_dir(m.run_id) / "manifest.json", to_json(m).dump(2));
  }

  /// Read-modify-write of the manifest under the run's manifest lock.
  template <class F>
  RunManifest update_run(const std::string& id, F&& mutate) const {
    if (!exists(id)) throw NotFoundError("unknown run '" + id + "'");
    FileLock lock(run_dir(id) / ".manifest.lock");
    RunManifest m = get_run(id);
    const RunStatus before = m.status;
    mutate(m);
    if (static_cast<int>(m.status) < static_cast<int>(before))
      throw StateError("run status may only move forward (" + to_string(before) + " -> " + to_string(m.status) + ")");
    write_manifest(m);
    return m;
  }

  /// Moves status forward; a request to stay or move back is a no-op.
  RunManifest advance_status(const std::string& id, RunStatus to) const {
    return update_run(id, [&](RunManifest& m) {
      if (static_cast<int>(to) > static_cast<int>(m.status)) m.status = to;
    });
  }

  /// Appends a verdict. `d` bounds the dimension (1..d).
  VerdictRecord record_verdict(const std::string& id, int dim, int d, Verdict v, std::string notes,
                               std::string judge = "") const {
    const RunManifest m = get_run(id);
    if (m.status == RunStatus::Training)
      throw StateError("run " + id + " is not analyzed yet; verdicts need an analyzed run");
    if (dim < 1 || dim > d)
      throw ContractError("dimension " + std::to_string(dim) + " outside 1.." + std::to_string(d));
    VerdictRecord rec{id, dim, v, std::move(notes), std::move(judge), format_timestamp(now_us())};
    {
      FileLock lock(run_dir(id) / ".verdicts.lock");
      const fs::path log = run_dir(id) / "verdicts.jsonl";
      std::string body = fs::exists(log) ? read_file(log) : std::string();
      if (!body.empty() && body.back() != '\n') body += '\n';
      body += to_json(rec).dump() + "\n";
      write_atomic(log, body);
    }
    advance_status(id, RunStatus::Judged);
    return rec;
  }

  /// Full history in write order.
  std::vector<VerdictRecord> verdict_history(const std::string& id) const {
    if (!exists(id)) throw NotFoundError("unknown run '" + id + "'");
    std::vector<VerdictRecord> out;
    const fs::path log = run_dir(id) / "verdicts.jsonl";
    if (!fs::exists(log)) return out;
    std::istringstream in(read_file(log));
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      if (!line.empty()) {
        try {
          out.push_back(verdict_from_json(json::parse(line)));
        } catch (const json::exception& e) {
          throw ParseError("verdicts.jsonl: " + std::string(e.what()), offset);
        }
      }
      offset += line.size() + 1;
    }
    return out;
  }

  /// Last write per dimension wins.
  std::map<int, VerdictRecord> active_verdicts(const std::string& id) const {
    std::map<int, VerdictRecord> out;
    for (auto& v : verdict_history(id)) out[v.dim] = v;
    return out;
  }

 private:
  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
      return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '-' || c == '_';
    });
  }

  fs::path root_;
};

}  // namespace latentscout::runstore
