#pragma once

// HTTP API over a run root. Read-only except the verdict endpoint. Models and
// latent tables are loaded on first use and cached per run; cached entries are
// immutable and shared by concurrent requests.

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "latentscout/analysis.hpp"
#include "latentscout/error.hpp"
#include "latentscout/image.hpp"
#include "latentscout/pipeline.hpp"
#include "latentscout/runstore.hpp"
#include "latentscout/vae.hpp"
#include "latentscout/visual.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include <httplib.h>

namespace latentscout::server {

using json = nlohmann::json;

inline int http_status(const Error& e) {
  const auto& k = e.kind();
  if (k == "not_found") return 404;
  if (k == "state") return 409;
  if (k == "contract" || k == "config" || k == "parse") return 422;
  return 500;
}

class ApiServer {
 public:
  explicit ApiServer(fs::path run_root, std::optional<fs::path> static_dir = std::nullopt)
      : store_(std::move(run_root)) {
    if (!fs::is_directory(store_.root())) throw IoError("run root does not exist: " + store_.root().string());
    routes();
    if (static_dir && !srv_.set_mount_point("/", static_dir->string()))
      throw IoError("static directory does not exist: " + static_dir->string());
  }

  /// Binds to host:port (port 0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      const int p = srv_.bind_to_any_port(host);
      if (p < 0) throw IoError("cannot bind to " + host);
      return p;
    }
    if (!srv_.bind_to_port(host, port)) throw IoError("cannot bind to " + host + ":" + std::to_string(port) + " (port busy?)");
    return port;
  }

  /// Blocks until stop().
  void listen() { srv_.listen_after_bind(); }
  void stop() { srv_.stop(); }
  void wait_until_ready() const { srv_.wait_until_ready(); }
  runstore::RunStore& store() { return store_; }

 private:
  struct Assets {
    vae::TrainedVae model;
    LatentTable latents;
    data::LabeledImageSet train;
    fs::file_time_type stamp;
  };

  std::shared_ptr<const Assets> assets(const std::string& id) {
    const auto m = store_.get_run(id);
    const fs::path dir = store_.run_dir(id);
    if (m.status == runstore::RunStatus::Training || !fs::exists(dir / "latents.csv"))
      throw StateError("run " + id + " is not analyzed yet");
    const auto stamp = std::max(fs::last_write_time(dir / "checkpoint.bin"), fs::last_write_time(dir / "latents.csv"));
    {
      std::lock_guard<std::mutex> g(mu_);
      auto it = cache_.find(id);
      if (it != cache_.end() && it->second->stamp == stamp) return it->second;
    }
    auto a = std::make_shared<Assets>(Assets{vae::TrainedVae::load(dir / "checkpoint.bin"),
                                             load_latent_table(dir / "latents.csv"),
                                             pipeline::load_dataset_split(dir).train, stamp});
    std::lock_guard<std::mutex> g(mu_);
    cache_[id] = a;
    return a;
  }

  static void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_json(res, {{"error", e.what()}}, http_status(e));
      } catch (const json::exception& e) {
        send_json(res, {{"error", std::string("invalid JSON: ") + e.what()}}, 422);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  static int int_param(const std::string& text, const std::string& name) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(text, &used);
      if (used == text.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ContractError(name + " must be an integer (got '" + text + "')");
  }

  int dim_param(const httplib::Request& req, int d) const {
    const int j = int_param(req.path_params.at("dim"), "dim");
    if (j < 1 || j > d) throw ContractError("dim " + std::to_string(j) + " outside 1.." + std::to_string(d));
    return j;
  }

  static std::string png_b64(const Image& img) { return base64_encode(encode_png(img)); }

  void routes() {
    srv_.Get("/api/runs", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& m : store_.list_runs()) out.push_back(runstore::to_json(m));
      send_json(res, out);
    }));

    srv_.Get("/api/runs/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto m = store_.get_run(id);
      const fs::path dir = store_.run_dir(id);
      json out = {{"manifest", runstore::to_json(m)}, {"scoreboard", nullptr}};
      if (fs::exists(dir / "scores.json")) {
        const auto cfg = pipeline::run_config(m);
        const auto sb = pipeline::load_scoreboard(dir, cfg.analysis.threshold_factor);
        out["scoreboard"] = analysis::to_json(sb);
        out["median_mpwd"] = sb.median_mpwd;
        out["k"] = cfg.analysis.k;
        out["candidates"] = analysis::candidate_dims(sb, std::min(cfg.analysis.k, sb.d()));
      }
      json verdicts = json::object();
      for (const auto& [dim, v] : store_.active_verdicts(id)) verdicts[std::to_string(dim)] = runstore::to_json(v);
      out["verdicts"] = verdicts;
      send_json(res, out);
    }));

    srv_.Get("/api/runs/:id/dims/:dim/traversal", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto a = assets(id);
      const auto cfg = pipeline::run_config(store_.get_run(id));
      visual::TraversalSpec spec;
      spec.dim = dim_param(req, a->latents.d);
      spec.steps = req.has_param("steps") ? int_param(req.get_param_value("steps"), "steps") : cfg.evidence.options.steps;
      if (spec.steps < 2 || spec.steps > 64) throw ContractError("steps must lie in 2..64");
      spec.mode = req.has_param("mode") ? visual::traversal_mode_from_string(req.get_param_value("mode"))
                                        : cfg.evidence.options.mode;
      if (req.has_param("instance")) spec.instance_id = req.get_param_value("instance");
      const auto t = visual::traverse(a->model, a->latents, spec);
      json frames = json::array();
      for (const auto& f : t.frames) frames.push_back(png_b64(f));
      send_json(res, {{"dim", t.dim},
                      {"mode", visual::to_string(t.mode)},
                      {"instance", t.instance_id},
                      {"values", t.values},
                      {"frames", frames}});
    }));

    srv_.Get("/api/runs/:id/dims/:dim/extremes", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto a = assets(id);
      const auto cfg = pipeline::run_config(store_.get_run(id));
      const int dim = dim_param(req, a->latents.d);
      const int l = req.has_param("l") ? int_param(req.get_param_value("l"), "l")
                                       : std::min<int>(cfg.evidence.options.extremes_l,
                                                       static_cast<int>(a->latents.size() / 2));
      const auto e = visual::extremes(a->latents, a->train, dim, l);
      auto side = [&](const std::vector<std::size_t>& rows, const std::vector<Image>& imgs) {
        json arr = json::array();
        for (std::size_t i = 0; i < rows.size(); ++i)
          arr.push_back({{"id", a->latents.ids[rows[i]]},
                         {"label", a->latents.labels[rows[i]]},
                         {"value", a->latents.mu_at(rows[i], dim)},
                         {"png", png_b64(imgs[i])}});
        return arr;
      };
      send_json(res, {{"dim", dim}, {"l", l}, {"min", side(e.min_rows, e.min_images)},
                      {"max", side(e.max_rows, e.max_images)}});
    }));

    srv_.Get("/api/runs/:id/dims/:dim/kde", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto m = store_.get_run(id);
      const fs::path dir = store_.run_dir(id);
      if (!fs::exists(dir / "latents.csv")) throw StateError("run " + id + " is not analyzed yet");
      const auto cfg = pipeline::run_config(m);
      const int d = cfg.train.latent_dim;
      const int dim = dim_param(req, d);
      const fs::path stored = visual::evidence_paths(dir, dim).kde;
      if (fs::exists(stored)) {
        res.set_content(read_file(stored), "application/json");
        return;
      }
      json curves = json::array();
      for (const auto& k : visual::kde_plot_data(assets(id)->latents, dim, cfg.evidence.options.kde_grid_points))
        curves.push_back(analysis::to_json(k));
      send_json(res, curves);
    }));

    srv_.Post("/api/runs/:id/decode", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto a = assets(req.path_params.at("id"));
      const auto body = json::parse(req.body);
      const int d = a->model.latent_dim();
      if (!body.is_object() || !body.contains("z") || !body["z"].is_array())
        throw ContractError("body must be {\"z\": [" + std::to_string(d) + " reals]}");
      std::vector<double> z;
      for (const auto& v : body["z"]) {
        if (!v.is_number()) throw ContractError("z must contain only numbers");
        z.push_back(v.get<double>());
      }
      if (static_cast<int>(z.size()) != d)
        throw ContractError("z has length " + std::to_string(z.size()) + ", expected d=" + std::to_string(d));
      const auto png = encode_png(a->model.decode(z));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    srv_.Post("/api/runs/:id/dims/:dim/verdict", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto m = store_.get_run(id);
      const auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string())
        throw ContractError("body must contain \"verdict\": shortcut | valid | unclear");
      const int d = pipeline::run_config(m).train.latent_dim;
      const int dim = int_param(req.path_params.at("dim"), "dim");
      const auto v = runstore::verdict_from_string(body["verdict"].get<std::string>());
      const auto rec = store_.record_verdict(id, dim, d, v, body.value("notes", std::string()),
                                             body.value("judge", std::string()));
      pipeline::refresh_report(store_, id);
      send_json(res, runstore::to_json(rec), 201);
    }));

    srv_.Get("/api/runs/:id/report", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.path_params.at("id");
      const auto m = store_.get_run(id);
      pipeline::require_stage(m, "evidence", store_.run_dir(id));
      const auto rep = visual::assemble_report(pipeline::report_input(store_, id));
      const std::string fmt = req.has_param("format") ? req.get_param_value("format") : "html";
      if (fmt == "md") res.set_content(rep.markdown, "text/markdown; charset=utf-8");
      else if (fmt == "html") res.set_content(rep.html, "text/html; charset=utf-8");
      else throw ContractError("format must be html or md");
    }));

    srv_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 404 && res.body.empty()) send_json(res, {{"error", "unknown resource"}}, 404);
    });
  }

  runstore::RunStore store_;
  httplib::Server srv_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Assets>> cache_;
};

}  // namespace latentscout::server
