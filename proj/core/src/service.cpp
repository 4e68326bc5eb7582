#include "forestchat/service.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "forestchat/image_io.hpp"
#include "forestchat/pipeline.hpp"
#include "forestchat/records.hpp"

namespace forestchat {

namespace fs = std::filesystem;
using nlohmann::json;

json ApiError::to_json() const {
  json body = {{"status", status}, {"code", code}, {"message", message}};
  if (field) body["field"] = *field;
  return {{"error", body}};
}

int http_status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingPrediction:
    case ErrorKind::MissingArtifact:
    case ErrorKind::IoError: return 404;
    case ErrorKind::EmptyInput:
    case ErrorKind::EmptyCorpus:
    case ErrorKind::ConstantField: return 422;
    case ErrorKind::NoPairLoaded: return 409;
    case ErrorKind::EndpointUnreachable: return 502;
    case ErrorKind::EncodeError:
    case ErrorKind::DuplicateTool:
    case ErrorKind::GroundingViolation: return 500;
    default: return 400;
  }
}

namespace {

struct HttpFailure {
  ApiError error;
};

[[noreturn]] void fail(int status, std::string code, std::string message,
                       std::optional<std::string> field = std::nullopt) {
  throw HttpFailure{{status, std::move(code), std::move(message), std::move(field)}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ApiError& e) { send_json(res, e.status, e.to_json()); }

std::string random_id(std::string_view prefix) {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lk(m);
  return fmt::format("{}{:016x}", prefix, rng());
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json doc = json::parse(req.body);
    if (!doc.is_object()) fail(400, "invalid_json", "request body must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    fail(400, "invalid_json", fmt::format("request body is not valid JSON: {}", e.what()));
  }
}

std::optional<std::string> string_field(const json& body, const char* name) {
  if (!body.contains(name) || body[name].is_null()) return std::nullopt;
  if (!body[name].is_string()) fail(400, "invalid_argument", fmt::format("'{}' must be a string", name), name);
  return body[name].get<std::string>();
}

struct EvalJob {
  std::string status = "running";
  json report;
  std::string table;
  std::optional<ApiError> error;
};

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<CompletionClient> llm;
  std::shared_ptr<const ToolRegistry> registry = make_builtin_registry();
  Agent agent{registry, llm};
  fs::path data_root;

  httplib::Server server;
  std::thread server_thread;

  mutable std::shared_mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;

  std::mutex jobs_mutex;
  std::map<std::string, EvalJob> jobs;
  std::vector<std::thread> job_threads;

  Impl(ServiceConfig c, std::shared_ptr<CompletionClient> client)
      : config(std::move(c)), llm(std::move(client)), agent(registry, llm) {
    data_root = fs::weakly_canonical(config.data_root.value_or(fs::current_path()));
    config.session_defaults.data_root = data_root;
    routes();
  }

  ~Impl() {
    for (auto& t : job_threads) {
      if (t.joinable()) t.join();
    }
  }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::shared_lock lk(sessions_mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) fail(404, "session_not_found", fmt::format("no session '{}'", id), "session_id");
    return it->second;
  }

  fs::path resolve_data_path(const std::string& given, const char* field) const {
    const fs::path p(given);
    const fs::path full = fs::weakly_canonical(p.is_absolute() ? p : data_root / p);
    const fs::path rel = full.lexically_relative(data_root);
    if (rel.empty() || *rel.begin() == "..") {
      fail(400, "path_escape", fmt::format("'{}' resolves outside the data root", given), field);
    }
    if (!fs::exists(full)) fail(404, "not_found", fmt::format("'{}' does not exist", given), field);
    return full;
  }

  template <typename F>
  httplib::Server::Handler guarded(F handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const HttpFailure& f) {
        send_error(res, f.error);
      } catch (const Error& e) {
        send_error(res, {http_status_for(e.kind()), std::string(to_string(e.kind())), e.what(), std::nullopt});
      } catch (const std::exception& e) {
        spdlog::error("unhandled error on {} {}: {}", req.method, req.path, e.what());
        send_error(res, {500, "internal_error", e.what(), std::nullopt});
      }
    };
  }

  void routes() {
    server.set_payload_max_length(config.max_upload_bytes);
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      ApiError e{res.status, "http_error", httplib::status_message(res.status), std::nullopt};
      if (res.status == 404) {
        e.code = "route_not_found";
        e.message = fmt::format("no route for {} {}", req.method, req.path);
      } else if (res.status == 413) {
        e.code = "payload_too_large";
        e.message = "request body exceeds the upload limit";
      } else if (res.status == 400) {
        e.code = "bad_request";
      }
      send_error(res, e);
      return httplib::Server::HandlerResponse::Handled;
    });
    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });

    server.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      json tools = json::array();
      for (const auto* spec : registry->list()) tools.push_back(spec->name);
      send_json(res, 200, {{"status", "ok"},
                           {"version", "0.1.0"},
                           {"tools", tools},
                           {"llm_configured", llm != nullptr},
                           {"sessions", session_count()}});
    }));

    server.Post("/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      const std::string id = random_id("s");
      {
        std::unique_lock lk(sessions_mutex);
        sessions.emplace(id, std::make_shared<Session>(id, config.session_defaults));
      }
      send_json(res, 201, {{"session_id", id}, {"turns", json::array()}});
    }));

    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session(req.matches[1]);
      json turns = json::array();
      for (const auto& t : s->turns()) turns.push_back(turn_record(t));
      json artifacts = json::array();
      for (const auto& a : s->artifacts()) artifacts.push_back(artifact_record(*a));
      const auto pair = s->loaded_pair_id();
      send_json(res, 200, {{"session_id", s->id()},
                           {"loaded_pair", pair ? json(*pair) : json(nullptr)},
                           {"turns", turns},
                           {"artifacts", artifacts}});
    }));

    server.Post(R"(/v1/sessions/([^/]+)/pair)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session(req.matches[1]);
      if (!req.is_multipart_form_data()) {
        fail(400, "invalid_upload", "upload the epochs as multipart form fields 'a' and 'b'");
      }
      for (const char* field : {"a", "b"}) {
        if (!req.has_file(field)) fail(400, "missing_field", fmt::format("missing image '{}'", field), field);
      }
      const auto decode = [&](const char* field) {
        const auto part = req.get_file_value(field);
        try {
          return decode_image({reinterpret_cast<const std::uint8_t*>(part.content.data()), part.content.size()});
        } catch (const Error& e) {
          fail(400, std::string(to_string(e.kind())), e.what(), field);
        }
      };
      std::string pair_id = "pair";
      if (req.has_file("pair_id")) {
        pair_id = req.get_file_value("pair_id").content;
      } else if (const auto name = req.get_file_value("a").filename; !name.empty()) {
        pair_id = fs::path(name).stem().string();
      }
      Raster epoch_a = decode("a");
      Raster epoch_b = decode("b");
      ImagePair pair;
      try {
        pair = make_image_pair(pair_id, std::move(epoch_a), std::move(epoch_b));
      } catch (const Error& e) {
        fail(400, std::string(to_string(e.kind())), e.what(), "b");
      }
      std::optional<ChangeMask> gt;
      if (req.has_file("mask")) {
        const auto part = req.get_file_value("mask");
        try {
          gt = decode_mask({reinterpret_cast<const std::uint8_t*>(part.content.data()), part.content.size()},
                           MaskProvenance::GroundTruth);
        } catch (const Error& e) {
          fail(400, std::string(to_string(e.kind())), e.what(), "mask");
        }
      }
      std::string artifact_id;
      {
        std::lock_guard lk(s->turn_lock());
        try {
          artifact_id = s->attach_pair(pair, std::move(gt));
        } catch (const Error& e) {
          fail(400, std::string(to_string(e.kind())), e.what(), "mask");
        }
      }
      const auto artifact = s->artifact(artifact_id);
      send_json(res, 200, {{"pair_id", pair.id},
                           {"artifact_id", artifact_id},
                           {"width", pair.width()},
                           {"height", pair.height()},
                           {"has_ground_truth", std::get<LoadedPair>(artifact->value).ground_truth.has_value()},
                           {"stats_available", true}});
    }));

    server.Post(R"(/v1/sessions/([^/]+)/messages)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session(req.matches[1]);
      const json body = parse_body(req);
      const std::string text = string_field(body, "text").value_or("");
      if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        fail(422, "empty_message", "message text is empty", "text");
      }
      AgentOptions options{config.default_planner, config.default_compose};
      if (const auto planner = string_field(body, "planner")) {
        if (*planner == "llm") options.planner = PlannerKind::Llm;
        else if (*planner == "deterministic" || *planner == "det") options.planner = PlannerKind::Deterministic;
        else fail(400, "invalid_argument", "planner must be 'deterministic' or 'llm'", "planner");
      }
      if (const auto compose = string_field(body, "compose")) {
        if (*compose == "llm") options.compose = ComposeMode::Llm;
        else if (*compose == "template") options.compose = ComposeMode::Template;
        else fail(400, "invalid_argument", "compose must be 'template' or 'llm'", "compose");
      }
      const TurnResult turn = agent.run_turn(*s, text, options);
      json out = turn_record(turn);
      json records = json::array();
      for (const auto& step : turn.plan.steps) {
        if (!step.result_ref) continue;
        if (const auto a = s->artifact(*step.result_ref)) records.push_back(artifact_record(*a));
      }
      out["artifact_records"] = records;
      out["session_id"] = s->id();
      out["turn_index"] = s->turn_count() - 1;
      send_json(res, 200, out);
    }));

    server.Get(R"(/v1/sessions/([^/]+)/artifacts/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = session(req.matches[1]);
      const std::string aid = req.matches[2];
      const auto a = s->artifact(aid);
      if (!a) fail(404, "artifact_not_found", fmt::format("no artifact '{}' in this session", aid), "artifact_id");
      const bool record = req.get_param_value("format") == "record";
      std::vector<std::uint8_t> png;
      if (!record) {
        if (const auto* m = std::get_if<ChangeMask>(&a->value)) {
          png = encode_mask_png(*m);
        } else if (const auto* r = std::get_if<Raster>(&a->value)) {
          png = encode_png(*r);
        } else if (const auto* p = std::get_if<LoadedPair>(&a->value); p && req.has_param("layer")) {
          const std::string layer = req.get_param_value("layer");
          if (layer == "a") png = encode_png(p->pair.epoch_a);
          else if (layer == "b") png = encode_png(p->pair.epoch_b);
          else if (layer == "mask" && p->ground_truth) png = encode_mask_png(*p->ground_truth);
          else fail(400, "invalid_argument", "layer must be 'a', 'b' or 'mask' (when a mask was uploaded)", "layer");
        }
      }
      if (!png.empty()) {
        res.status = 200;
        res.set_content(std::string(png.begin(), png.end()), "image/png");
        return;
      }
      send_json(res, 200, artifact_record(*a));
    }));

    server.Post("/v1/eval", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto manifest = string_field(body, "manifest");
      if (!manifest) fail(400, "missing_field", "'manifest' is required", "manifest");
      EvalRequest request;
      request.manifest = resolve_data_path(*manifest, "manifest");
      if (const auto p = string_field(body, "pred_dir")) request.pred_dir = resolve_data_path(*p, "pred_dir");
      if (const auto p = string_field(body, "captions")) request.captions = resolve_data_path(*p, "captions");
      if (const auto p = string_field(body, "split")) request.split = *p;
      if (const auto p = string_field(body, "model")) request.model = *p;
      if (body.contains("per_pair") && body["per_pair"].is_boolean()) request.per_pair = body["per_pair"];
      request.workers = config.eval_workers;

      const Dataset dataset = load_manifest(request.manifest);
      auto inputs = std::make_shared<EvalInputs>(load_eval_inputs(request, dataset));
      EvalOptions options;
      options.dataset_id = dataset.id;
      options.model = request.model;
      options.per_pair = request.per_pair;
      options.workers = request.workers ? request.workers : std::max(1u, std::thread::hardware_concurrency());

      const std::string job_id = random_id("j");
      std::lock_guard lk(jobs_mutex);
      jobs.emplace(job_id, EvalJob{});
      job_threads.emplace_back([this, job_id, inputs, options] {
        EvalJob done;
        try {
          const EvalReport report = evaluate_dataset(*inputs, options);
          done.status = "done";
          done.report = to_record(report);
          done.table = format_report_table(report);
        } catch (const Error& e) {
          done.status = "failed";
          done.error = ApiError{http_status_for(e.kind()), std::string(to_string(e.kind())), e.what(), std::nullopt};
        } catch (const std::exception& e) {
          done.status = "failed";
          done.error = ApiError{500, "internal_error", e.what(), std::nullopt};
        }
        std::lock_guard jl(jobs_mutex);
        jobs[job_id] = std::move(done);
      });
      send_json(res, 202, {{"job_id", job_id}, {"status", "running"}});
    }));

    server.Get(R"(/v1/eval/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::lock_guard lk(jobs_mutex);
      const auto it = jobs.find(id);
      if (it == jobs.end()) fail(404, "job_not_found", fmt::format("no eval job '{}'", id), "job_id");
      json out = {{"job_id", id}, {"status", it->second.status}};
      if (it->second.status == "done") {
        out["report"] = it->second.report;
        out["table"] = it->second.table;
      }
      if (it->second.error) out["error"] = it->second.error->to_json()["error"];
      send_json(res, 200, out);
    }));

    if (config.static_dir) {
      if (!server.set_mount_point("/", config.static_dir->string())) {
        spdlog::warn("static directory {} not found; UI not served", config.static_dir->string());
      }
    }
  }

  std::size_t session_count() const {
    std::shared_lock lk(sessions_mutex);
    return sessions.size();
  }

  int bind() {
    const int port = config.port == 0 ? server.bind_to_any_port(config.host)
                                      : (server.bind_to_port(config.host, config.port) ? config.port : -1);
    if (port < 0) {
      throw Error(ErrorKind::IoError, fmt::format("cannot bind {}:{}", config.host, config.port));
    }
    spdlog::info("serving on http://{}:{} (data root {})", config.host, port, data_root.string());
    return port;
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<CompletionClient> llm)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(llm))) {}

Service::~Service() { stop(); }

int Service::start() {
  const int port = impl_->bind();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

std::size_t Service::session_count() const { return impl_->session_count(); }

}  // namespace forestchat
