#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "forestchat/agent.hpp"
#include "forestchat/error.hpp"

// HTTP front end. All bodies are JSON; every non-2xx response carries
//   {"error": {"status": int, "code": str, "message": str, "field": str?}}
//
//   POST /v1/sessions                        -> 201 {session_id}
//   GET  /v1/sessions/{id}                   -> session record
//   POST /v1/sessions/{id}/pair              multipart a, b[, mask][, pair_id]
//   POST /v1/sessions/{id}/messages          {text, planner?, compose?}
//   GET  /v1/sessions/{id}/artifacts/{aid}   PNG for masks and overlays, JSON otherwise
//   POST /v1/eval                            {manifest, pred_dir?, captions?, split?, model?} -> 202 {job_id}
//   GET  /v1/eval/{job}
//   GET  /v1/health
//
// No authentication; put a proxy in front for anything but local use.

namespace forestchat {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> data_root;
  std::optional<std::filesystem::path> static_dir;
  std::size_t max_upload_bytes = 32u << 20;
  SessionConfig session_defaults;
  PlannerKind default_planner = PlannerKind::Deterministic;
  ComposeMode default_compose = ComposeMode::Template;
  unsigned eval_workers = 0;
};

struct ApiError {
  int status = 500;
  std::string code;
  std::string message;
  std::optional<std::string> field;

  nlohmann::json to_json() const;
};

/// HTTP status for a library error kind.
int http_status_for(ErrorKind kind);

class Service {
 public:
  explicit Service(ServiceConfig config, std::shared_ptr<CompletionClient> llm = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  /// Throws Error{IoError} when the address cannot be bound.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace forestchat
