#include "forestchat/llm_client.hpp"

#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "forestchat/error.hpp"

namespace forestchat {

namespace {

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::EndpointUnreachable, fmt::format("base url '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

}  // namespace

LlmConfig LlmConfig::from_env() {
  LlmConfig c;
  c.base_url = env_or("FORESTCHAT_LLM_BASE_URL");
  c.model = env_or("FORESTCHAT_LLM_MODEL");
  c.api_key = env_or("FORESTCHAT_LLM_API_KEY");
  const std::string timeout = env_or("FORESTCHAT_LLM_TIMEOUT");
  if (!timeout.empty()) {
    try {
      c.timeout_seconds = std::max(1, std::stoi(timeout));
    } catch (const std::exception&) {
      spdlog::warn("ignoring FORESTCHAT_LLM_TIMEOUT='{}'", timeout);
    }
  }
  return c;
}

std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(secret, pos)) != std::string::npos) {
    text.replace(pos, secret.size(), "[redacted]");
    pos += 10;
  }
  return text;
}

HttpCompletionClient::HttpCompletionClient(LlmConfig config) : config_(std::move(config)) {}

std::string HttpCompletionClient::complete(const std::vector<ChatMessage>& messages) {
  if (!config_.configured()) {
    throw Error(ErrorKind::EndpointUnreachable, "completion endpoint is not configured");
  }
  const Endpoint ep = split_url(config_.base_url);

  nlohmann::json body = {{"model", config_.model}, {"temperature", 0}, {"messages", nlohmann::json::array()}};
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const std::string payload = body.dump();

  httplib::Client client(ep.origin);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const std::string path = ep.path + "/chat/completions";
  spdlog::debug("llm request {}{}: {}", ep.origin, path, redact(payload, config_.api_key));
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) {
    throw Error(ErrorKind::EndpointUnreachable,
                fmt::format("completion request failed: {}", httplib::to_string(res.error())));
  }
  spdlog::debug("llm response {}: {}", res->status, redact(res->body, config_.api_key));
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorKind::EndpointUnreachable,
                fmt::format("completion endpoint returned status {}", res->status));
  }
  try {
    const auto parsed = nlohmann::json::parse(res->body);
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::EndpointUnreachable, fmt::format("malformed completion response: {}", e.what()));
  }
}

}  // namespace forestchat
