#pragma once

#include <string>
#include <vector>

namespace forestchat {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
};

/// Completion endpoint settings. from_env() reads
///   FORESTCHAT_LLM_BASE_URL   e.g. https://api.example.com/v1
///   FORESTCHAT_LLM_MODEL
///   FORESTCHAT_LLM_API_KEY
///   FORESTCHAT_LLM_TIMEOUT    seconds, default 30
struct LlmConfig {
  std::string base_url;
  std::string model;
  std::string api_key;
  int timeout_seconds = 30;

  static LlmConfig from_env();
  bool configured() const noexcept { return !base_url.empty() && !model.empty(); }
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  /// Returns the assistant message text. Throws Error{EndpointUnreachable}
  /// on transport failures, non-2xx statuses or malformed bodies.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

/// Chat-completions client (POST {base_url}/chat/completions, bearer key).
/// Request and response bodies are logged at debug level with the key
/// redacted.
class HttpCompletionClient final : public CompletionClient {
 public:
  explicit HttpCompletionClient(LlmConfig config);
  std::string complete(const std::vector<ChatMessage>& messages) override;

  const LlmConfig& config() const noexcept { return config_; }

 private:
  LlmConfig config_;
};

/// Replaces every occurrence of the secret with "[redacted]".
std::string redact(std::string text, const std::string& secret);

}  // namespace forestchat
