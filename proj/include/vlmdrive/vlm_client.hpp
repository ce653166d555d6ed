#pragma once

// Uniform chat-with-image interface over HTTP providers and a scripted
// backend, with retry, rate limiting and usage accounting.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vlmdrive {

struct ImageAttachment {
  std::string bytes;
  std::string media_type;  // e.g. "image/jpeg"
};

/// Identifies a request for the scripted backend and for call logs.
struct RequestKey {
  std::string frame_id;
  int stage = 0;

  friend auto operator<=>(const RequestKey&, const RequestKey&) = default;
};

std::string to_string(const RequestKey& key);

struct ChatRequest {
  std::optional<std::string> system_text;
  std::string user_text;
  std::optional<ImageAttachment> image;
  int max_output_tokens = 1024;
  std::optional<double> temperature;
  std::optional<RequestKey> key;
};

struct ChatResponse {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency = 0.0;  // seconds
  std::map<std::string, std::string> provider_metadata;
};

enum class ProviderKind { kOpenAiCompatible, kAnthropic, kGemini, kScripted };

std::string_view to_string(ProviderKind kind);
std::optional<ProviderKind> provider_kind_from_string(std::string_view text);

struct ProviderConfig {
  ProviderKind kind = ProviderKind::kScripted;
  std::string endpoint;  // full request URL; for scripted, the script file path
  std::string model_name;
  std::string api_key_env;  // empty: no key required (local servers)
  double price_in = 0.0;    // dollars per million input tokens
  double price_out = 0.0;   // dollars per million output tokens
  int max_retries = 3;
  double min_request_interval = 0.0;  // seconds
  double timeout_seconds = 120.0;
};

/// Reads a provider block. Relative script paths resolve against `base_dir`.
ProviderConfig provider_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ProviderConfig& config);

/// Cents for one call: 100 * (in * price_in + out * price_out) / 1e6.
double estimate_cost(std::int64_t input_tokens, std::int64_t output_tokens, const ProviderConfig& config);

// --- errors ----------------------------------------------------------------

class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public ClientError {
 public:
  using ClientError::ClientError;
};

/// Missing or rejected credentials. Never retried.
class AuthError : public ClientError {
 public:
  using ClientError::ClientError;
};

/// Rate limiting, server errors, timeouts. Retried with backoff.
class TransientError : public ClientError {
 public:
  using ClientError::ClientError;
};

/// Non-retryable rejection of a well-formed request (HTTP 4xx other than auth/429).
class RequestRejected : public ClientError {
 public:
  using ClientError::ClientError;
};

class RetriesExhausted : public ClientError {
 public:
  RetriesExhausted(int attempts, std::string last_cause)
      : ClientError("gave up after " + std::to_string(attempts) + " attempts: " + last_cause),
        attempts_(attempts),
        last_cause_(std::move(last_cause)) {}
  int attempts() const noexcept { return attempts_; }
  const std::string& last_cause() const noexcept { return last_cause_; }

 private:
  int attempts_;
  std::string last_cause_;
};

/// Provider payload lacking an expected field.
class PayloadError : public ClientError {
 public:
  explicit PayloadError(std::string field)
      : ClientError("malformed provider payload: missing '" + field + "'"), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ScriptMissingError : public ClientError {
 public:
  explicit ScriptMissingError(const RequestKey& key)
      : ClientError("no script entry for " + to_string(key)), key_(key) {}
  const RequestKey& key() const noexcept { return key_; }

 private:
  RequestKey key_;
};

// --- time ------------------------------------------------------------------

class Clock {
 public:
  using duration = std::chrono::nanoseconds;
  using time_point = std::chrono::time_point<std::chrono::steady_clock, duration>;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(duration d) = 0;
};

std::shared_ptr<Clock> system_clock();

/// Spaces successive acquire() calls at least `min_interval` apart. Safe to
/// call from several threads; each caller reserves the next free slot.
class RateLimiter {
 public:
  RateLimiter(double min_interval_seconds, std::shared_ptr<Clock> clock);
  void acquire();

 private:
  Clock::duration interval_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::optional<Clock::time_point> last_;
};

/// Exponential backoff with symmetric multiplicative jitter.
struct BackoffPolicy {
  double base_seconds = 1.0;
  double factor = 2.0;
  double jitter = 0.2;

  /// Delay before retry number `retry` (0-based).
  double delay(int retry, std::mt19937_64& rng) const;
};

// --- providers -------------------------------------------------------------

class Provider {
 public:
  explicit Provider(ProviderConfig config, std::shared_ptr<Clock> clock = system_clock());
  virtual ~Provider() = default;
  Provider(const Provider&) = delete;
  Provider& operator=(const Provider&) = delete;

  /// Credential check, rate limiting, then up to 1 + max_retries attempts.
  /// Transient failures back off and retry; anything else propagates at once.
  ChatResponse send(const ChatRequest& request);

  const ProviderConfig& config() const { return config_; }
  void set_backoff(BackoffPolicy policy, std::uint64_t seed = 0x5eed);

 protected:
  /// One transport round-trip. Leave latency negative to have send() measure
  /// it with the clock.
  virtual ChatResponse attempt(const ChatRequest& request) = 0;
  virtual void preflight() {}

  Clock& clock() { return *clock_; }

 private:
  ProviderConfig config_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
  std::mutex backoff_mutex_;
  BackoffPolicy backoff_;
  std::mt19937_64 rng_;
};

struct ScriptEntry {
  std::string text;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency = 0.0;
  int fail_times = 0;             // injected failures before the entry succeeds
  std::string fail_with = "transient";  // "transient" or "auth"
};

/// Deterministic test double keyed by (frame_id, stage).
class ScriptedProvider : public Provider {
 public:
  ScriptedProvider(ProviderConfig config, std::map<RequestKey, ScriptEntry> script,
                   std::shared_ptr<Clock> clock = system_clock());

  /// Every attempt, in arrival order.
  std::vector<RequestKey> call_log() const;
  std::size_t call_count() const;

 protected:
  ChatResponse attempt(const ChatRequest& request) override;

 private:
  std::map<RequestKey, ScriptEntry> script_;
  mutable std::mutex mutex_;
  std::map<RequestKey, int> failures_served_;
  std::vector<RequestKey> log_;
};

/// Script file: {"entries": [{"frame_id", "stage", "text", "input_tokens",
/// "output_tokens", "latency"?, "fail_times"?, "fail_with"?}, ...]}.
std::map<RequestKey, ScriptEntry> load_script(const std::filesystem::path& path);
nlohmann::json script_to_json(const std::map<RequestKey, ScriptEntry>& script);

std::unique_ptr<Provider> make_provider(const ProviderConfig& config, std::shared_ptr<Clock> clock = system_clock());

}  // namespace vlmdrive
