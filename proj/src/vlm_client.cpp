#include "vlmdrive/vlm_client.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <thread>
#include <utility>

#include "vlmdrive/http_provider.hpp"

namespace vlmdrive {

std::string to_string(const RequestKey& key) {
  return "(" + key.frame_id + ", stage " + std::to_string(key.stage) + ")";
}

namespace {

constexpr std::array<std::pair<ProviderKind, std::string_view>, 4> kKindNames{{
    {ProviderKind::kOpenAiCompatible, "openai-compatible"},
    {ProviderKind::kAnthropic, "anthropic"},
    {ProviderKind::kGemini, "gemini"},
    {ProviderKind::kScripted, "scripted"},
}};

std::chrono::nanoseconds to_duration(double seconds) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(seconds));
}

class SteadyClock final : public Clock {
 public:
  time_point now() override { return std::chrono::time_point_cast<duration>(std::chrono::steady_clock::now()); }
  void sleep_for(duration d) override { std::this_thread::sleep_for(d); }
};

}  // namespace

std::string_view to_string(ProviderKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ProviderKind> provider_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

ProviderConfig provider_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("provider: expected object");
  ProviderConfig c;
  const auto kind_text = j.value("kind", std::string{});
  const auto kind = provider_kind_from_string(kind_text);
  if (!kind) throw ConfigError("provider.kind: unknown kind '" + kind_text + "'");
  c.kind = *kind;
  c.endpoint = j.value("endpoint", std::string{});
  c.model_name = j.value("model_name", std::string{});
  c.api_key_env = j.value("api_key_env", std::string{});
  c.price_in = j.value("price_in", 0.0);
  c.price_out = j.value("price_out", 0.0);
  c.max_retries = j.value("max_retries", 3);
  c.min_request_interval = j.value("min_request_interval", 0.0);
  c.timeout_seconds = j.value("timeout_seconds", 120.0);
  if (c.price_in < 0.0 || c.price_out < 0.0) throw ConfigError("provider: prices must be >= 0");
  if (c.max_retries < 0) throw ConfigError("provider.max_retries must be >= 0");
  if (c.min_request_interval < 0.0) throw ConfigError("provider.min_request_interval must be >= 0");
  if (c.model_name.empty()) throw ConfigError("provider.model_name is required");
  if (c.kind == ProviderKind::kScripted) {
    if (c.endpoint.empty()) throw ConfigError("provider.endpoint must name the script file for scripted providers");
    std::filesystem::path p(c.endpoint);
    if (p.is_relative() && !base_dir.empty()) c.endpoint = (base_dir / p).lexically_normal().string();
  }
  return c;
}

nlohmann::json to_json(const ProviderConfig& c) {
  return {
      {"kind", to_string(c.kind)},
      {"endpoint", c.endpoint},
      {"model_name", c.model_name},
      {"api_key_env", c.api_key_env},
      {"price_in", c.price_in},
      {"price_out", c.price_out},
      {"max_retries", c.max_retries},
      {"min_request_interval", c.min_request_interval},
      {"timeout_seconds", c.timeout_seconds},
  };
}

double estimate_cost(std::int64_t input_tokens, std::int64_t output_tokens, const ProviderConfig& config) {
  const double dollars = (static_cast<double>(input_tokens) * config.price_in +
                          static_cast<double>(output_tokens) * config.price_out) /
                         1e6;
  return 100.0 * dollars;
}

std::shared_ptr<Clock> system_clock() {
  static const auto clock = std::make_shared<SteadyClock>();
  return clock;
}

// --- RateLimiter -----------------------------------------------------------

RateLimiter::RateLimiter(double min_interval_seconds, std::shared_ptr<Clock> clock)
    : interval_(to_duration(min_interval_seconds)), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  Clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = clock_->now();
    slot = last_ ? std::max(now, *last_ + interval_) : now;
    last_ = slot;
  }
  const auto wait = slot - clock_->now();
  if (wait > Clock::duration::zero()) clock_->sleep_for(wait);
}

// --- BackoffPolicy ---------------------------------------------------------

double BackoffPolicy::delay(int retry, std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> jitter_dist(1.0 - jitter, 1.0 + jitter);
  return base_seconds * std::pow(factor, retry) * jitter_dist(rng);
}

// --- Provider --------------------------------------------------------------

Provider::Provider(ProviderConfig config, std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      clock_(std::move(clock)),
      limiter_(config_.min_request_interval, clock_),
      rng_(0x5eed) {}

void Provider::set_backoff(BackoffPolicy policy, std::uint64_t seed) {
  std::lock_guard lock(backoff_mutex_);
  backoff_ = policy;
  rng_.seed(seed);
}

ChatResponse Provider::send(const ChatRequest& request) {
  if (request.user_text.empty()) throw ConfigError("chat request needs non-empty user text");
  if (request.image && request.image->bytes.empty()) throw ConfigError("attached image is empty");
  if (request.temperature && (*request.temperature < 0.0 || *request.temperature > 2.0)) {
    throw ConfigError("temperature must lie in [0, 2]");
  }
  preflight();

  const int attempts = 1 + config_.max_retries;
  std::string last_cause;
  for (int i = 0; i < attempts; ++i) {
    if (i > 0) {
      double wait = 0.0;
      {
        std::lock_guard lock(backoff_mutex_);
        wait = backoff_.delay(i - 1, rng_);
      }
      clock_->sleep_for(to_duration(wait));
    }
    limiter_.acquire();
    const auto start = clock_->now();
    try {
      ChatResponse response = attempt(request);
      if (response.latency < 0.0) {
        response.latency = std::chrono::duration<double>(clock_->now() - start).count();
      }
      return response;
    } catch (const TransientError& e) {
      last_cause = e.what();
    }
  }
  throw RetriesExhausted(attempts, last_cause);
}

// --- ScriptedProvider ------------------------------------------------------

ScriptedProvider::ScriptedProvider(ProviderConfig config, std::map<RequestKey, ScriptEntry> script,
                                   std::shared_ptr<Clock> clock)
    : Provider(std::move(config), std::move(clock)), script_(std::move(script)) {}

ChatResponse ScriptedProvider::attempt(const ChatRequest& request) {
  if (!request.key) throw ConfigError("scripted backend needs a request key");
  const RequestKey& key = *request.key;
  std::lock_guard lock(mutex_);
  log_.push_back(key);
  const auto it = script_.find(key);
  if (it == script_.end()) throw ScriptMissingError(key);
  const ScriptEntry& entry = it->second;
  int& served = failures_served_[key];
  if (served < entry.fail_times) {
    ++served;
    if (entry.fail_with == "auth") throw AuthError("scripted auth failure for " + to_string(key));
    throw TransientError("scripted transient failure for " + to_string(key));
  }
  ChatResponse r;
  r.text = entry.text;
  r.input_tokens = entry.input_tokens;
  r.output_tokens = entry.output_tokens;
  r.latency = entry.latency;
  r.provider_metadata["backend"] = "scripted";
  return r;
}

std::vector<RequestKey> ScriptedProvider::call_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::size_t ScriptedProvider::call_count() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

std::map<RequestKey, ScriptEntry> load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script file " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw ConfigError("script file " + path.string() + " must be an object with an 'entries' array");
  }
  std::map<RequestKey, ScriptEntry> script;
  for (const auto& e : j["entries"]) {
    if (!e.is_object() || !e.contains("frame_id") || !e.contains("stage") || !e.contains("text")) {
      throw ConfigError("script entry needs frame_id, stage and text");
    }
    RequestKey key{e["frame_id"].get<std::string>(), e["stage"].get<int>()};
    ScriptEntry entry;
    entry.text = e["text"].get<std::string>();
    entry.input_tokens = e.value("input_tokens", std::int64_t{0});
    entry.output_tokens = e.value("output_tokens", std::int64_t{0});
    entry.latency = e.value("latency", 0.0);
    entry.fail_times = e.value("fail_times", 0);
    entry.fail_with = e.value("fail_with", std::string("transient"));
    script[std::move(key)] = std::move(entry);
  }
  return script;
}

nlohmann::json script_to_json(const std::map<RequestKey, ScriptEntry>& script) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, e] : script) {
    entries.push_back({{"frame_id", key.frame_id},
                       {"stage", key.stage},
                       {"text", e.text},
                       {"input_tokens", e.input_tokens},
                       {"output_tokens", e.output_tokens},
                       {"latency", e.latency},
                       {"fail_times", e.fail_times},
                       {"fail_with", e.fail_with}});
  }
  return {{"entries", entries}};
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config, std::shared_ptr<Clock> clock) {
  if (config.kind == ProviderKind::kScripted) {
    return std::make_unique<ScriptedProvider>(config, load_script(config.endpoint), std::move(clock));
  }
  return std::make_unique<HttpProvider>(config, std::make_shared<HttplibTransport>(), std::move(clock));
}

}  // namespace vlmdrive
