#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "test_support.hpp"
#include "vlmdrive/http_provider.hpp"
#include "vlmdrive/vlm_client.hpp"

// After Eigen: resolv.h defines _res as a macro.
#include <httplib.h>

using namespace vlmdrive;
using namespace vlmdrive::testing;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

ChatRequest keyed(const std::string& frame, int stage, std::string text = "describe") {
  ChatRequest r;
  r.user_text = std::move(text);
  r.key = RequestKey{frame, stage};
  return r;
}

double seconds(Clock::duration d) { return std::chrono::duration<double>(d).count(); }

class RecordingTransport : public HttpTransport {
 public:
  std::vector<HttpResponse> replies;
  std::vector<HttpRequest> seen;
  HttpResponse post(const HttpRequest& request, double) override {
    seen.push_back(request);
    if (replies.empty()) throw TransientError("no response");
    HttpResponse r = replies.front();
    replies.erase(replies.begin());
    return r;
  }
};

const char* const kOpenAiOk =
    R"({"id":"x1","model":"m","choices":[{"message":{"content":"[(1,0)]"},"finish_reason":"stop"}],)"
    R"("usage":{"prompt_tokens":4402,"completion_tokens":341}})";

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (value) {
      ::setenv(name, value, 1);
    } else {
      ::unsetenv(name);
    }
  }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST(Cost, ReferenceTokenCounts) {
  ProviderConfig c;
  c.price_in = 2.5;
  c.price_out = 10.0;
  EXPECT_NEAR(estimate_cost(4402, 341, c), 1.4415, 1e-12);
  c.price_in = 1.25;
  EXPECT_NEAR(estimate_cost(3868, 3856, c), 4.3395, 1e-12);
  EXPECT_EQ(estimate_cost(0, 0, c), 0.0);
}

TEST(Cost, LinearInTokens) {
  std::mt19937_64 rng(3);
  ProviderConfig c;
  c.price_in = 3.0;
  c.price_out = 15.0;
  for (int i = 0; i < 200; ++i) {
    const std::int64_t a = static_cast<std::int64_t>(rng() % 100000), b = static_cast<std::int64_t>(rng() % 100000);
    const std::int64_t x = static_cast<std::int64_t>(rng() % 10000), y = static_cast<std::int64_t>(rng() % 10000);
    ASSERT_NEAR(estimate_cost(a + b, x + y, c), estimate_cost(a, x, c) + estimate_cost(b, y, c), 1e-9);
  }
}

TEST(ProviderConfigJson, RoundTripAndValidation) {
  const json j = {{"kind", "anthropic"},
                  {"model_name", "claude-x"},
                  {"endpoint", "https://example.invalid/v1/messages"},
                  {"api_key_env", "K"},
                  {"price_in", 3.0},
                  {"price_out", 15.0},
                  {"max_retries", 2},
                  {"min_request_interval", 0.5}};
  const ProviderConfig c = provider_config_from_json(j);
  EXPECT_EQ(c.kind, ProviderKind::kAnthropic);
  EXPECT_EQ(c.max_retries, 2);
  EXPECT_EQ(provider_config_from_json(to_json(c)).model_name, "claude-x");

  EXPECT_THROW(provider_config_from_json({{"kind", "carrier-pigeon"}, {"model_name", "m"}}), ConfigError);
  EXPECT_THROW(provider_config_from_json({{"kind", "gemini"}}), ConfigError);
  EXPECT_THROW(provider_config_from_json({{"kind", "gemini"}, {"model_name", "m"}, {"price_in", -1.0}}), ConfigError);
  EXPECT_THROW(provider_config_from_json({{"kind", "scripted"}, {"model_name", "m"}}), ConfigError);
  EXPECT_THROW(provider_config_from_json(json::array()), ConfigError);
}

TEST(ProviderConfigJson, ScriptPathResolvesAgainstBase) {
  const auto c = provider_config_from_json({{"kind", "scripted"}, {"model_name", "m"}, {"endpoint", "s.json"}},
                                           "/tmp/base");
  EXPECT_EQ(std::filesystem::path(c.endpoint), std::filesystem::path("/tmp/base/s.json"));
}

TEST(Scripted, ReturnsEntryAndLogsCalls) {
  auto script = script_for("f1", "[(1,0)]", 500, 50);
  ScriptedProvider p(scripted_config(), script);
  const auto r = p.send(keyed("f1", 3));
  EXPECT_EQ(r.text, "[(1,0)]");
  EXPECT_EQ(r.input_tokens, 502);
  EXPECT_EQ(r.output_tokens, 52);
  EXPECT_EQ(r.latency, 0.0);
  EXPECT_EQ(p.call_count(), 1u);
  EXPECT_EQ(p.call_log()[0], (RequestKey{"f1", 3}));
}

TEST(Scripted, MissingEntryIsNotRetried) {
  ScriptedProvider p(scripted_config(), {});
  EXPECT_THROW(p.send(keyed("nope", 1)), ScriptMissingError);
  EXPECT_EQ(p.call_count(), 1u);
}

TEST(Scripted, RequestValidation) {
  ScriptedProvider p(scripted_config(), script_for("f", "x"));
  EXPECT_THROW(p.send(keyed("f", 1, "")), ConfigError);
  ChatRequest r = keyed("f", 1);
  r.temperature = 3.0;
  EXPECT_THROW(p.send(r), ConfigError);
  r.temperature.reset();
  r.image = ImageAttachment{"", "image/jpeg"};
  EXPECT_THROW(p.send(r), ConfigError);
  ChatRequest unkeyed;
  unkeyed.user_text = "hi";
  EXPECT_THROW(p.send(unkeyed), ConfigError);
  EXPECT_EQ(p.call_count(), 0u);
}

TEST(Retry, TransientFailuresBackOffThenSucceed) {
  auto clock = std::make_shared<FakeClock>();
  auto script = script_for("f", "ok");
  script[{"f", 1}].fail_times = 2;
  ScriptedProvider p(scripted_config(), script, clock);
  const auto r = p.send(keyed("f", 1));
  EXPECT_EQ(r.text, (script[{"f", 1}].text));
  EXPECT_EQ(p.call_count(), 3u);
  const auto sleeps = clock->sleeps();
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_GE(seconds(sleeps[0]), 0.8);
  EXPECT_LE(seconds(sleeps[0]), 1.2);
  EXPECT_GE(seconds(sleeps[1]), 1.6);
  EXPECT_LE(seconds(sleeps[1]), 2.4);
}

TEST(Retry, ExhaustionReportsAttempts) {
  auto clock = std::make_shared<FakeClock>();
  auto script = script_for("f", "ok");
  script[{"f", 2}].fail_times = 10;
  auto config = scripted_config();
  config.max_retries = 3;
  ScriptedProvider p(config, script, clock);
  try {
    p.send(keyed("f", 2));
    FAIL();
  } catch (const RetriesExhausted& e) {
    EXPECT_EQ(e.attempts(), 4);
    EXPECT_NE(e.last_cause().find("transient"), std::string::npos);
  }
  EXPECT_EQ(p.call_count(), 4u);
}

TEST(Retry, AuthFailureNeverRetried) {
  auto clock = std::make_shared<FakeClock>();
  auto script = script_for("f", "ok");
  script[{"f", 1}].fail_times = 1;
  script[{"f", 1}].fail_with = "auth";
  ScriptedProvider p(scripted_config(), script, clock);
  EXPECT_THROW(p.send(keyed("f", 1)), AuthError);
  EXPECT_EQ(p.call_count(), 1u);
  EXPECT_TRUE(clock->sleeps().empty());
}

TEST(Retry, ZeroRetriesMeansOneAttempt) {
  auto script = script_for("f", "ok");
  script[{"f", 1}].fail_times = 1;
  auto config = scripted_config();
  config.max_retries = 0;
  ScriptedProvider p(config, script, std::make_shared<FakeClock>());
  EXPECT_THROW(p.send(keyed("f", 1)), RetriesExhausted);
  EXPECT_EQ(p.call_count(), 1u);
}

TEST(Backoff, GrowsGeometricallyWithinJitter) {
  BackoffPolicy b;
  std::mt19937_64 rng(1);
  for (int retry = 0; retry < 6; ++retry) {
    for (int i = 0; i < 100; ++i) {
      const double d = b.delay(retry, rng);
      const double nominal = std::pow(2.0, retry);
      ASSERT_GE(d, 0.8 * nominal);
      ASSERT_LE(d, 1.2 * nominal);
    }
  }
}

TEST(RateLimiter, SpacesSuccessiveCalls) {
  auto clock = std::make_shared<FakeClock>();
  RateLimiter limiter(0.5, clock);
  std::vector<Clock::time_point> times;
  for (int i = 0; i < 5; ++i) {
    limiter.acquire();
    times.push_back(clock->now());
  }
  for (std::size_t i = 1; i < times.size(); ++i) EXPECT_GE(seconds(times[i] - times[i - 1]), 0.5 - 1e-12);
  clock->advance(10s);
  const auto before = clock->sleeps().size();
  limiter.acquire();
  EXPECT_EQ(clock->sleeps().size(), before);  // idle long enough, no wait
}

TEST(RateLimiter, ProviderHonoursInterval) {
  auto clock = std::make_shared<FakeClock>();
  auto config = scripted_config();
  config.min_request_interval = 2.0;
  ScriptedProvider p(config, script_for("f", "ok"), clock);
  const auto t0 = clock->now();
  for (int s = 1; s <= 3; ++s) p.send(keyed("f", s));
  EXPECT_GE(seconds(clock->now() - t0), 4.0 - 1e-12);
}

TEST(RateLimiter, ConcurrentCallersGetDistinctSlots) {
  auto clock = system_clock();
  RateLimiter limiter(0.02, clock);
  std::mutex m;
  std::vector<Clock::time_point> times;
  std::vector<std::jthread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] {
      limiter.acquire();
      std::lock_guard lock(m);
      times.push_back(clock->now());
    });
  }
  threads.clear();
  std::sort(times.begin(), times.end());
  EXPECT_GE(seconds(times.back() - times.front()), 5 * 0.02 - 0.002);
}

TEST(ScriptFile, RoundTrip) {
  TempDir dir;
  auto script = script_for("f", "text", 7, 8);
  script[{"f", 2}].fail_times = 1;
  script[{"f", 2}].latency = 0.25;
  write_text(dir / "s.json", script_to_json(script).dump());
  const auto back = load_script(dir / "s.json");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.at({"f", 2}).fail_times, 1);
  EXPECT_EQ(back.at({"f", 2}).latency, 0.25);
  EXPECT_EQ(back.at({"f", 3}).text, "text");
  EXPECT_THROW(load_script(dir / "missing.json"), ConfigError);
  write_text(dir / "bad.json", R"({"entries":[{"frame_id":"f"}]})");
  EXPECT_THROW(load_script(dir / "bad.json"), ConfigError);
}

TEST(MakeProvider, ScriptedLoadsFile) {
  TempDir dir;
  write_text(dir / "s.json", script_to_json(script_for("f", "hello")).dump());
  auto p = make_provider(scripted_config((dir / "s.json").string()));
  EXPECT_EQ(p->send(keyed("f", 3)).text, "hello");
}

TEST(HttpStatus, Classification) {
  EXPECT_NO_THROW(check_http_status({200, ""}));
  EXPECT_THROW(check_http_status({401, ""}), AuthError);
  EXPECT_THROW(check_http_status({403, ""}), AuthError);
  EXPECT_THROW(check_http_status({429, ""}), TransientError);
  EXPECT_THROW(check_http_status({408, ""}), TransientError);
  EXPECT_THROW(check_http_status({503, ""}), TransientError);
  EXPECT_THROW(check_http_status({400, ""}), RequestRejected);
  EXPECT_THROW(check_http_status({404, ""}), RequestRejected);
}

TEST(WireFormat, OpenAiRequest) {
  ProviderConfig c;
  c.kind = ProviderKind::kOpenAiCompatible;
  c.model_name = "gpt-x";
  ChatRequest r;
  r.user_text = "describe";
  r.system_text = "be brief";
  r.image = ImageAttachment{"abc", "image/jpeg"};
  r.max_output_tokens = 77;
  r.temperature = 0.0;
  const auto h = build_openai_request(c, r, "sk-1");
  EXPECT_EQ(h.url, "https://api.openai.com/v1/chat/completions");
  EXPECT_EQ(h.headers.at(0), (std::pair<std::string, std::string>{"Authorization", "Bearer sk-1"}));
  const json body = json::parse(h.body);
  EXPECT_EQ(body["model"], "gpt-x");
  EXPECT_EQ(body["max_tokens"], 77);
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"][0]["text"], "describe");
  EXPECT_EQ(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,YWJj");
  // Local servers need no key.
  EXPECT_TRUE(build_openai_request(c, r, "").headers.empty());
}

TEST(WireFormat, AnthropicRequest) {
  ProviderConfig c;
  c.kind = ProviderKind::kAnthropic;
  c.model_name = "claude-x";
  ChatRequest r;
  r.user_text = "describe";
  r.system_text = "sys";
  r.image = ImageAttachment{"abc", "image/png"};
  const auto h = build_anthropic_request(c, r, "k");
  EXPECT_EQ(h.url, "https://api.anthropic.com/v1/messages");
  const json body = json::parse(h.body);
  EXPECT_EQ(body["system"], "sys");
  EXPECT_EQ(body["max_tokens"], 1024);
  EXPECT_EQ(body["messages"][0]["content"][0]["source"]["data"], "YWJj");
  EXPECT_EQ(body["messages"][0]["content"][0]["source"]["media_type"], "image/png");
  EXPECT_EQ(body["messages"][0]["content"][1]["text"], "describe");
  bool has_version = false;
  for (const auto& [k, v] : h.headers) has_version |= (k == "anthropic-version");
  EXPECT_TRUE(has_version);
}

TEST(WireFormat, GeminiRequest) {
  ProviderConfig c;
  c.kind = ProviderKind::kGemini;
  c.model_name = "gemini-x";
  ChatRequest r;
  r.user_text = "describe";
  r.image = ImageAttachment{"abc", "image/jpeg"};
  r.max_output_tokens = 55;
  const auto h = build_gemini_request(c, r, "g");
  EXPECT_EQ(h.url, "https://generativelanguage.googleapis.com/v1beta/models/gemini-x:generateContent");
  const json body = json::parse(h.body);
  EXPECT_EQ(body["generationConfig"]["maxOutputTokens"], 55);
  EXPECT_EQ(body["contents"][0]["parts"][0]["inline_data"]["data"], "YWJj");
  EXPECT_EQ(body["contents"][0]["parts"][1]["text"], "describe");
  EXPECT_FALSE(body.contains("systemInstruction"));
}

TEST(WireFormat, ResponseParsers) {
  const auto o = parse_openai_response(kOpenAiOk);
  EXPECT_EQ(o.text, "[(1,0)]");
  EXPECT_EQ(o.input_tokens, 4402);
  EXPECT_EQ(o.output_tokens, 341);
  EXPECT_LT(o.latency, 0.0);
  EXPECT_EQ(o.provider_metadata.at("finish_reason"), "stop");

  const auto a = parse_anthropic_response(
      R"({"content":[{"type":"text","text":"ab"},{"type":"tool_use"},{"type":"text","text":"c"}],)"
      R"("usage":{"input_tokens":10,"output_tokens":3},"stop_reason":"end_turn"})");
  EXPECT_EQ(a.text, "abc");
  EXPECT_EQ(a.output_tokens, 3);

  const auto g = parse_gemini_response(
      R"({"candidates":[{"content":{"parts":[{"text":"x","thought":true},{"text":"y"}]}}],)"
      R"("usageMetadata":{"promptTokenCount":9,"candidatesTokenCount":4,"thoughtsTokenCount":100}})");
  EXPECT_EQ(g.text, "y");
  EXPECT_EQ(g.input_tokens, 9);
  EXPECT_EQ(g.output_tokens, 4);
  EXPECT_EQ(g.provider_metadata.at("thoughtsTokenCount"), "100");
}

TEST(WireFormat, MissingFieldsNamed) {
  try {
    parse_openai_response(R"({"choices":[{"message":{"content":"x"}}]})");
    FAIL();
  } catch (const PayloadError& e) {
    EXPECT_EQ(e.field(), "usage");
  }
  try {
    parse_anthropic_response(R"({"content":[],"usage":{"input_tokens":1}})");
    FAIL();
  } catch (const PayloadError& e) {
    EXPECT_EQ(e.field(), "usage.output_tokens");
  }
  EXPECT_THROW(parse_gemini_response("not json"), PayloadError);
  EXPECT_THROW(parse_openai_response(R"({"choices":[],"usage":{}})"), PayloadError);
}

TEST(HttpProvider, MissingKeyFailsBeforeAnyRequest) {
  ScopedEnv env("VLMDRIVE_TEST_UNSET_KEY", nullptr);
  auto transport = std::make_shared<RecordingTransport>();
  ProviderConfig c;
  c.kind = ProviderKind::kAnthropic;
  c.model_name = "m";
  c.api_key_env = "VLMDRIVE_TEST_UNSET_KEY";
  HttpProvider p(c, transport, std::make_shared<FakeClock>());
  EXPECT_THROW(p.send(keyed("f", 1)), AuthError);
  EXPECT_TRUE(transport->seen.empty());
  c.api_key_env.clear();
  HttpProvider keyless(c, transport, std::make_shared<FakeClock>());
  EXPECT_THROW(keyless.send(keyed("f", 1)), AuthError);
}

TEST(HttpProvider, RetriesRateLimitThenParses) {
  ScopedEnv env("VLMDRIVE_TEST_KEY", "secret");
  auto transport = std::make_shared<RecordingTransport>();
  transport->replies = {{429, "slow down"}, {500, "oops"}, {200, kOpenAiOk}};
  ProviderConfig c;
  c.kind = ProviderKind::kOpenAiCompatible;
  c.model_name = "m";
  c.endpoint = "http://localhost:1/v1/chat/completions";
  c.api_key_env = "VLMDRIVE_TEST_KEY";
  auto clock = std::make_shared<FakeClock>();
  HttpProvider p(c, transport, clock);
  const auto r = p.send(keyed("f", 1));
  EXPECT_EQ(r.input_tokens, 4402);
  EXPECT_EQ(transport->seen.size(), 3u);
  EXPECT_EQ(clock->sleeps().size(), 2u);
  EXPECT_EQ(r.latency, 0.0);  // fake clock does not advance during the attempt
}

TEST(HttpProvider, UnauthorizedNotRetried) {
  ScopedEnv env("VLMDRIVE_TEST_KEY", "secret");
  auto transport = std::make_shared<RecordingTransport>();
  transport->replies = {{401, "bad key"}, {200, kOpenAiOk}};
  ProviderConfig c;
  c.kind = ProviderKind::kOpenAiCompatible;
  c.model_name = "m";
  c.api_key_env = "VLMDRIVE_TEST_KEY";
  HttpProvider p(c, transport, std::make_shared<FakeClock>());
  EXPECT_THROW(p.send(keyed("f", 1)), AuthError);
  EXPECT_EQ(transport->seen.size(), 1u);
}

TEST(HttpProvider, LocalServerEndToEnd) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string last_auth;
  std::string last_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 429;
      res.set_content("{}", "application/json");
      return;
    }
    last_auth = req.get_header_value("Authorization");
    last_body = req.body;
    res.set_content(kOpenAiOk, "application/json");
  });
  server.Post("/v1/messages", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"content":[{"type":"text","text":"hi"}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::jthread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ScopedEnv env("VLMDRIVE_TEST_KEY", "secret");
  ProviderConfig c;
  c.kind = ProviderKind::kOpenAiCompatible;
  c.model_name = "local";
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.api_key_env = "VLMDRIVE_TEST_KEY";
  c.timeout_seconds = 5;
  auto provider = std::make_unique<HttpProvider>(c, std::make_shared<HttplibTransport>());
  provider->set_backoff({.base_seconds = 0.001});
  ChatRequest req = keyed("f", 1);
  req.image = ImageAttachment{"\xff\xd8\xff", "image/jpeg"};
  const auto r = provider->send(req);
  EXPECT_EQ(r.text, "[(1,0)]");
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(last_auth, "Bearer secret");
  EXPECT_GE(r.latency, 0.0);
  EXPECT_EQ(json::parse(last_body)["messages"][0]["content"][1]["image_url"]["url"], "data:image/jpeg;base64,/9j/");

  c.kind = ProviderKind::kAnthropic;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/messages";
  HttpProvider anthropic(c, std::make_shared<HttplibTransport>());
  try {
    anthropic.send(keyed("f", 1));
    FAIL();
  } catch (const PayloadError& e) {
    EXPECT_EQ(e.field(), "usage");
  }
  server.stop();
}

TEST(HttpProvider, ConnectionRefusedIsTransient) {
  ScopedEnv env("VLMDRIVE_TEST_KEY", "secret");
  ProviderConfig c;
  c.kind = ProviderKind::kOpenAiCompatible;
  c.model_name = "local";
  c.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  c.timeout_seconds = 1;
  c.max_retries = 1;
  HttpProvider p(c, std::make_shared<HttplibTransport>());
  p.set_backoff({.base_seconds = 0.001});
  EXPECT_THROW(p.send(keyed("f", 1)), RetriesExhausted);
}
