#include "vlmdrive/http_provider.hpp"

#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

namespace vlmdrive {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' is not an absolute URL");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string data_url(const ImageAttachment& image) {
  return "data:" + image.media_type + ";base64," + httplib::detail::base64_encode(image.bytes);
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw PayloadError("<body>");
  return j;
}

const json& field(const json& j, const char* name, const std::string& path) {
  if (!j.is_object() || !j.contains(name)) throw PayloadError(path);
  return j.at(name);
}

std::int64_t count_field(const json& j, const char* name, const std::string& path) {
  const json& v = field(j, name, path);
  if (!v.is_number_integer()) throw PayloadError(path);
  return v.get<std::int64_t>();
}

void copy_if_string(const json& j, const char* name, std::map<std::string, std::string>& out) {
  if (j.contains(name) && j.at(name).is_string()) out[name] = j.at(name).get<std::string>();
}

}  // namespace

HttpResponse HttplibTransport::post(const HttpRequest& request, double timeout_seconds) {
  const auto url = split_url(request.url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  for (const auto& [k, v] : request.headers) headers.emplace(k, v);
  auto result = client.Post(url.path, headers, request.body, "application/json");
  if (!result) throw TransientError("transport failure: " + httplib::to_string(result.error()));
  return {result->status, result->body};
}

std::string default_endpoint(ProviderKind kind, const std::string& model_name) {
  switch (kind) {
    case ProviderKind::kOpenAiCompatible:
      return "https://api.openai.com/v1/chat/completions";
    case ProviderKind::kAnthropic:
      return "https://api.anthropic.com/v1/messages";
    case ProviderKind::kGemini:
      return "https://generativelanguage.googleapis.com/v1beta/models/" + model_name + ":generateContent";
    case ProviderKind::kScripted:
      break;
  }
  return {};
}

HttpRequest build_openai_request(const ProviderConfig& config, const ChatRequest& request,
                                 const std::string& api_key) {
  json messages = json::array();
  if (request.system_text) messages.push_back({{"role", "system"}, {"content", *request.system_text}});
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.user_text}});
  if (request.image) content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(*request.image)}}}});
  messages.push_back({{"role", "user"}, {"content", content}});

  json body = {{"model", config.model_name}, {"messages", messages}, {"max_tokens", request.max_output_tokens}};
  if (request.temperature) body["temperature"] = *request.temperature;

  HttpRequest out;
  out.url = config.endpoint.empty() ? default_endpoint(config.kind, config.model_name) : config.endpoint;
  if (!api_key.empty()) out.headers.emplace_back("Authorization", "Bearer " + api_key);
  out.body = body.dump();
  return out;
}

HttpRequest build_anthropic_request(const ProviderConfig& config, const ChatRequest& request,
                                    const std::string& api_key) {
  json content = json::array();
  if (request.image) {
    content.push_back({{"type", "image"},
                       {"source",
                        {{"type", "base64"},
                         {"media_type", request.image->media_type},
                         {"data", httplib::detail::base64_encode(request.image->bytes)}}}});
  }
  content.push_back({{"type", "text"}, {"text", request.user_text}});

  json body = {{"model", config.model_name},
               {"max_tokens", request.max_output_tokens},
               {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
  if (request.system_text) body["system"] = *request.system_text;
  if (request.temperature) body["temperature"] = *request.temperature;

  HttpRequest out;
  out.url = config.endpoint.empty() ? default_endpoint(config.kind, config.model_name) : config.endpoint;
  out.headers.emplace_back("x-api-key", api_key);
  out.headers.emplace_back("anthropic-version", "2023-06-01");
  out.body = body.dump();
  return out;
}

HttpRequest build_gemini_request(const ProviderConfig& config, const ChatRequest& request,
                                 const std::string& api_key) {
  json parts = json::array();
  if (request.image) {
    parts.push_back({{"inline_data",
                      {{"mime_type", request.image->media_type},
                       {"data", httplib::detail::base64_encode(request.image->bytes)}}}});
  }
  parts.push_back({{"text", request.user_text}});

  json generation = {{"maxOutputTokens", request.max_output_tokens}};
  if (request.temperature) generation["temperature"] = *request.temperature;
  json body = {{"contents", json::array({{{"role", "user"}, {"parts", parts}}})}, {"generationConfig", generation}};
  if (request.system_text) body["systemInstruction"] = {{"parts", json::array({{{"text", *request.system_text}}})}};

  HttpRequest out;
  out.url = config.endpoint.empty() ? default_endpoint(config.kind, config.model_name) : config.endpoint;
  out.headers.emplace_back("x-goog-api-key", api_key);
  out.body = body.dump();
  return out;
}

ChatResponse parse_openai_response(const std::string& body) {
  const json j = parse_body(body);
  const json& choices = field(j, "choices", "choices");
  if (!choices.is_array() || choices.empty()) throw PayloadError("choices[0]");
  const json& message = field(choices[0], "message", "choices[0].message");
  const json& content = field(message, "content", "choices[0].message.content");
  const json& usage = field(j, "usage", "usage");

  ChatResponse r;
  r.text = content.is_string() ? content.get<std::string>() : std::string{};
  r.input_tokens = count_field(usage, "prompt_tokens", "usage.prompt_tokens");
  r.output_tokens = count_field(usage, "completion_tokens", "usage.completion_tokens");
  r.latency = -1.0;
  copy_if_string(j, "id", r.provider_metadata);
  copy_if_string(j, "model", r.provider_metadata);
  copy_if_string(choices[0], "finish_reason", r.provider_metadata);
  return r;
}

ChatResponse parse_anthropic_response(const std::string& body) {
  const json j = parse_body(body);
  const json& content = field(j, "content", "content");
  if (!content.is_array()) throw PayloadError("content");
  const json& usage = field(j, "usage", "usage");

  ChatResponse r;
  for (const auto& block : content) {
    if (block.value("type", std::string{}) == "text") r.text += block.value("text", std::string{});
  }
  r.input_tokens = count_field(usage, "input_tokens", "usage.input_tokens");
  r.output_tokens = count_field(usage, "output_tokens", "usage.output_tokens");
  r.latency = -1.0;
  copy_if_string(j, "id", r.provider_metadata);
  copy_if_string(j, "model", r.provider_metadata);
  copy_if_string(j, "stop_reason", r.provider_metadata);
  return r;
}

ChatResponse parse_gemini_response(const std::string& body) {
  const json j = parse_body(body);
  const json& candidates = field(j, "candidates", "candidates");
  if (!candidates.is_array() || candidates.empty()) throw PayloadError("candidates[0]");
  const json& content = field(candidates[0], "content", "candidates[0].content");
  const json& usage = field(j, "usageMetadata", "usageMetadata");

  ChatResponse r;
  if (content.contains("parts") && content.at("parts").is_array()) {
    for (const auto& part : content.at("parts")) {
      if (part.contains("text") && !part.value("thought", false)) r.text += part.at("text").get<std::string>();
    }
  }
  r.input_tokens = count_field(usage, "promptTokenCount", "usageMetadata.promptTokenCount");
  // Absent when the model produced no visible output.
  r.output_tokens = usage.contains("candidatesTokenCount")
                        ? count_field(usage, "candidatesTokenCount", "usageMetadata.candidatesTokenCount")
                        : 0;
  r.latency = -1.0;
  if (usage.contains("thoughtsTokenCount")) {
    r.provider_metadata["thoughtsTokenCount"] = usage.at("thoughtsTokenCount").dump();
  }
  copy_if_string(j, "modelVersion", r.provider_metadata);
  copy_if_string(candidates[0], "finishReason", r.provider_metadata);
  return r;
}

void check_http_status(const HttpResponse& response) {
  const int s = response.status;
  if (s >= 200 && s < 300) return;
  const std::string detail = "HTTP " + std::to_string(s) + ": " + response.body.substr(0, 300);
  if (s == 401 || s == 403) throw AuthError(detail);
  if (s == 408 || s == 429 || s >= 500) throw TransientError(detail);
  throw RequestRejected(detail);
}

HttpProvider::HttpProvider(ProviderConfig config, std::shared_ptr<HttpTransport> transport,
                           std::shared_ptr<Clock> clock)
    : Provider(std::move(config), std::move(clock)), transport_(std::move(transport)) {}

std::string HttpProvider::api_key() const {
  const auto& name = config().api_key_env;
  if (name.empty()) return {};
  const char* value = std::getenv(name.c_str());
  return value ? std::string(value) : std::string{};
}

void HttpProvider::preflight() {
  const auto& name = config().api_key_env;
  if (name.empty()) {
    if (config().kind == ProviderKind::kOpenAiCompatible) return;
    throw AuthError("provider '" + std::string(to_string(config().kind)) + "' requires api_key_env");
  }
  const char* value = std::getenv(name.c_str());
  if (value == nullptr || *value == '\0') throw AuthError("environment variable " + name + " is not set");
}

ChatResponse HttpProvider::attempt(const ChatRequest& request) {
  const std::string key = api_key();
  HttpRequest http;
  switch (config().kind) {
    case ProviderKind::kOpenAiCompatible:
      http = build_openai_request(config(), request, key);
      break;
    case ProviderKind::kAnthropic:
      http = build_anthropic_request(config(), request, key);
      break;
    case ProviderKind::kGemini:
      http = build_gemini_request(config(), request, key);
      break;
    case ProviderKind::kScripted:
      throw ConfigError("scripted provider routed to HTTP transport");
  }
  const HttpResponse response = transport_->post(http, config().timeout_seconds);
  check_http_status(response);
  switch (config().kind) {
    case ProviderKind::kAnthropic:
      return parse_anthropic_response(response.body);
    case ProviderKind::kGemini:
      return parse_gemini_response(response.body);
    default:
      return parse_openai_response(response.body);
  }
}

}  // namespace vlmdrive
