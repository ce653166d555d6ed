#pragma once

// HTTP-backed providers: one request builder and response reader per wire
// format, behind a replaceable transport.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vlmdrive/vlm_client.hpp"

namespace vlmdrive {

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws TransientError when no response arrives (connect failure, timeout).
  virtual HttpResponse post(const HttpRequest& request, double timeout_seconds) = 0;
};

/// cpp-httplib client; supports http:// and https:// URLs.
class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request, double timeout_seconds) override;
};

std::string default_endpoint(ProviderKind kind, const std::string& model_name);

HttpRequest build_openai_request(const ProviderConfig& config, const ChatRequest& request, const std::string& api_key);
HttpRequest build_anthropic_request(const ProviderConfig& config, const ChatRequest& request,
                                    const std::string& api_key);
HttpRequest build_gemini_request(const ProviderConfig& config, const ChatRequest& request, const std::string& api_key);

ChatResponse parse_openai_response(const std::string& body);
ChatResponse parse_anthropic_response(const std::string& body);
ChatResponse parse_gemini_response(const std::string& body);

/// Maps an HTTP status to the error taxonomy; returns normally on 2xx.
void check_http_status(const HttpResponse& response);

class HttpProvider : public Provider {
 public:
  HttpProvider(ProviderConfig config, std::shared_ptr<HttpTransport> transport,
               std::shared_ptr<Clock> clock = system_clock());

 protected:
  void preflight() override;
  ChatResponse attempt(const ChatRequest& request) override;

 private:
  std::string api_key() const;

  std::shared_ptr<HttpTransport> transport_;
};

}  // namespace vlmdrive
