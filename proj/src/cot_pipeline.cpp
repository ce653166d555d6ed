#include "vlmdrive/cot_pipeline.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "default_templates.hpp"
#include "vlmdrive/action_parser.hpp"
#include "vlmdrive/kinematics.hpp"

namespace vlmdrive {

namespace {

bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_'; }
bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

// Length of "{name}" at pos (including braces), or 0.
std::size_t match_placeholder(std::string_view s, std::size_t pos) {
  if (s[pos] != '{' || pos + 1 >= s.size() || !is_name_start(s[pos + 1])) return 0;
  std::size_t i = pos + 2;
  while (i < s.size() && is_name_char(s[i])) ++i;
  if (i >= s.size() || s[i] != '}') return 0;
  return i + 1 - pos;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read template " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_placeholders(const std::string& tmpl, const std::set<std::string>& expected, int stage) {
  const auto found = placeholders(tmpl);
  if (found == expected) return;
  std::string msg = "stage " + std::to_string(stage) + " template placeholders {";
  for (const auto& n : found) msg += " " + n;
  msg += " } differ from required {";
  for (const auto& n : expected) msg += " " + n;
  throw TemplateError(msg + " }");
}

double seconds_sum(const std::array<double, kStageCount>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace

PromptTemplates default_templates() {
  return {detail::kStage1Template, detail::kStage2Template, detail::kStage3Template};
}

std::set<std::string> placeholders(std::string_view tmpl) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const std::size_t n = match_placeholder(tmpl, i);
    if (n == 0) continue;
    names.emplace(tmpl.substr(i + 1, n - 2));
    i += n - 1;
  }
  return names;
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    const std::size_t n = match_placeholder(tmpl, i);
    if (n == 0) {
      out.push_back(tmpl[i++]);
      continue;
    }
    const std::string name(tmpl.substr(i + 1, n - 2));
    const auto it = values.find(name);
    if (it == values.end()) throw TemplateError("no value for placeholder {" + name + "}");
    out += it->second;
    i += n;
  }
  return out;
}

void validate_templates(const PromptTemplates& t) {
  check_placeholders(t.stage1, {}, 1);
  check_placeholders(t.stage2, {"history", "scene_description"}, 2);
  check_placeholders(t.stage3, {"intent", "scene_description"}, 3);
}

PromptTemplates load_templates(const std::array<std::filesystem::path, kStageCount>& paths) {
  PromptTemplates t{read_text(paths[0]), read_text(paths[1]), read_text(paths[2])};
  validate_templates(t);
  return t;
}

std::string format_history(std::span<const ActionState> history) {
  std::string out = "[";
  char buf[96];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s(%.2f, %.4f)", i == 0 ? "" : ", ", history[i].speed, history[i].curvature);
    out += buf;
  }
  out += "]";
  return out;
}

std::string media_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

bool is_frame_error(const FrameResult& result) {
  return result.error_class == ErrorClass::kTransport || result.error_class == ErrorClass::kImageUnreadable;
}

FrameResult run_frame(const Frame& frame, Provider& provider, const PromptTemplates& templates,
                      const PipelineOptions& options) {
  FrameResult result;
  result.frame_id = frame.frame_id;
  result.parse_status = ParseStatus::kFailed;

  const std::filesystem::path image_path = options.image_root / frame.image_path;
  ImageAttachment image;
  {
    std::ifstream in(image_path, std::ios::binary);
    if (in) image.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (image.bytes.empty()) {
    result.error_class = ErrorClass::kImageUnreadable;
    result.stage_texts[0] = "unreadable image: " + image_path.string();
    return result;
  }
  image.media_type = media_type_for(image_path);

  const std::string history_text = format_history(frame.history);
  for (std::size_t stage = 0; stage < kStageCount; ++stage) {
    ChatRequest request;
    request.system_text = options.system_text;
    request.max_output_tokens = options.max_output_tokens;
    request.temperature = options.temperature;
    request.key = RequestKey{frame.frame_id, static_cast<int>(stage + 1)};
    if (stage == 0 || options.image_all_stages) request.image = image;
    switch (stage) {
      case 0:
        request.user_text = fill_template(templates.stage1, {});
        break;
      case 1:
        request.user_text = fill_template(
            templates.stage2, {{"scene_description", result.stage_texts[0]}, {"history", history_text}});
        break;
      default:
        request.user_text = fill_template(
            templates.stage3, {{"scene_description", result.stage_texts[0]}, {"intent", result.stage_texts[1]}});
        break;
    }
    try {
      const ChatResponse response = provider.send(request);
      result.stage_texts[stage] = response.text;
      result.usage[stage] = {response.input_tokens, response.output_tokens};
      result.stage_latency[stage] = response.latency;
    } catch (const ClientError& e) {
      result.error_class = ErrorClass::kTransport;
      result.stage_texts[stage] = std::string("transport failure: ") + e.what();
      result.total_latency = seconds_sum(result.stage_latency);
      return result;
    }
  }
  result.total_latency = seconds_sum(result.stage_latency);

  ParseOutcome outcome = parse_actions(result.stage_texts[2]);
  result.parse_status = outcome.status;
  result.error_class = outcome.error_class;
  if (outcome.actions) {
    result.predicted = integrate(*outcome.actions);
    result.actions = std::move(outcome.actions);
  }
  return result;
}

}  // namespace vlmdrive
