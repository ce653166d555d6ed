#include "vlmdrive/domain.hpp"

#include <cmath>

#include <json.hpp>

namespace vlmdrive {

using ordered_json = nlohmann::ordered_json;

bool is_valid_action(const ActionState& action) {
  return std::isfinite(action.speed) && std::isfinite(action.curvature) && action.speed >= 0.0 &&
         std::abs(action.curvature) <= kMaxAbsCurvature;
}

bool operator==(const Trajectory& a, const Trajectory& b) {
  return a.tick == b.tick && a.points.rows() == b.points.rows() && a.points == b.points;
}

StageUsage FrameResult::total_usage() const {
  StageUsage total;
  for (const auto& u : usage) {
    total.input_tokens += u.input_tokens;
    total.output_tokens += u.output_tokens;
  }
  return total;
}

namespace {

constexpr std::array<std::pair<ParseStatus, std::string_view>, 3> kStatusNames{{
    {ParseStatus::kStrict, "strict"},
    {ParseStatus::kCorrected, "corrected"},
    {ParseStatus::kFailed, "failed"},
}};

constexpr std::array<std::pair<ErrorClass, std::string_view>, 7> kErrorNames{{
    {ErrorClass::kMissingDelimiters, "missing-delimiters"},
    {ErrorClass::kExtraText, "extra-text"},
    {ErrorClass::kWrongCount, "wrong-count"},
    {ErrorClass::kNonNumeric, "non-numeric"},
    {ErrorClass::kOutOfRange, "out-of-range"},
    {ErrorClass::kTransport, "transport"},
    {ErrorClass::kImageUnreadable, "image-unreadable"},
}};

}  // namespace

std::string_view to_string(ParseStatus status) {
  for (const auto& [s, name] : kStatusNames) {
    if (s == status) return name;
  }
  return "unknown";
}

std::string_view to_string(ErrorClass error) {
  for (const auto& [e, name] : kErrorNames) {
    if (e == error) return name;
  }
  return "unknown";
}

std::optional<ParseStatus> parse_status_from_string(std::string_view text) {
  for (const auto& [s, name] : kStatusNames) {
    if (name == text) return s;
  }
  return std::nullopt;
}

std::optional<ErrorClass> error_class_from_string(std::string_view text) {
  for (const auto& [e, name] : kErrorNames) {
    if (name == text) return e;
  }
  return std::nullopt;
}

std::vector<std::string> validate_frame(const Frame& frame) {
  std::vector<std::string> violations;
  if (frame.frame_id.empty()) violations.emplace_back("empty-frame-id");
  if (frame.image_path.empty()) violations.emplace_back("empty-image-path");
  if (frame.history.size() != kHistoryLength) violations.emplace_back("history-length");
  for (const auto& action : frame.history) {
    if (!is_valid_action(action)) {
      violations.emplace_back("invalid-history-action");
      break;
    }
  }
  if (frame.ground_truth.size() != kHorizonSteps) violations.emplace_back("ground-truth-length");
  if (!frame.ground_truth.all_finite()) violations.emplace_back("non-finite-coordinate");
  return violations;
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

ordered_json actions_to_json(const std::vector<ActionState>& actions) {
  ordered_json out = ordered_json::array();
  for (const auto& a : actions) out.push_back({a.speed, a.curvature});
  return out;
}

ordered_json points_to_json(const Points2<double>& points) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < points.rows(); ++i) out.push_back({points(i, 0), points(i, 1)});
  return out;
}

const ordered_json& require(const ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DecodeError(key, "missing field");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_string()) throw DecodeError(key, "expected string");
  return v.get<std::string>();
}

double as_number(const ordered_json& v, const char* key) {
  if (!v.is_number()) throw DecodeError(key, "expected number");
  return v.get<double>();
}

std::int64_t as_count(const ordered_json& v, const char* key) {
  if (!v.is_number_integer()) throw DecodeError(key, "expected integer");
  return v.get<std::int64_t>();
}

// Array of [a, b] pairs.
std::vector<std::array<double, 2>> require_pairs(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_array()) throw DecodeError(key, "expected array of pairs");
  std::vector<std::array<double, 2>> out;
  out.reserve(v.size());
  for (const auto& item : v) {
    if (!item.is_array() || item.size() != 2) throw DecodeError(key, "expected [a, b] pair");
    out.push_back({as_number(item[0], key), as_number(item[1], key)});
  }
  return out;
}

std::vector<ActionState> pairs_to_actions(const std::vector<std::array<double, 2>>& pairs) {
  std::vector<ActionState> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p[0], p[1]});
  return out;
}

Trajectory pairs_to_trajectory(const std::vector<std::array<double, 2>>& pairs) {
  Trajectory t;
  t.points.resize(static_cast<Eigen::Index>(pairs.size()), 2);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    t.points(static_cast<Eigen::Index>(i), 0) = pairs[i][0];
    t.points(static_cast<Eigen::Index>(i), 1) = pairs[i][1];
  }
  return t;
}

ordered_json parse_object(std::string_view line) {
  ordered_json j = ordered_json::parse(line, nullptr, false);
  if (j.is_discarded()) throw DecodeError("<record>", "malformed JSON");
  if (!j.is_object()) throw DecodeError("<record>", "expected JSON object");
  return j;
}

}  // namespace

std::string encode_frame(const Frame& frame) {
  ordered_json j;
  j["frame_id"] = frame.frame_id;
  j["scene_id"] = frame.scene_id;
  j["timestamp_us"] = frame.timestamp_us;
  j["image_path"] = frame.image_path;
  j["history"] = actions_to_json(frame.history);
  j["ground_truth"] = points_to_json(frame.ground_truth.points);
  return j.dump();
}

Frame decode_frame(std::string_view line) {
  const ordered_json j = parse_object(line);
  Frame frame;
  frame.frame_id = require_string(j, "frame_id");
  frame.scene_id = require_string(j, "scene_id");
  frame.timestamp_us = as_count(require(j, "timestamp_us"), "timestamp_us");
  frame.image_path = require_string(j, "image_path");
  frame.history = pairs_to_actions(require_pairs(j, "history"));
  frame.ground_truth = pairs_to_trajectory(require_pairs(j, "ground_truth"));
  return frame;
}

std::string encode_result(const FrameResult& result, const EncodeOptions& options) {
  ordered_json j;
  j["frame_id"] = result.frame_id;
  j["parse_status"] = to_string(result.parse_status);
  if (result.error_class) j["error_class"] = to_string(*result.error_class);
  j["stage_texts"] = result.stage_texts;
  if (result.actions) j["actions"] = actions_to_json(*result.actions);
  if (result.predicted) j["predicted"] = points_to_json(result.predicted->points);
  ordered_json usage = ordered_json::array();
  for (const auto& u : result.usage) {
    usage.push_back(ordered_json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}});
  }
  j["usage"] = usage;
  ordered_json latency;
  if (options.normalize_latency) {
    latency["stages"] = std::array<double, kStageCount>{};
    latency["total"] = 0.0;
  } else {
    latency["stages"] = result.stage_latency;
    latency["total"] = result.total_latency;
  }
  j["latency"] = latency;
  return j.dump();
}

FrameResult decode_result(std::string_view line) {
  const ordered_json j = parse_object(line);
  FrameResult r;
  r.frame_id = require_string(j, "frame_id");

  const auto status_text = require_string(j, "parse_status");
  const auto status = parse_status_from_string(status_text);
  if (!status) throw DecodeError("parse_status", "unknown status '" + status_text + "'");
  r.parse_status = *status;

  if (j.contains("error_class")) {
    const auto text = require_string(j, "error_class");
    r.error_class = error_class_from_string(text);
    if (!r.error_class) throw DecodeError("error_class", "unknown class '" + text + "'");
  }

  const auto& texts = require(j, "stage_texts");
  if (!texts.is_array() || texts.size() != kStageCount) {
    throw DecodeError("stage_texts", "expected 3 strings");
  }
  for (std::size_t i = 0; i < kStageCount; ++i) {
    if (!texts[i].is_string()) throw DecodeError("stage_texts", "expected string");
    r.stage_texts[i] = texts[i].get<std::string>();
  }

  if (j.contains("actions")) r.actions = pairs_to_actions(require_pairs(j, "actions"));
  if (j.contains("predicted")) r.predicted = pairs_to_trajectory(require_pairs(j, "predicted"));

  const auto& usage = require(j, "usage");
  if (!usage.is_array() || usage.size() != kStageCount) throw DecodeError("usage", "expected 3 entries");
  for (std::size_t i = 0; i < kStageCount; ++i) {
    if (!usage[i].is_object()) throw DecodeError("usage", "expected object");
    r.usage[i].input_tokens = as_count(require(usage[i], "input_tokens"), "usage");
    r.usage[i].output_tokens = as_count(require(usage[i], "output_tokens"), "usage");
  }

  const auto& latency = require(j, "latency");
  if (!latency.is_object()) throw DecodeError("latency", "expected object");
  const auto& stages = latency.find("stages");
  if (stages == latency.end() || !stages->is_array() || stages->size() != kStageCount) {
    throw DecodeError("latency", "expected 3 stage latencies");
  }
  for (std::size_t i = 0; i < kStageCount; ++i) r.stage_latency[i] = as_number((*stages)[i], "latency");
  r.total_latency = as_number(require(latency, "total"), "latency");

  if (r.parse_status != ParseStatus::kFailed && (!r.actions || !r.predicted)) {
    throw DecodeError(r.actions ? "predicted" : "actions", "required when parse_status is not failed");
  }
  return r;
}

}  // namespace vlmdrive
