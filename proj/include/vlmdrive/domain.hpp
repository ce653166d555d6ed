#pragma once

// Shared record types: control actions, ego-frame trajectories, evaluation
// frames and per-frame results, plus their JSONL encoding.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace vlmdrive {

inline constexpr std::size_t kHorizonSteps = 6;
inline constexpr std::size_t kHistoryLength = 6;
inline constexpr double kTickSeconds = 0.5;
inline constexpr double kMaxAbsCurvature = 1.0;
inline constexpr std::size_t kStageCount = 3;

/// One (speed, curvature) control sample. Speed in m/s, curvature in 1/m;
/// positive curvature turns left.
template <typename Scalar>
struct BasicActionState {
  Scalar speed{0};
  Scalar curvature{0};

  friend bool operator==(const BasicActionState&, const BasicActionState&) = default;
};

using ActionState = BasicActionState<double>;

/// N x 2 block of planar points, one (x, y) row per sample.
template <typename Scalar>
using Points2 = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

/// True when the action is finite, non-negative in speed and within the
/// curvature sanity bound.
bool is_valid_action(const ActionState& action);

/// Future positions in the ego frame. Row i is the position at (i + 1) * tick;
/// the origin is never stored.
struct Trajectory {
  Points2<double> points;
  double tick = kTickSeconds;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  bool all_finite() const { return points.allFinite(); }
};

bool operator==(const Trajectory& a, const Trajectory& b);

struct Frame {
  std::string frame_id;
  std::string scene_id;
  std::int64_t timestamp_us = 0;
  std::string image_path;
  std::vector<ActionState> history;  // oldest -> newest
  Trajectory ground_truth;

  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class ParseStatus { kStrict, kCorrected, kFailed };

// Parser taxonomy plus the two pipeline-level failure causes.
enum class ErrorClass {
  kMissingDelimiters,
  kExtraText,
  kWrongCount,
  kNonNumeric,
  kOutOfRange,
  kTransport,
  kImageUnreadable,
};

std::string_view to_string(ParseStatus status);
std::string_view to_string(ErrorClass error);
std::optional<ParseStatus> parse_status_from_string(std::string_view text);
std::optional<ErrorClass> error_class_from_string(std::string_view text);

struct StageUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  friend bool operator==(const StageUsage&, const StageUsage&) = default;
};

struct FrameResult {
  std::string frame_id;
  std::array<std::string, kStageCount> stage_texts;
  ParseStatus parse_status = ParseStatus::kFailed;
  std::optional<std::vector<ActionState>> actions;
  std::optional<Trajectory> predicted;
  std::array<StageUsage, kStageCount> usage{};
  std::array<double, kStageCount> stage_latency{};
  double total_latency = 0.0;
  std::optional<ErrorClass> error_class;

  StageUsage total_usage() const;

  friend bool operator==(const FrameResult&, const FrameResult&) = default;
};

/// Returns the names of every violated Frame invariant; empty means valid.
/// Names: "empty-frame-id", "empty-image-path", "history-length",
/// "invalid-history-action", "ground-truth-length", "non-finite-coordinate".
std::vector<std::string> validate_frame(const Frame& frame);

/// Malformed record text. field() names the first offending key.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::string field, const std::string& detail)
      : std::runtime_error("decode error at '" + field + "': " + detail), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct EncodeOptions {
  // Writes every latency as 0 so that runs can be compared byte-for-byte.
  bool normalize_latency = false;
};

// Single-line JSON; keys always in the same fixed order.
std::string encode_frame(const Frame& frame);
Frame decode_frame(std::string_view line);
std::string encode_result(const FrameResult& result, const EncodeOptions& options = {});
FrameResult decode_result(std::string_view line);

}  // namespace vlmdrive
