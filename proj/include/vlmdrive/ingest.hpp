#pragma once

// nuScenes-style metadata tables -> self-contained scenario JSONL.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "vlmdrive/domain.hpp"
#include "vlmdrive/kinematics.hpp"

namespace vlmdrive {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SceneRecord {
  std::string token;
  std::string name;
};

struct SampleRecord {
  std::string token;
  std::string scene_token;
  std::int64_t timestamp_us = 0;
};

struct SampleDataRecord {
  std::string token;
  std::string sample_token;
  std::string ego_pose_token;
  std::string calibrated_sensor_token;
  std::string filename;
  std::int64_t timestamp_us = 0;
  bool is_key_frame = false;
};

struct EgoPoseRecord {
  std::string token;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  std::int64_t timestamp_us = 0;
};

inline constexpr std::string_view kFrontCameraChannel = "CAM_FRONT";

struct TableSet {
  std::map<std::string, SceneRecord> scenes;
  std::map<std::string, SampleRecord> samples;
  std::map<std::string, SampleDataRecord> sample_data;
  std::map<std::string, EgoPoseRecord> ego_poses;
  std::map<std::string, std::string> sensor_channel_by_calibration;  // calibrated_sensor token -> channel
  std::map<std::string, std::string> front_camera_keyframe;          // sample token -> sample_data token
};

/// Loads scene, sample, sample_data, ego_pose, calibrated_sensor and sensor
/// tables. `dataroot` may hold the tables directly or in one version
/// subdirectory (e.g. v1.0-mini). Dangling tokens are fatal.
TableSet load_tables(const std::filesystem::path& dataroot);

/// Resolves a scene by token or by name; throws IngestError when unknown.
const SceneRecord& find_scene(const TableSet& tables, std::string_view scene);

/// Frames for every keyframe with six keyframes of history and six of future
/// in the same scene: max(0, n - 12) frames for n keyframes.
std::vector<Frame> build_frames(const TableSet& tables, std::string_view scene);

/// Core of build_frames over an already ordered keyframe sequence.
std::vector<Frame> frames_from_keyframes(std::string_view scene_id, std::span<const EgoPose> poses,
                                         std::span<const std::string> sample_tokens,
                                         std::span<const std::string> image_paths);

EgoPose to_ego_pose(const EgoPoseRecord& record);

/// Writes one frame per line sorted by (scene_id, timestamp). Returns the count.
std::size_t write_scenarios(std::span<const Frame> frames, const std::filesystem::path& out);

/// Reads a scenario file; blank lines are skipped, anything else must decode.
std::vector<Frame> read_scenarios(const std::filesystem::path& path);

/// Scene list file: one scene token or name per line; '#' starts a comment.
std::vector<std::string> read_scene_list(const std::filesystem::path& path);

}  // namespace vlmdrive
