#include "vlmdrive/ingest.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace vlmdrive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kWindow = kHistoryLength;  // keyframes needed on each side

json read_table(const fs::path& dir, const char* name) {
  const fs::path path = dir / (std::string(name) + ".json");
  std::ifstream in(path);
  if (!in) throw IngestError("missing table file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IngestError("malformed JSON in " + path.string());
  if (!j.is_array()) throw IngestError("expected a JSON array in " + path.string());
  return j;
}

template <typename T>
T get_field(const json& record, const char* key, const char* table) {
  if (!record.is_object() || !record.contains(key)) {
    throw IngestError(std::string(table) + ".json: record missing '" + key + "'");
  }
  try {
    return record.at(key).get<T>();
  } catch (const json::exception&) {
    throw IngestError(std::string(table) + ".json: field '" + key + "' has the wrong type");
  }
}

fs::path tables_dir(const fs::path& dataroot) {
  if (!fs::is_directory(dataroot)) throw IngestError("dataroot " + dataroot.string() + " is not a directory");
  if (fs::exists(dataroot / "scene.json")) return dataroot;
  std::vector<fs::path> candidates;
  for (const auto& entry : fs::directory_iterator(dataroot)) {
    if (entry.is_directory() && fs::exists(entry.path() / "sample.json")) candidates.push_back(entry.path());
  }
  std::sort(candidates.begin(), candidates.end());
  if (candidates.size() == 1) return candidates.front();
  if (candidates.size() > 1) {
    throw IngestError("dataroot " + dataroot.string() + " holds several table directories; point at one");
  }
  return dataroot;  // read_table reports the missing file
}

void dangling(const std::string& table, const std::string& field, const std::string& token) {
  throw IngestError("dangling token in " + table + ".json: " + field + " '" + token + "' does not exist");
}

}  // namespace

EgoPose to_ego_pose(const EgoPoseRecord& record) {
  EgoPose pose;
  pose.position = record.translation.head<2>();
  pose.yaw = yaw_from_quaternion(record.rotation);
  pose.timestamp_us = record.timestamp_us;
  return pose;
}

TableSet load_tables(const fs::path& dataroot) {
  const fs::path dir = tables_dir(dataroot);
  TableSet t;

  for (const auto& r : read_table(dir, "scene")) {
    SceneRecord s{get_field<std::string>(r, "token", "scene"), get_field<std::string>(r, "name", "scene")};
    t.scenes.emplace(s.token, s);
  }

  for (const auto& r : read_table(dir, "sample")) {
    SampleRecord s{get_field<std::string>(r, "token", "sample"), get_field<std::string>(r, "scene_token", "sample"),
                   get_field<std::int64_t>(r, "timestamp", "sample")};
    if (!t.scenes.contains(s.scene_token)) dangling("sample", "scene_token", s.scene_token);
    t.samples.emplace(s.token, s);
  }

  for (const auto& r : read_table(dir, "ego_pose")) {
    EgoPoseRecord p;
    p.token = get_field<std::string>(r, "token", "ego_pose");
    const auto translation = get_field<std::vector<double>>(r, "translation", "ego_pose");
    const auto rotation = get_field<std::vector<double>>(r, "rotation", "ego_pose");
    if (translation.size() != 3 || rotation.size() != 4) {
      throw IngestError("ego_pose.json: record " + p.token + " needs 3 translation and 4 rotation values");
    }
    p.translation = Eigen::Vector3d(translation[0], translation[1], translation[2]);
    p.rotation = Eigen::Quaterniond(rotation[0], rotation[1], rotation[2], rotation[3]);  // w, x, y, z
    p.timestamp_us = get_field<std::int64_t>(r, "timestamp", "ego_pose");
    t.ego_poses.emplace(p.token, p);
  }

  std::map<std::string, std::string> channel_by_sensor;
  for (const auto& r : read_table(dir, "sensor")) {
    channel_by_sensor.emplace(get_field<std::string>(r, "token", "sensor"),
                              get_field<std::string>(r, "channel", "sensor"));
  }
  for (const auto& r : read_table(dir, "calibrated_sensor")) {
    const auto token = get_field<std::string>(r, "token", "calibrated_sensor");
    const auto sensor = get_field<std::string>(r, "sensor_token", "calibrated_sensor");
    const auto it = channel_by_sensor.find(sensor);
    if (it == channel_by_sensor.end()) dangling("calibrated_sensor", "sensor_token", sensor);
    t.sensor_channel_by_calibration.emplace(token, it->second);
  }

  for (const auto& r : read_table(dir, "sample_data")) {
    SampleDataRecord d;
    d.token = get_field<std::string>(r, "token", "sample_data");
    d.sample_token = get_field<std::string>(r, "sample_token", "sample_data");
    d.ego_pose_token = get_field<std::string>(r, "ego_pose_token", "sample_data");
    d.calibrated_sensor_token = get_field<std::string>(r, "calibrated_sensor_token", "sample_data");
    d.filename = get_field<std::string>(r, "filename", "sample_data");
    d.timestamp_us = get_field<std::int64_t>(r, "timestamp", "sample_data");
    d.is_key_frame = get_field<bool>(r, "is_key_frame", "sample_data");

    const auto channel = t.sensor_channel_by_calibration.find(d.calibrated_sensor_token);
    if (channel == t.sensor_channel_by_calibration.end()) {
      dangling("sample_data", "calibrated_sensor_token", d.calibrated_sensor_token);
    }
    if (channel->second == kFrontCameraChannel && d.is_key_frame) {
      if (!t.samples.contains(d.sample_token)) dangling("sample_data", "sample_token", d.sample_token);
      if (!t.ego_poses.contains(d.ego_pose_token)) dangling("sample_data", "ego_pose_token", d.ego_pose_token);
      t.front_camera_keyframe[d.sample_token] = d.token;
    }
    t.sample_data.emplace(d.token, std::move(d));
  }
  return t;
}

const SceneRecord& find_scene(const TableSet& tables, std::string_view scene) {
  if (const auto it = tables.scenes.find(std::string(scene)); it != tables.scenes.end()) return it->second;
  for (const auto& [token, record] : tables.scenes) {
    if (record.name == scene) return record;
  }
  throw IngestError("unknown scene '" + std::string(scene) + "'");
}

std::vector<Frame> frames_from_keyframes(std::string_view scene_id, std::span<const EgoPose> poses,
                                         std::span<const std::string> sample_tokens,
                                         std::span<const std::string> image_paths) {
  std::vector<Frame> frames;
  const std::size_t n = poses.size();
  if (n < 2 * kWindow + 1) return frames;
  for (std::size_t t = kWindow; t + kWindow < n; ++t) {
    Frame f;
    f.frame_id = sample_tokens[t];
    f.scene_id = std::string(scene_id);
    f.timestamp_us = poses[t].timestamp_us;
    f.image_path = image_paths[t];
    f.history = history_from_poses(poses.subspan(t - kWindow, kWindow + 1), kTickSeconds);

    Points2<double> future(static_cast<Eigen::Index>(kHorizonSteps), 2);
    for (std::size_t k = 0; k < kHorizonSteps; ++k) {
      future.row(static_cast<Eigen::Index>(k)) = poses[t + 1 + k].position.transpose();
    }
    f.ground_truth.points = global_to_ego(poses[t], future);
    f.ground_truth.tick = kTickSeconds;
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<Frame> build_frames(const TableSet& tables, std::string_view scene) {
  const SceneRecord& record = find_scene(tables, scene);

  std::vector<const SampleRecord*> keyframes;
  for (const auto& [token, sample] : tables.samples) {
    if (sample.scene_token == record.token) keyframes.push_back(&sample);
  }
  std::sort(keyframes.begin(), keyframes.end(), [](const SampleRecord* a, const SampleRecord* b) {
    return a->timestamp_us != b->timestamp_us ? a->timestamp_us < b->timestamp_us : a->token < b->token;
  });

  std::vector<EgoPose> poses;
  std::vector<std::string> tokens;
  std::vector<std::string> images;
  for (const SampleRecord* sample : keyframes) {
    const auto cam = tables.front_camera_keyframe.find(sample->token);
    if (cam == tables.front_camera_keyframe.end()) {
      throw IngestError("keyframe " + sample->token + " has no front-camera sample_data (missing ego pose)");
    }
    const SampleDataRecord& data = tables.sample_data.at(cam->second);
    const auto pose = tables.ego_poses.find(data.ego_pose_token);
    if (pose == tables.ego_poses.end()) {
      throw IngestError("keyframe " + sample->token + " references missing ego pose " + data.ego_pose_token);
    }
    poses.push_back(to_ego_pose(pose->second));
    tokens.push_back(sample->token);
    images.push_back(data.filename);
  }
  return frames_from_keyframes(record.name, poses, tokens, images);
}

std::size_t write_scenarios(std::span<const Frame> frames, const fs::path& out) {
  std::vector<const Frame*> ordered;
  ordered.reserve(frames.size());
  for (const auto& f : frames) ordered.push_back(&f);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Frame* a, const Frame* b) {
    if (a->scene_id != b->scene_id) return a->scene_id < b->scene_id;
    if (a->timestamp_us != b->timestamp_us) return a->timestamp_us < b->timestamp_us;
    return a->frame_id < b->frame_id;
  });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) throw IngestError("cannot open " + out.string() + " for writing");
  for (const Frame* f : ordered) file << encode_frame(*f) << '\n';
  file.flush();
  if (!file) throw IngestError("write failed for " + out.string());
  return ordered.size();
}

std::vector<Frame> read_scenarios(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open scenario file " + path.string());
  std::vector<Frame> frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      frames.push_back(decode_frame(line));
    } catch (const DecodeError& e) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return frames;
}

std::vector<std::string> read_scene_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open scene list " + path.string());
  std::vector<std::string> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const auto end = line.find_last_not_of(" \t\r");
    scenes.push_back(line.substr(begin, end - begin + 1));
  }
  return scenes;
}

}  // namespace vlmdrive
