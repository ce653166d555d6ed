#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"
#include "vlmdrive/ingest.hpp"

using namespace vlmdrive;
using namespace vlmdrive::testing;

namespace {

// Counter-clockwise circle of radius 20 m, 2 m per keyframe.
SyntheticPose on_circle(std::size_t i) {
  const double r = 20.0, step = 2.0 / r;
  const double a = step * static_cast<double>(i);
  return {r * std::sin(a), r * (1.0 - std::cos(a)), a};
}

}  // namespace

TEST(LoadTables, ReadsDirectlyAndFromVersionSubdir) {
  TempDir dir;
  write_nuscenes_tables(dir / "v1.0-mini", {{"scene-0001", 15}});
  const TableSet nested = load_tables(dir.path());
  EXPECT_EQ(nested.scenes.size(), 1u);
  EXPECT_EQ(nested.samples.size(), 15u);
  EXPECT_EQ(nested.front_camera_keyframe.size(), 15u);  // sweeps and lidar filtered out
  const TableSet direct = load_tables(dir / "v1.0-mini");
  EXPECT_EQ(direct.ego_poses.size(), 15u);
}

TEST(LoadTables, MissingTableNamed) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 15}}, {"scene"});
  try {
    load_tables(dir.path());
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("scene.json"), std::string::npos);
  }
}

TEST(LoadTables, DanglingTokenIsFatal) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 15}});
  auto poses = nlohmann::json::parse(read_text(dir / "ego_pose.json"));
  poses.erase(poses.begin() + 3);
  write_text(dir / "ego_pose.json", poses.dump());
  EXPECT_THROW(load_tables(dir.path()), IngestError);
}

TEST(LoadTables, NotADirectory) {
  EXPECT_THROW(load_tables("/nonexistent/dataroot"), IngestError);
  TempDir dir;
  write_nuscenes_tables(dir / "x", {});
  EXPECT_THROW(load_tables(dir / "x" / "scene.json"), IngestError);
}

TEST(LoadTables, MalformedJson) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"s", 13}});
  write_text(dir / "sample.json", "[{");
  EXPECT_THROW(load_tables(dir.path()), IngestError);
  write_text(dir / "sample.json", "{}");
  EXPECT_THROW(load_tables(dir.path()), IngestError);
}

TEST(FindScene, ByNameOrToken) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 13}, {"scene-0002", 13}});
  const auto t = load_tables(dir.path());
  EXPECT_EQ(find_scene(t, "scene-0002").token, "tok-scene-0002");
  EXPECT_EQ(find_scene(t, "tok-scene-0001").name, "scene-0001");
  EXPECT_THROW(find_scene(t, "scene-9999"), IngestError);
}

TEST(BuildFrames, FifteenKeyframesGiveThree) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 15}});
  const auto frames = build_frames(load_tables(dir.path()), "scene-0001");
  ASSERT_EQ(frames.size(), 3u);
  EXPECT_EQ(frames[0].frame_id, sample_token("scene-0001", 6));
  EXPECT_EQ(frames[2].frame_id, sample_token("scene-0001", 8));
  EXPECT_EQ(frames[0].scene_id, "scene-0001");
  EXPECT_EQ(frames[0].image_path, "samples/CAM_FRONT/" + sample_token("scene-0001", 6) + ".jpg");
  for (const auto& f : frames) EXPECT_TRUE(validate_frame(f).empty());
}

TEST(BuildFrames, TwelveKeyframesGiveNone) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 12}});
  EXPECT_TRUE(build_frames(load_tables(dir.path()), "scene-0001").empty());
}

TEST(BuildFrames, StraightLineGroundTruthAndHistory) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 13}});
  const auto frames = build_frames(load_tables(dir.path()), "scene-0001");
  ASSERT_EQ(frames.size(), 1u);
  const Frame& f = frames[0];
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(f.ground_truth.points(i, 0), i + 1.0, 1e-9);
    EXPECT_NEAR(f.ground_truth.points(i, 1), 0.0, 1e-9);
    EXPECT_NEAR(f.history[i].speed, 2.0, 1e-9);
    EXPECT_EQ(f.history[i].curvature, 0.0);
  }
}

TEST(BuildFrames, CircleHasConstantCurvatureAndLeftwardFuture) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 14, on_circle}});
  const auto tables = load_tables(dir.path());
  const auto frames = build_frames(tables, "scene-0001");
  ASSERT_EQ(frames.size(), 2u);
  for (const auto& f : frames) {
    for (const auto& a : f.history) {
      const double chord = 2.0 * 20.0 * std::sin(0.05);
      EXPECT_NEAR(a.speed, chord / 0.5, 1e-9);
      EXPECT_NEAR(a.curvature, 0.1 / chord, 1e-9);
    }
    for (int i = 0; i < 6; ++i) EXPECT_GT(f.ground_truth.points(i, 1), 0.0);
  }
  // First future point maps back to its global pose.
  const Frame& f = frames[0];
  const auto ref_pose = to_ego_pose(tables.ego_poses.at(sample_token("scene-0001", 6) + "-pose"));
  const Points2<double> g = ego_to_global(ref_pose, f.ground_truth.points.topRows(1).eval());
  const SyntheticPose expected = on_circle(7);
  EXPECT_NEAR(g(0, 0), expected.x, 1e-9);
  EXPECT_NEAR(g(0, 1), expected.y, 1e-9);
}

TEST(BuildFrames, CountLawForAllSmallScenes) {
  TempDir dir;
  std::vector<SyntheticScene> scenes;
  for (std::size_t n = 0; n <= 30; ++n) scenes.push_back({"scene-n" + std::to_string(n), n});
  write_nuscenes_tables(dir.path(), scenes);
  const auto tables = load_tables(dir.path());
  for (std::size_t n = 0; n <= 30; ++n) {
    const auto frames = build_frames(tables, "scene-n" + std::to_string(n));
    EXPECT_EQ(frames.size(), n > 12 ? n - 12 : 0) << n;
  }
}

TEST(BuildFrames, IrregularSpacingPropagates) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-0001", 13}});
  auto samples = nlohmann::json::parse(read_text(dir / "sample.json"));
  auto data = nlohmann::json::parse(read_text(dir / "sample_data.json"));
  auto poses = nlohmann::json::parse(read_text(dir / "ego_pose.json"));
  // Push the last keyframe 0.3 s later than its slot.
  for (auto* table : {&samples, &data, &poses}) {
    for (auto& rec : *table) {
      if (rec["token"].get<std::string>().rfind(sample_token("scene-0001", 12), 0) == 0) {
        rec["timestamp"] = rec["timestamp"].get<std::int64_t>() + 300'000;
      }
    }
  }
  write_text(dir / "sample.json", samples.dump());
  write_text(dir / "sample_data.json", data.dump());
  write_text(dir / "ego_pose.json", poses.dump());
  // The future window only feeds ground truth; history spacing still holds.
  EXPECT_EQ(build_frames(load_tables(dir.path()), "scene-0001").size(), 1u);

  write_nuscenes_tables(dir.path(), {{"scene-0001", 13}});
  poses = nlohmann::json::parse(read_text(dir / "ego_pose.json"));
  poses[2]["timestamp"] = poses[2]["timestamp"].get<std::int64_t>() + 200'000;
  write_text(dir / "ego_pose.json", poses.dump());
  EXPECT_THROW(build_frames(load_tables(dir.path()), "scene-0001"), KinematicsError);
}

TEST(FramesFromKeyframes, CountLawDirect) {
  for (std::size_t n = 0; n <= 30; ++n) {
    std::vector<EgoPose> poses;
    std::vector<std::string> tokens, images;
    for (std::size_t i = 0; i < n; ++i) {
      poses.push_back({{static_cast<double>(i), 0.0}, 0.0, static_cast<std::int64_t>(i) * 500'000});
      tokens.push_back("t" + std::to_string(i));
      images.push_back("i" + std::to_string(i));
    }
    EXPECT_EQ(frames_from_keyframes("s", poses, tokens, images).size(), n > 12 ? n - 12 : 0);
  }
}

TEST(Scenarios, WriteSortedAndReadBack) {
  TempDir dir;
  write_nuscenes_tables(dir.path(), {{"scene-b", 14}, {"scene-a", 13}});
  const auto tables = load_tables(dir.path());
  auto frames = build_frames(tables, "scene-b");
  const auto a = build_frames(tables, "scene-a");
  frames.insert(frames.end(), a.begin(), a.end());
  EXPECT_EQ(write_scenarios(frames, dir / "out1.jsonl"), 3u);
  std::reverse(frames.begin(), frames.end());
  write_scenarios(frames, dir / "out2.jsonl");
  EXPECT_EQ(read_text(dir / "out1.jsonl"), read_text(dir / "out2.jsonl"));
  const auto back = read_scenarios(dir / "out1.jsonl");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].scene_id, "scene-a");
  EXPECT_EQ(back[1].frame_id, sample_token("scene-b", 6));
}

TEST(Scenarios, ReadErrorsCarryLineNumber) {
  TempDir dir;
  const Frame f = make_frame("x", constant_actions(1.0, 0.0));
  write_text(dir / "s.jsonl", encode_frame(f) + "\n\n{\"frame_id\":\"y\"}\n");
  try {
    read_scenarios(dir / "s.jsonl");
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
  EXPECT_THROW(read_scenarios(dir / "none.jsonl"), IngestError);
}

TEST(SceneList, CommentsAndBlankLines) {
  TempDir dir;
  write_text(dir / "scenes.txt", "# mini split\nscene-0061\n\n  scene-0103  # busy junction\n#scene-x\n");
  EXPECT_EQ(read_scene_list(dir / "scenes.txt"), (std::vector<std::string>{"scene-0061", "scene-0103"}));
  EXPECT_THROW(read_scene_list(dir / "missing.txt"), IngestError);
}
