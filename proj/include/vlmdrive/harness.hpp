#pragma once

// Batch execution: run configuration, worker pool, resumable ledger and the
// run directory layout.
//
//   <output_dir>/<run_id>/
//     manifest.json    run id, config hash, decision record, timestamps, completed frames
//     ledger.jsonl     append-only FrameResult log, one line per finished frame
//     results.jsonl    every ledger entry, sorted by frame_id
//     scenarios.jsonl  copy of the scenario file (ground truth for reports)

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmdrive/domain.hpp"
#include "vlmdrive/vlm_client.hpp"

namespace vlmdrive {

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefaultWorkers = 4;

struct RunConfig {
  std::string run_id;
  std::filesystem::path scenario_path;
  std::filesystem::path image_root;  // defaults to the scenario file's directory
  ProviderConfig provider;
  std::optional<std::array<std::filesystem::path, kStageCount>> templates;  // built-in when absent
  std::filesystem::path output_dir;
  std::size_t max_workers = kDefaultWorkers;
  std::optional<std::size_t> frame_limit;
  bool image_all_stages = true;
  int max_output_tokens = 1024;
  std::optional<double> temperature;

  /// Settings that change what a run's numbers mean. Runs whose records
  /// differ are not co-filtered by default.
  nlohmann::json decision_record() const;

  std::filesystem::path run_dir() const { return output_dir / run_id; }
};

/// Parses a run config document; relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// SHA-256 (hex) over the settings that must match for a resume: everything
/// except frame_limit and max_workers, plus the scenario file's bytes.
std::string config_hash(const RunConfig& config);

std::string sha256_hex(const std::string& bytes);

struct RunOptions {
  bool resume = false;
  std::optional<std::size_t> limit;  // overrides frame_limit
  bool normalize_latency = false;    // results.jsonl written with zero latencies
};

struct RunOutcome {
  std::filesystem::path run_dir;
  std::size_t frames_selected = 0;
  std::size_t frames_skipped = 0;  // already in the ledger
  std::size_t frames_run = 0;
  std::size_t frame_errors = 0;    // transport or image failures across the whole run

  /// 0 when clean, 2 when any frame hit a transport or image failure.
  int exit_code() const { return frame_errors > 0 ? 2 : 0; }
};

RunOutcome run_benchmark(const RunConfig& config, Provider& provider, const RunOptions& options = {});

/// Ledger entries that decode cleanly; a torn final line is dropped.
std::vector<FrameResult> read_ledger(const std::filesystem::path& path);

std::vector<FrameResult> read_results(const std::filesystem::path& path);

}  // namespace vlmdrive
