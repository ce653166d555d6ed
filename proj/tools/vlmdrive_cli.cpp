// vlmdrive: ingest driving scenes, run the chain-of-thought benchmark against
// a model provider, and render comparison reports.
//
// Exit codes: 0 success, 1 fatal config/IO error, 2 run completed with frame errors.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlmdrive/harness.hpp"
#include "vlmdrive/ingest.hpp"
#include "vlmdrive/report.hpp"

namespace fs = std::filesystem;
using namespace vlmdrive;

namespace {

std::string plural(std::size_t n, const char* word) {
  return std::to_string(n) + " " + word + (n == 1 ? "" : "s");
}

int cmd_ingest(const fs::path& dataroot, const fs::path& scenes_file, const fs::path& out) {
  const auto scenes = read_scene_list(scenes_file);
  std::vector<Frame> frames;
  if (!scenes.empty()) {
    const TableSet tables = load_tables(dataroot);
    for (const auto& scene : scenes) {
      auto built = build_frames(tables, scene);
      frames.insert(frames.end(), std::make_move_iterator(built.begin()), std::make_move_iterator(built.end()));
    }
  } else if (!fs::is_directory(dataroot)) {
    throw IngestError("dataroot " + dataroot.string() + " is not a directory");
  }
  const std::size_t written = write_scenarios(frames, out);
  std::cout << plural(scenes.size(), "scene") << ", " << plural(written, "frame") << "\n";
  return 0;
}

int cmd_run(const fs::path& config_path, bool resume, std::optional<std::size_t> limit, bool normalize) {
  const RunConfig config = load_run_config(config_path);
  auto provider = make_provider(config.provider);
  RunOptions options;
  options.resume = resume;
  options.limit = limit;
  options.normalize_latency = normalize;
  const RunOutcome outcome = run_benchmark(config, *provider, options);
  std::cout << "run " << config.run_id << ": " << plural(outcome.frames_selected, "frame") << " selected, "
            << outcome.frames_skipped << " already complete, " << outcome.frames_run << " inferred, "
            << plural(outcome.frame_errors, "frame error") << "\n"
            << "results: " << (outcome.run_dir / "results.jsonl").string() << "\n";
  return outcome.exit_code();
}

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out, bool allow_mixed, bool overlays) {
  std::vector<RunData> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  ReportOptions options;
  options.allow_mixed_decisions = allow_mixed;
  options.overlays = overlays;
  const Report report = build_report(runs, options);
  write_report(report, runs, out, options);
  std::cout << render_performance_table(report.summaries) << report.filter.retained.size() << " of "
            << report.filter.total << " frames retained\n"
            << "report: " << (out / "report.md").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark vision-language models on driving scenes through a three-stage chain of thought"};
  app.require_subcommand(1);

  std::string dataroot, scenes_file, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Build a scenario file from nuScenes metadata tables");
  ingest->add_option("--dataroot", dataroot, "Dataset root (tables directly or in one version subdirectory)")
      ->required();
  ingest->add_option("--scenes", scenes_file, "File listing scene names or tokens, one per line")->required();
  ingest->add_option("--out", ingest_out, "Scenario JSONL to write")->required();

  std::string config_path;
  bool resume = false;
  bool normalize = false;
  std::optional<std::size_t> limit;
  auto* run = app.add_subcommand("run", "Run the benchmark described by a config file");
  run->add_option("--config", config_path, "Run config JSON")->required();
  run->add_flag("--resume", resume, "Continue an interrupted run, skipping completed frames");
  run->add_option("--limit", limit, "Process at most the first N frames");
  run->add_flag("--normalize-latency", normalize, "Write zero latencies to results.jsonl for byte comparison");

  std::vector<std::string> run_dirs;
  std::string report_out;
  bool allow_mixed = false;
  bool no_overlays = false;
  auto* report = app.add_subcommand("report", "Compare one or more completed runs");
  report->add_option("--runs", run_dirs, "Run directories")->required()->expected(1, -1);
  report->add_option("--out", report_out, "Report output directory")->required();
  report->add_flag("--allow-mixed-decisions", allow_mixed, "Co-filter runs whose decision records differ");
  report->add_flag("--no-overlays", no_overlays, "Skip per-frame SVG overlays");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) return cmd_ingest(dataroot, scenes_file, ingest_out);
    if (*run) return cmd_run(config_path, resume, limit, normalize);
    if (*report) return cmd_report(run_dirs, report_out, allow_mixed, !no_overlays);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
