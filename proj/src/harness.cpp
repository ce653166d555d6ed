#include "vlmdrive/harness.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <openssl/evp.h>

#include "vlmdrive/cot_pipeline.hpp"
#include "vlmdrive/ingest.hpp"

namespace vlmdrive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return (path.is_relative() ? base / path : path).lexically_normal();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RunError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw RunError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_identity(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["scenario_path"] = c.scenario_path.string();
  j["image_root"] = c.image_root.string();
  j["provider"] = to_json(c.provider);
  if (c.templates) {
    j["templates"] = {(*c.templates)[0].string(), (*c.templates)[1].string(), (*c.templates)[2].string()};
  }
  j["output_dir"] = c.output_dir.string();
  j["max_output_tokens"] = c.max_output_tokens;
  j["decision_record"] = c.decision_record();
  return j;
}

// Single-writer hand-off from the workers.
class ResultQueue {
 public:
  void push(FrameResult r) {
    {
      std::lock_guard lock(mutex_);
      items_.push_back(std::move(r));
    }
    cv_.notify_one();
  }
  FrameResult pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !items_.empty(); });
    FrameResult r = std::move(items_.front());
    items_.pop_front();
    return r;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<FrameResult> items_;
};

}  // namespace

json RunConfig::decision_record() const {
  json j;
  j["history_order"] = "oldest-first";
  j["correction_attribution"] = "interleaved";
  j["image_per_stage"] = image_all_stages ? "all-stages" : "first-stage-only";
  return j;
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw RunError("run config must be a JSON object");
  try {
    RunConfig c;
    c.run_id = j.at("run_id").get<std::string>();
    if (c.run_id.empty() || c.run_id.find('/') != std::string::npos) throw RunError("run_id must be a plain name");
    c.scenario_path = resolve(base_dir, j.at("scenario_path").get<std::string>());
    c.image_root = j.contains("image_root") ? resolve(base_dir, j.at("image_root").get<std::string>())
                                            : c.scenario_path.parent_path();
    c.provider = provider_config_from_json(j.at("provider"), base_dir);
    if (j.contains("templates")) {
      const auto& t = j.at("templates");
      c.templates = std::array<fs::path, kStageCount>{resolve(base_dir, t.at("stage1").get<std::string>()),
                                                      resolve(base_dir, t.at("stage2").get<std::string>()),
                                                      resolve(base_dir, t.at("stage3").get<std::string>())};
    }
    c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    c.max_workers = j.value("max_workers", kDefaultWorkers);
    if (c.max_workers < 1) throw RunError("max_workers must be >= 1");
    if (j.contains("frame_limit") && !j.at("frame_limit").is_null()) {
      c.frame_limit = j.at("frame_limit").get<std::size_t>();
    }
    c.image_all_stages = j.value("image_all_stages", true);
    c.max_output_tokens = j.value("max_output_tokens", 1024);
    if (c.max_output_tokens < 1) throw RunError("max_output_tokens must be >= 1");
    if (j.contains("temperature") && !j.at("temperature").is_null()) {
      c.temperature = j.at("temperature").get<double>();
      if (*c.temperature < 0.0 || *c.temperature > 2.0) throw RunError("temperature must lie in [0, 2]");
    }
    return c;
  } catch (const json::exception& e) {
    throw RunError(std::string("run config: ") + e.what());
  } catch (const ClientError& e) {
    throw RunError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw RunError("malformed JSON in " + path.string());
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw RunError("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  json j = config_identity(config);
  j["scenario_sha256"] = sha256_hex(read_file(config.scenario_path));
  return sha256_hex(j.dump());
}

std::vector<FrameResult> read_ledger(const fs::path& path) {
  std::vector<FrameResult> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(decode_result(line));
    } catch (const DecodeError&) {
      // torn write from an interrupted run
    }
  }
  return out;
}

std::vector<FrameResult> read_results(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open results file " + path.string());
  std::vector<FrameResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(decode_result(line));
    } catch (const DecodeError& e) {
      throw RunError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

RunOutcome run_benchmark(const RunConfig& config, Provider& provider, const RunOptions& options) {
  const fs::path run_dir = config.run_dir();
  const fs::path manifest_path = run_dir / "manifest.json";
  const fs::path ledger_path = run_dir / "ledger.jsonl";
  const bool existing = fs::exists(manifest_path) || fs::exists(ledger_path);
  if (existing && !options.resume) {
    throw RunError("run directory " + run_dir.string() + " already holds run '" + config.run_id +
                   "'; pass --resume to continue it");
  }

  std::vector<Frame> frames;
  try {
    frames = read_scenarios(config.scenario_path);
  } catch (const IngestError& e) {
    throw RunError(e.what());
  }
  std::set<std::string> seen;
  for (const auto& f : frames) {
    const auto violations = validate_frame(f);
    if (!violations.empty()) throw RunError("frame '" + f.frame_id + "' is invalid: " + violations.front());
    if (!seen.insert(f.frame_id).second) throw RunError("duplicate frame_id '" + f.frame_id + "' in scenario file");
  }
  const auto limit = options.limit ? options.limit : config.frame_limit;
  if (limit && *limit < frames.size()) frames.resize(*limit);

  const PromptTemplates templates = config.templates ? load_templates(*config.templates) : default_templates();
  validate_templates(templates);

  const std::string hash = config_hash(config);
  json manifest;
  std::map<std::string, FrameResult> done;
  if (existing) {
    if (fs::exists(manifest_path)) {
      manifest = json::parse(read_file(manifest_path), nullptr, false);
      if (manifest.is_discarded()) throw RunError("malformed manifest " + manifest_path.string());
      if (manifest.value("config_hash", std::string{}) != hash) {
        throw RunError("config changed since run '" + config.run_id + "' started; refusing to resume");
      }
    }
    for (auto& r : read_ledger(ledger_path)) done.insert_or_assign(r.frame_id, std::move(r));
  }

  fs::create_directories(run_dir);
  fs::copy_file(config.scenario_path, run_dir / "scenarios.jsonl", fs::copy_options::overwrite_existing);
  {
    // Rewrite the ledger from its valid entries so appends never follow a torn line.
    std::string clean;
    for (const auto& [id, r] : done) clean += encode_result(r) + "\n";
    write_file(ledger_path, clean);
  }

  if (!manifest.is_object()) manifest = json::object();
  manifest["run_id"] = config.run_id;
  manifest["config_hash"] = hash;
  manifest["model_name"] = config.provider.model_name;
  manifest["provider"] = to_json(config.provider);
  manifest["decision_record"] = config.decision_record();
  if (!manifest.contains("started_at")) manifest["started_at"] = utc_now();
  manifest["finished_at"] = nullptr;
  manifest["completed"] = json::array();
  for (const auto& [id, r] : done) manifest["completed"].push_back(id);
  write_file(manifest_path, manifest.dump(2) + "\n");

  std::vector<const Frame*> todo;
  for (const auto& f : frames) {
    if (!done.contains(f.frame_id)) todo.push_back(&f);
  }

  RunOutcome outcome;
  outcome.run_dir = run_dir;
  outcome.frames_selected = frames.size();
  outcome.frames_skipped = frames.size() - todo.size();

  PipelineOptions pipeline;
  pipeline.image_root = config.image_root;
  pipeline.image_all_stages = config.image_all_stages;
  pipeline.max_output_tokens = config.max_output_tokens;
  pipeline.temperature = config.temperature;

  if (!todo.empty()) {
    std::ofstream ledger(ledger_path, std::ios::binary | std::ios::app);
    if (!ledger) throw RunError("cannot append to " + ledger_path.string());

    ResultQueue queue;
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::min(config.max_workers, todo.size());
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) {
          FrameResult r;
          try {
            r = run_frame(*todo[i], provider, templates, pipeline);
          } catch (const std::exception& e) {
            r.frame_id = todo[i]->frame_id;
            r.parse_status = ParseStatus::kFailed;
            r.error_class = ErrorClass::kTransport;
            r.stage_texts[0] = std::string("pipeline failure: ") + e.what();
          }
          queue.push(std::move(r));
        }
      });
    }
    for (std::size_t received = 0; received < todo.size(); ++received) {
      FrameResult r = queue.pop();
      ledger << encode_result(r) << '\n';
      ledger.flush();
      if (!ledger) throw RunError("write failed for " + ledger_path.string());
      done.insert_or_assign(r.frame_id, std::move(r));
    }
    outcome.frames_run = todo.size();
  }

  std::string results;
  EncodeOptions encode;
  encode.normalize_latency = options.normalize_latency;
  for (const auto& [id, r] : done) {
    results += encode_result(r, encode) + "\n";
    if (is_frame_error(r)) ++outcome.frame_errors;
  }
  write_file(run_dir / "results.jsonl", results);

  manifest["completed"] = json::array();
  for (const auto& [id, r] : done) manifest["completed"].push_back(id);
  manifest["finished_at"] = utc_now();
  manifest["normalize_latency"] = options.normalize_latency;
  write_file(manifest_path, manifest.dump(2) + "\n");
  return outcome;
}

}  // namespace vlmdrive
