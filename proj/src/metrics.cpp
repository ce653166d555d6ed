#include "vlmdrive/metrics.hpp"

#include <algorithm>

namespace vlmdrive {

double average_of_horizons(double ade_1s, double ade_2s, double ade_3s) { return (ade_1s + ade_2s + ade_3s) / 3.0; }

DisplacementMetrics displacement_errors(const Trajectory& predicted, const Trajectory& ground_truth) {
  if (predicted.size() != kHorizonSteps || ground_truth.size() != kHorizonSteps) {
    throw MetricsError("displacement metrics need two 6-point trajectories, got " + std::to_string(predicted.size()) +
                       " and " + std::to_string(ground_truth.size()));
  }
  const Eigen::VectorXd d = point_errors(predicted.points, ground_truth.points);
  DisplacementMetrics m;
  m.ade_1s = d.head<2>().mean();
  m.ade_2s = d.head<4>().mean();
  m.ade_3s = d.head<6>().mean();
  m.ade_avg = average_of_horizons(m.ade_1s, m.ade_2s, m.ade_3s);
  m.fde = d(5);
  return m;
}

FilterReport common_frame_filter(const std::map<std::string, std::set<std::string>>& runs,
                                 const std::set<std::string>& universe) {
  for (const auto& [label, ids] : runs) {
    for (const auto& id : ids) {
      if (!universe.contains(id)) throw MetricsError("run '" + label + "' references unknown frame '" + id + "'");
    }
  }
  FilterReport report;
  report.total = universe.size();
  for (const auto& id : universe) {
    std::vector<std::string> failing;
    for (const auto& [label, ids] : runs) {
      if (!ids.contains(id)) failing.push_back(label);
    }
    if (failing.empty()) {
      report.retained.push_back(id);
    } else {
      report.excluded.emplace(id, std::move(failing));
    }
  }
  report.retention_rate =
      report.total == 0 ? 0.0 : 100.0 * static_cast<double>(report.retained.size()) / static_cast<double>(report.total);
  return report;
}

FeRates fe_rates(std::span<const FrameResult> results) {
  if (results.empty()) throw MetricsError("format-error rates of an empty result set");
  std::size_t not_strict = 0;
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.parse_status != ParseStatus::kStrict) ++not_strict;
    if (r.parse_status == ParseStatus::kFailed) ++failed;
  }
  const double n = static_cast<double>(results.size());
  return {100.0 * static_cast<double>(not_strict) / n, 100.0 * static_cast<double>(failed) / n};
}

RunSummary summarize(const std::string& model_name, std::span<const FrameResult> results,
                     const std::map<std::string, Trajectory>& ground_truth, const ProviderConfig& prices,
                     const FilterReport& filter) {
  std::vector<const FrameResult*> ordered;
  ordered.reserve(results.size());
  for (const auto& r : results) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const FrameResult* a, const FrameResult* b) { return a->frame_id < b->frame_id; });

  RunSummary s;
  s.model_name = model_name;
  s.frames_total = ordered.size();
  if (!ordered.empty()) {
    const auto fe = fe_rates(results);
    s.fe_rate = fe.fe_rate;
    s.fe_corr_rate = fe.fe_corr_rate;
    for (const FrameResult* r : ordered) {
      const StageUsage u = r->total_usage();
      s.mean_latency += r->total_latency;
      s.mean_input_tokens += static_cast<double>(u.input_tokens);
      s.mean_output_tokens += static_cast<double>(u.output_tokens);
      s.mean_cost += estimate_cost(u.input_tokens, u.output_tokens, prices);
    }
    const double n = static_cast<double>(ordered.size());
    s.mean_latency /= n;
    s.mean_input_tokens /= n;
    s.mean_output_tokens /= n;
    s.mean_cost /= n;
  }

  std::map<std::string, const FrameResult*> by_id;
  for (const FrameResult* r : ordered) by_id.emplace(r->frame_id, r);
  DisplacementMetrics sum;
  for (const auto& id : filter.retained) {  // already sorted
    const auto it = by_id.find(id);
    if (it == by_id.end() || !it->second->predicted) {
      throw MetricsError("retained frame '" + id + "' has no prediction in run '" + model_name + "'");
    }
    const auto gt = ground_truth.find(id);
    if (gt == ground_truth.end()) throw MetricsError("retained frame '" + id + "' has no ground truth");
    const auto m = displacement_errors(*it->second->predicted, gt->second);
    sum.ade_1s += m.ade_1s;
    sum.ade_2s += m.ade_2s;
    sum.ade_3s += m.ade_3s;
    sum.ade_avg += m.ade_avg;
    sum.fde += m.fde;
  }
  s.frames_evaluated = filter.retained.size();
  if (s.frames_evaluated > 0) {
    const double n = static_cast<double>(s.frames_evaluated);
    s.displacement = {sum.ade_1s / n, sum.ade_2s / n, sum.ade_3s / n, sum.ade_avg / n, sum.fde / n};
  }
  return s;
}

nlohmann::json to_json(const DisplacementMetrics& m) {
  return {{"ade_1s", m.ade_1s}, {"ade_2s", m.ade_2s}, {"ade_3s", m.ade_3s}, {"ade_avg", m.ade_avg}, {"fde", m.fde}};
}

nlohmann::json to_json(const RunSummary& s) {
  return {{"model_name", s.model_name},
          {"frames_total", s.frames_total},
          {"frames_evaluated", s.frames_evaluated},
          {"fe_rate", s.fe_rate},
          {"fe_corr_rate", s.fe_corr_rate},
          {"mean_latency", s.mean_latency},
          {"mean_input_tokens", s.mean_input_tokens},
          {"mean_output_tokens", s.mean_output_tokens},
          {"mean_cost", s.mean_cost},
          {"displacement", to_json(s.displacement)}};
}

nlohmann::json to_json(const FilterReport& f) {
  return {{"total", f.total},
          {"retained_count", f.retained.size()},
          {"retention_rate", f.retention_rate},
          {"retained", f.retained},
          {"excluded", f.excluded}};
}

}  // namespace vlmdrive
