#pragma once

// Displacement metrics, format-error rates, the cross-model common-frame
// filter and per-model aggregation.

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmdrive/domain.hpp"
#include "vlmdrive/vlm_client.hpp"

namespace vlmdrive {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Meters. ADE@k s averages the first 2k points (2 Hz); ade_avg is the mean
/// of the three horizon ADEs, not of the six point errors.
struct DisplacementMetrics {
  double ade_1s = 0.0;
  double ade_2s = 0.0;
  double ade_3s = 0.0;
  double ade_avg = 0.0;
  double fde = 0.0;
};

double average_of_horizons(double ade_1s, double ade_2s, double ade_3s);

/// Per-point Euclidean errors.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> point_errors(const Eigen::MatrixBase<DerivedA>& predicted,
                                                                          const Eigen::MatrixBase<DerivedB>& truth) {
  return (predicted - truth).rowwise().norm();
}

DisplacementMetrics displacement_errors(const Trajectory& predicted, const Trajectory& ground_truth);

struct FilterReport {
  std::vector<std::string> retained;  // sorted
  std::size_t total = 0;
  double retention_rate = 0.0;                                 // percent
  std::map<std::string, std::vector<std::string>> excluded;    // frame -> failing runs
};

/// Keeps frames every run predicted. `runs` maps a run label to the frames it
/// produced a valid (strict or corrected) prediction for.
FilterReport common_frame_filter(const std::map<std::string, std::set<std::string>>& runs,
                                 const std::set<std::string>& universe);

struct FeRates {
  double fe_rate = 0.0;       // percent of results that were not strict
  double fe_corr_rate = 0.0;  // percent still failed after correction
};

FeRates fe_rates(std::span<const FrameResult> results);

struct RunSummary {
  std::string model_name;
  std::size_t frames_total = 0;
  std::size_t frames_evaluated = 0;  // retained frames used for displacement
  double fe_rate = 0.0;
  double fe_corr_rate = 0.0;
  double mean_latency = 0.0;  // seconds per frame, all attempted frames
  double mean_input_tokens = 0.0;
  double mean_output_tokens = 0.0;
  double mean_cost = 0.0;  // cents per frame
  DisplacementMetrics displacement;
};

/// Latency, token and cost means cover every attempted frame; displacement
/// means cover only the filter's retained frames, summed in frame_id order.
RunSummary summarize(const std::string& model_name, std::span<const FrameResult> results,
                     const std::map<std::string, Trajectory>& ground_truth, const ProviderConfig& prices,
                     const FilterReport& filter);

nlohmann::json to_json(const DisplacementMetrics& m);
nlohmann::json to_json(const RunSummary& s);
nlohmann::json to_json(const FilterReport& f);

}  // namespace vlmdrive
