#ifndef GSLOC_EVALMETRICS_HPP_
#define GSLOC_EVALMETRICS_HPP_

#include <optional>

#include "gsloc/geometry.hpp"
#include "gsloc/image.hpp"

namespace gsloc {

// Ordered (rotation degrees, translation meters) threshold pairs, strictly
// increasing in both components.
struct ThresholdSpec {
  std::vector<std::pair<double, double>> pairs = {
      {0.5, 0.02}, {1.5, 0.05}, {3, 0.1}, {5, 0.5}, {10, 1.0}};

  bool valid() const {
    for (size_t i = 1; i < pairs.size(); ++i)
      if (pairs[i].first <= pairs[i - 1].first ||
          pairs[i].second <= pairs[i - 1].second)
        return false;
    return !pairs.empty();
  }
};

struct PoseError {
  double rot_deg = 0;
  double trans_m = 0;
};

// Camera-center distance and relative rotation angle in [0, 180] degrees.
PoseError pose_error(const CameraPose& estimate, const CameraPose& reference);

// Percentage per threshold of queries with rot <= deg AND trans <= m
// (inclusive); failed queries (nullopt) count in the denominator.
std::vector<double> recall_table(const std::vector<std::optional<PoseError>>& errors,
                                 const ThresholdSpec& spec);

struct AteResult {
  double rmse = 0;
  double max_err = 0;
  std::vector<double> residuals;
};

// Aligns estimated onto reference (Sim(3) when with_scale, else SE(3)) and
// reports residual camera-center distances.
AteResult compute_ate(const std::vector<TimedPose>& estimated,
                      const std::vector<TimedPose>& reference, bool with_scale);

// 10*log10(1/MSE) over all pixels and channels; +inf for identical images.
double compute_psnr(const Image& a, const Image& b);

struct MethodResult {
  std::string name;
  std::vector<std::optional<PoseError>> errors;  // nullopt = failed query
};

struct EvalReport {
  ThresholdSpec thresholds;
  std::vector<MethodResult> methods;
  std::vector<std::pair<std::string, double>> psnr;  // (config label, dB)
  std::vector<std::pair<std::string, AteResult>> ate;
};

// Writes recall.csv, ate.csv, psnr.csv and pose_errors.svg (rotation vs
// translation scatter per method, failures excluded). Deterministic bytes.
void emit_report(const EvalReport& report, const std::string& out_dir);

}  // namespace gsloc

#endif
