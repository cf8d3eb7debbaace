#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "panodepth/image.hpp"
#include "panodepth/models.hpp"

namespace panodepth {

struct MetricValues {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double d1 = 0.0;  // fraction with max(pred/gt, gt/pred) < 1.25
  double d2 = 0.0;  // < 1.25^2
  double d3 = 0.0;  // < 1.25^3
  bool operator==(const MetricValues&) const = default;
};

struct MetricsRecord {
  MetricValues plain;
  MetricValues weighted;  // per-pixel latitude weights, normalized over valid pixels
  std::size_t valid_px = 0;
  bool operator==(const MetricsRecord&) const = default;
};

// Ground truth below this is excluded from the ratio-based metrics; predictions are
// clamped up to it before ratios and logs.
inline constexpr double kMinMetricDepth = 1e-3;

// Metrics over mask == 1 pixels. Throws DomainError when no pixel is valid.
MetricsRecord compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidityMask& mask);

// Mean of the records weighted by valid_px.
MetricsRecord aggregate(const std::vector<MetricsRecord>& records);

struct SampleMetrics {
  std::string sample;
  MetricsRecord metrics;
};

struct EvalResult {
  MetricsRecord aggregate;
  std::vector<SampleMetrics> samples;  // manifest order
  std::vector<std::string> failures;   // "sample: reason" for skipped records
};

// Predicts every manifest record with `model` and scores it; unreadable records are
// skipped and listed. `jobs` workers, result independent of the count.
EvalResult evaluate(const Model<float>& model, const std::string& manifest_path, int jobs = 1);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& sample, const MetricsRecord& m);
std::string encode_metrics_csv(const EvalResult& result);

}  // namespace panodepth
