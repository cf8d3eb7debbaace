#include "panodepth/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>

#include "panodepth/geometry.hpp"
#include "panodepth/image_io.hpp"
#include "panodepth/parallel.hpp"
#include "panodepth/renderer.hpp"
#include "panodepth/training.hpp"

namespace panodepth {

namespace {

struct Accumulator {
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, d1 = 0, d2 = 0, d3 = 0;
  double weight_all = 0, weight_ratio = 0;

  MetricValues finish() const {
    MetricValues m;
    m.rmse = std::sqrt(sq / weight_all);
    if (weight_ratio > 0) {
      m.abs_rel = abs_rel / weight_ratio;
      m.sq_rel = sq_rel / weight_ratio;
      m.rmse_log = std::sqrt(sq_log / weight_ratio);
      m.d1 = d1 / weight_ratio;
      m.d2 = d2 / weight_ratio;
      m.d3 = d3 / weight_ratio;
    }
    return m;
  }
};

}  // namespace

MetricsRecord compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidityMask& mask) {
  if (!pred.same_shape(gt) || pred.width() != mask.width() || pred.height() != mask.height()) {
    throw ShapeError("prediction, ground truth and mask dims differ");
  }
  Accumulator plain, weighted;
  MetricsRecord record;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (int v = 0; v < gt.height(); ++v) {
    const double lat = latitude_weight(v, gt.height());
    for (int u = 0; u < gt.width(); ++u) {
      if (!mask.at(u, v)) continue;
      ++record.valid_px;
      const double g = gt.at(u, v);
      const double p = pred.at(u, v);
      const double diff = p - g;
      plain.sq += diff * diff;
      plain.weight_all += 1.0;
      weighted.sq += lat * diff * diff;
      weighted.weight_all += lat;
      if (g < kMinMetricDepth) continue;
      const double pc = std::max(p, kMinMetricDepth);
      const double dc = pc - g;
      const double ratio = std::max(pc / g, g / pc);
      const double log_diff = std::log(pc) - std::log(g);
      for (auto [acc, w] : {std::pair<Accumulator*, double>{&plain, 1.0}, {&weighted, lat}}) {
        acc->abs_rel += w * std::abs(dc) / g;
        acc->sq_rel += w * dc * dc / g;
        acc->sq_log += w * log_diff * log_diff;
        acc->d1 += ratio < t1 ? w : 0.0;
        acc->d2 += ratio < t2 ? w : 0.0;
        acc->d3 += ratio < t3 ? w : 0.0;
        acc->weight_ratio += w;
      }
    }
  }
  if (record.valid_px == 0) throw DomainError("metrics need at least one valid pixel");
  record.plain = plain.finish();
  record.weighted = weighted.finish();
  return record;
}

MetricsRecord aggregate(const std::vector<MetricsRecord>& records) {
  double total = 0.0;
  for (const auto& r : records) total += static_cast<double>(r.valid_px);
  if (total == 0.0) throw DomainError("nothing to aggregate");
  MetricsRecord out;
  for (const auto& r : records) {
    const double w = static_cast<double>(r.valid_px) / total;
    for (auto [dst, src] : {std::pair<MetricValues*, const MetricValues*>{&out.plain, &r.plain},
                            {&out.weighted, &r.weighted}}) {
      dst->abs_rel += w * src->abs_rel;
      dst->sq_rel += w * src->sq_rel;
      dst->rmse += w * src->rmse;
      dst->rmse_log += w * src->rmse_log;
      dst->d1 += w * src->d1;
      dst->d2 += w * src->d2;
      dst->d3 += w * src->d3;
    }
    out.valid_px += r.valid_px;
  }
  return out;
}

EvalResult evaluate(const Model<float>& model, const std::string& manifest_path, int jobs) {
  namespace fs = std::filesystem;
  const auto manifest = read_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  const auto& records = manifest.records;
  std::vector<std::optional<MetricsRecord>> scored(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    const auto& r = records[i];
    try {
      const auto color = load_color((root / r.color).string());
      const auto depth = load_depth((root / r.depth).string());
      const auto mask = load_mask((root / r.mask).string());
      scored[i] = compute_metrics(predict(model, color), depth, mask);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  EvalResult result;
  std::vector<MetricsRecord> good;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string name = records[i].scene_id + "_k" + std::to_string(records[i].yaw_k);
    if (!scored[i]) {
      result.failures.push_back(name + ": " + errors[i]);
      continue;
    }
    result.samples.push_back({name, *scored[i]});
    good.push_back(*scored[i]);
  }
  if (!good.empty()) result.aggregate = aggregate(good);
  return result;
}

namespace {

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

std::string values_csv(const MetricValues& m) {
  return fmt(m.abs_rel) + "," + fmt(m.sq_rel) + "," + fmt(m.rmse) + "," + fmt(m.rmse_log) + "," + fmt(m.d1) + "," +
         fmt(m.d2) + "," + fmt(m.d3);
}

}  // namespace

std::string metrics_csv_header() {
  return "sample,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,valid_px,"
         "w_abs_rel,w_sq_rel,w_rmse,w_rmse_log,w_d1,w_d2,w_d3";
}

std::string metrics_csv_row(const std::string& sample, const MetricsRecord& m) {
  return sample + "," + values_csv(m.plain) + "," + std::to_string(m.valid_px) + "," + values_csv(m.weighted);
}

std::string encode_metrics_csv(const EvalResult& result) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& s : result.samples) out += metrics_csv_row(s.sample, s.metrics) + "\n";
  if (!result.samples.empty()) out += metrics_csv_row("aggregate", result.aggregate) + "\n";
  return out;
}

}  // namespace panodepth
