#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "panodepth/image.hpp"
#include "panodepth/models.hpp"

namespace panodepth {

// Per-scale weights of the depth and smoothness terms, parallel to the model's
// prediction scales (ascending).
struct LossWeights {
  std::vector<double> depth;
  std::vector<double> smooth;

  // depth 1.0 at full resolution, halved per level; smooth = 0.01 * depth.
  static LossWeights defaults(std::size_t scales);
  void validate(std::size_t scales) const;
};

struct ScaledTarget {
  DepthMap depth;
  ValidityMask mask;
};

// Averages the valid pixels of every s x s block; cells without any valid pixel
// get mask 0 and `sentinel` depth.
ScaledTarget downscale_gt(const DepthMap& depth, const ValidityMask& mask, int s, float sentinel);

// Batched target at one scale: depth N x 1 x h x w and a matching 0/1 weight vector.
template <typename T>
struct TargetTensor {
  int scale = 1;
  Tensor<T> depth;
  std::vector<T> mask;
};

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double depth_term = 0.0;   // sum over scales of weight * depth term
  double smooth_term = 0.0;  // sum over scales of weight * smoothness term
  bool empty_mask = false;   // no valid pixel at any scale; total is 0
};

// Depth term: mean squared error over valid pixels. Smoothness term: squared
// forward differences of the prediction (longitude wraps), a difference counted
// only when both of its pixels are valid, averaged over pixels with at least one
// counted difference.
template <typename T>
LossTerms<T> multiscale_loss(const std::vector<std::pair<int, Tensor<T>>>& predictions,
                             const std::vector<TargetTensor<T>>& targets, const LossWeights& weights);

struct Sample {
  std::string name;
  std::string scene_id;
  ColorImage color;
  DepthMap depth;
  ValidityMask mask;
};

// Loads every record of a manifest; paths resolve against the manifest directory.
std::vector<Sample> load_samples(const std::string& manifest_path);

// Indices of training and validation samples; the last floor(scenes / 10) distinct
// scene ids (in order of first appearance) form the validation set.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split split_by_scene(const std::vector<Sample>& samples);

// N x 3 x H x W, channel-planar.
Tensor<float> color_batch(const std::vector<const Sample*>& samples);
std::vector<TargetTensor<float>> target_batch(const std::vector<const Sample*>& samples,
                                              const std::vector<int>& scales, float sentinel);

struct TrainConfig {
  ModelSpec spec;
  std::string manifest;
  int batch = 4;
  int iterations = 2000;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights;  // empty: defaults for the model's scales
  bool hold_out_validation = true;

  void validate() const;
};

struct LogRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double depth_term = 0.0;
  double smooth_term = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Model<float> model;
  std::uint64_t steps = 0;
  std::vector<LogRow> log;
  bool empty_mask_warning = false;
};

using TrainCallback = std::function<void(const LogRow&)>;

// Adam on mini-batches drawn from a seeded per-epoch shuffle. Prediction-head
// biases start at the mean valid training depth.
TrainResult train(const TrainConfig& config, const TrainCallback& on_step = {});
TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, const TrainCallback& on_step = {});

std::string log_header();
std::string format_log_row(const LogRow& row);

inline constexpr float kMinPredictedDepth = 1e-3f;

// Full-resolution depth with dropout off, clamped to [kMinPredictedDepth, max_depth].
// Throws NumericalError on non-finite network output.
DepthMap predict(const Model<float>& model, const ColorImage& color);

// sqrt of the mean squared error over mask == 1 pixels.
double masked_rmse(const DepthMap& pred, const DepthMap& gt, const ValidityMask& mask);

// Gradient check of a whole double-precision model under the multi-scale loss:
// seeded weights and input, targets near the initial prediction with 20% of the
// pixels masked out, and a boosted smoothness weight so both terms register.
GradCheckResult model_grad_check(const ModelSpec& spec, std::uint64_t seed, std::size_t max_per_tensor = 0);

}  // namespace panodepth
