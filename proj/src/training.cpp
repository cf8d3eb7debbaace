#include "panodepth/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>

#include "panodepth/image_io.hpp"
#include "panodepth/renderer.hpp"
#include "panodepth/rng.hpp"

namespace panodepth {

LossWeights LossWeights::defaults(std::size_t scales) {
  LossWeights w;
  double alpha = 1.0;
  for (std::size_t i = 0; i < scales; ++i) {
    w.depth.push_back(alpha);
    w.smooth.push_back(0.01 * alpha);
    alpha *= 0.5;
  }
  return w;
}

void LossWeights::validate(std::size_t scales) const {
  if (depth.size() != scales || smooth.size() != scales) {
    throw ConfigError("loss weights need one depth and one smoothness weight per prediction scale (" +
                      std::to_string(scales) + ")");
  }
  bool any = false;
  for (std::size_t i = 0; i < scales; ++i) {
    if (!(depth[i] >= 0.0) || !(smooth[i] >= 0.0)) throw ConfigError("loss weights must be >= 0");
    any = any || depth[i] > 0.0;
  }
  if (!any) throw ConfigError("at least one depth weight must be > 0");
}

ScaledTarget downscale_gt(const DepthMap& depth, const ValidityMask& mask, int s, float sentinel) {
  if (!(depth.width() == mask.width() && depth.height() == mask.height())) {
    throw ShapeError("depth and mask dims differ");
  }
  if (s < 1 || depth.width() % s != 0 || depth.height() % s != 0) {
    throw ConfigError("scale " + std::to_string(s) + " does not divide " + std::to_string(depth.width()) + "x" +
                      std::to_string(depth.height()));
  }
  const int w = depth.width() / s, h = depth.height() / s;
  ScaledTarget out{DepthMap(w, h, 1, sentinel), ValidityMask(w, h, 1, 0)};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      int n = 0;
      for (int dv = 0; dv < s; ++dv) {
        for (int du = 0; du < s; ++du) {
          if (mask.at(u * s + du, v * s + dv) == 0) continue;
          acc += depth.at(u * s + du, v * s + dv);
          ++n;
        }
      }
      if (n == 0) continue;
      out.depth.at(u, v) = static_cast<float>(acc / n);
      out.mask.at(u, v) = 1;
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> accumulate(const Tensor<T>& total, const Tensor<T>& term) {
  return total.defined() ? add(total, term) : term;
}

}  // namespace

template <typename T>
LossTerms<T> multiscale_loss(const std::vector<std::pair<int, Tensor<T>>>& predictions,
                             const std::vector<TargetTensor<T>>& targets, const LossWeights& weights) {
  if (predictions.size() != targets.size()) throw ShapeError("one target per prediction scale is required");
  weights.validate(predictions.size());
  LossTerms<T> out;
  bool any_valid = false;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& [scale_factor, pred] = predictions[i];
    const TargetTensor<T>& target = targets[i];
    if (target.scale != scale_factor || !(pred.shape() == target.depth.shape())) {
      throw ShapeError("prediction " + pred.shape().str() + " at scale " + std::to_string(scale_factor) +
                       " does not match its target " + target.depth.shape().str());
    }
    if (target.mask.size() != pred.numel()) throw ShapeError("mask size does not match prediction");
    const Shape& s = pred.shape();
    double count = 0.0;
    for (T m : target.mask) count += m;
    if (count == 0.0) continue;
    any_valid = true;

    if (weights.depth[i] > 0.0) {
      const auto sq = weighted_sq_sum(pred, target.depth, std::span<const T>(target.mask));
      const double term = static_cast<double>(sq.item()) / count;
      out.depth_term += weights.depth[i] * term;
      out.total = accumulate(out.total, scale(sq, static_cast<T>(weights.depth[i] / count)));
    }

    if (weights.smooth[i] > 0.0) {
      std::vector<T> across(pred.numel(), T(0)), down(pred.numel(), T(0));
      double contributing = 0.0;
      for (int n = 0; n < s.n; ++n) {
        for (int h = 0; h < s.h; ++h) {
          for (int w = 0; w < s.w; ++w) {
            const std::size_t at = (static_cast<std::size_t>(n) * s.h + h) * s.w + w;
            const std::size_t right = (static_cast<std::size_t>(n) * s.h + h) * s.w + (w + 1) % s.w;
            across[at] = target.mask[at] * target.mask[right];
            if (h + 1 < s.h) down[at] = target.mask[at] * target.mask[at + s.w];
            if (across[at] != T(0) || down[at] != T(0)) contributing += 1.0;
          }
        }
      }
      if (contributing > 0.0) {
        const auto gx = weighted_sq_sum(translate(pred, 0, 1), pred, std::span<const T>(across));
        const auto gy = weighted_sq_sum(translate(pred, 1, 0), pred, std::span<const T>(down));
        const auto both = add(gx, gy);
        out.smooth_term += weights.smooth[i] * static_cast<double>(both.item()) / contributing;
        out.total = accumulate(out.total, scale(both, static_cast<T>(weights.smooth[i] / contributing)));
      }
    }
  }
  if (!any_valid || !out.total.defined()) {
    out.empty_mask = !any_valid;
    // Keeps the graph connected so backward yields exact zero gradients.
    out.total = scale(sum(predictions.front().second), T(0));
  }
  return out;
}

std::vector<Sample> load_samples(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto manifest = read_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  std::vector<Sample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    Sample s;
    s.name = r.scene_id + "_k" + std::to_string(r.yaw_k);
    s.scene_id = r.scene_id;
    s.color = load_color((root / r.color).string());
    s.depth = load_depth((root / r.depth).string());
    s.mask = load_mask((root / r.mask).string());
    if (s.depth.width() != s.color.width() || s.depth.height() != s.color.height() ||
        s.mask.width() != s.color.width() || s.mask.height() != s.color.height()) {
      throw ShapeError("sample " + s.name + " has color/depth/mask dims that differ");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

Split split_by_scene(const std::vector<Sample>& samples) {
  std::vector<std::string> order;
  for (const auto& s : samples) {
    if (std::find(order.begin(), order.end(), s.scene_id) == order.end()) order.push_back(s.scene_id);
  }
  const std::size_t held = order.size() / 10;
  const std::vector<std::string> validation(order.end() - static_cast<std::ptrdiff_t>(held), order.end());
  Split split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool val = std::find(validation.begin(), validation.end(), samples[i].scene_id) != validation.end();
    (val ? split.validation : split.train).push_back(i);
  }
  return split;
}

Tensor<float> color_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ShapeError("empty batch");
  const int h = samples[0]->color.height(), w = samples[0]->color.width();
  const Shape shape{static_cast<int>(samples.size()), 3, h, w};
  std::vector<float> values(shape.numel());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const ColorImage& img = samples[n]->color;
    if (img.width() != w || img.height() != h) throw ShapeError("batch samples differ in dims");
    for (int c = 0; c < 3; ++c) {
      for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) values[((n * 3 + c) * h + v) * w + u] = img.at(u, v, c);
      }
    }
  }
  return Tensor<float>::from_values(shape, std::move(values));
}

std::vector<TargetTensor<float>> target_batch(const std::vector<const Sample*>& samples,
                                              const std::vector<int>& scales, float sentinel) {
  std::vector<TargetTensor<float>> out;
  for (int s : scales) {
    TargetTensor<float> t;
    t.scale = s;
    std::vector<float> depth;
    for (const Sample* sample : samples) {
      const auto scaled = downscale_gt(sample->depth, sample->mask, s, sentinel);
      depth.insert(depth.end(), scaled.depth.data().begin(), scaled.depth.data().end());
      for (auto m : scaled.mask.data()) t.mask.push_back(static_cast<float>(m));
    }
    const int h = samples[0]->depth.height() / s, w = samples[0]->depth.width() / s;
    t.depth = Tensor<float>::from_values({static_cast<int>(samples.size()), 1, h, w}, std::move(depth));
    out.push_back(std::move(t));
  }
  return out;
}

void TrainConfig::validate() const {
  spec.validate();
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam decays must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (!weights.depth.empty() || !weights.smooth.empty()) weights.validate(spec.scales.size());
}

TrainResult train(const TrainConfig& config, const TrainCallback& on_step) {
  return train(config, load_samples(config.manifest), on_step);
}

TrainResult train(const TrainConfig& config, const std::vector<Sample>& samples, const TrainCallback& on_step) {
  config.validate();
  const ModelSpec& spec = config.spec;
  const LossWeights weights =
      config.weights.depth.empty() ? LossWeights::defaults(spec.scales.size()) : config.weights;
  for (const auto& s : samples) {
    if (s.color.width() != spec.width || s.color.height() != spec.height) {
      throw ShapeError("sample " + s.name + " is " + std::to_string(s.color.width()) + "x" +
                       std::to_string(s.color.height()) + ", model expects " + std::to_string(spec.width) + "x" +
                       std::to_string(spec.height));
    }
  }
  std::vector<std::size_t> pool;
  if (config.hold_out_validation) {
    pool = split_by_scene(samples).train;
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) pool.push_back(i);
  }
  if (pool.empty()) throw ConfigError("no training samples");

  TrainResult result{build_model<float>(spec), 0, {}, false};
  Model<float>& model = result.model;
  model.initialize(config.seed);

  double depth_sum = 0.0, depth_count = 0.0;
  for (std::size_t i : pool) {
    const auto& depth = samples[i].depth.data();
    const auto& mask = samples[i].mask.data();
    for (std::size_t k = 0; k < depth.size(); ++k) {
      if (mask[k]) {
        depth_sum += depth[k];
        depth_count += 1.0;
      }
    }
  }
  if (depth_count > 0.0) {
    const float mean = static_cast<float>(depth_sum / depth_count);
    for (const auto& pl : model.prediction_layers()) {
      const std::string bias_name = model.layers()[pl.second].name + ".bias";
      for (auto& p : model.parameters()) {
        if (p.name != bias_name) continue;
        auto values = p.tensor.mutable_values();
        std::fill(values.begin(), values.end(), mean);
      }
    }
  }

  std::vector<std::vector<double>> m1, m2;
  for (const auto& p : model.parameters()) {
    m1.emplace_back(p.tensor.numel(), 0.0);
    m2.emplace_back(p.tensor.numel(), 0.0);
  }

  Rng rng(hash_counters(config.seed, 0x53485546u));
  std::vector<std::size_t> order = pool;
  std::size_t cursor = order.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch), pool.size());
  const auto start = std::chrono::steady_clock::now();
  const float sentinel = static_cast<float>(spec.max_depth);

  for (int it = 0; it < config.iterations; ++it) {
    std::vector<const Sample*> chosen;
    while (chosen.size() < batch) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        cursor = 0;
      }
      chosen.push_back(&samples[order[cursor++]]);
    }
    const std::uint64_t step = result.steps + 1;
    const auto output = model.forward(color_batch(chosen), {true, config.seed, step});
    const auto terms = multiscale_loss(output.predictions, target_batch(chosen, spec.scales, sentinel), weights);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    result.empty_mask_warning = result.empty_mask_warning || terms.empty_mask;
    backward(terms.total);

    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto values = params[p].tensor.mutable_values();
      const auto grad = params[p].tensor.grad();
      if (grad.empty()) continue;
      if (!all_finite(grad)) throw NumericalError("non-finite gradient in " + params[p].name);
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double g = grad[k];
        m1[p][k] = config.beta1 * m1[p][k] + (1.0 - config.beta1) * g;
        m2[p][k] = config.beta2 * m2[p][k] + (1.0 - config.beta2) * g * g;
        const double update = config.learning_rate * (m1[p][k] / correction1) /
                              (std::sqrt(m2[p][k] / correction2) + config.adam_epsilon);
        values[k] = static_cast<float>(values[k] - update);
      }
      params[p].tensor.zero_grad();
    }
    result.steps = step;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({step, loss, terms.depth_term, terms.smooth_term, seconds});
    if (on_step) on_step(result.log.back());
  }
  return result;
}

namespace {

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

}  // namespace

std::string log_header() { return "step,loss,depth_term,smooth_term,seconds"; }

std::string format_log_row(const LogRow& row) {
  return std::to_string(row.step) + "," + fmt(row.loss) + "," + fmt(row.depth_term) + "," + fmt(row.smooth_term) +
         "," + fmt(row.seconds);
}

DepthMap predict(const Model<float>& model, const ColorImage& color) {
  const ModelSpec& spec = model.spec();
  if (color.width() != spec.width || color.height() != spec.height || color.channels() != 3) {
    throw ShapeError("input image is " + std::to_string(color.width()) + "x" + std::to_string(color.height()) +
                     ", model expects " + std::to_string(spec.width) + "x" + std::to_string(spec.height) + " RGB");
  }
  NoGradGuard guard;
  Sample sample;
  sample.color = color;
  const auto out = model.forward(color_batch({&sample}), {false, 0, 0});
  const auto values = out.depth.values();
  if (!all_finite(values)) throw NumericalError("network produced non-finite depth");
  DepthMap depth(spec.width, spec.height, 1);
  const float hi = static_cast<float>(spec.max_depth);
  for (std::size_t i = 0; i < values.size(); ++i) depth.data()[i] = std::clamp(values[i], kMinPredictedDepth, hi);
  return depth;
}

double masked_rmse(const DepthMap& pred, const DepthMap& gt, const ValidityMask& mask) {
  if (!pred.same_shape(gt) || pred.width() != mask.width() || pred.height() != mask.height()) {
    throw ShapeError("masked_rmse: dims differ");
  }
  double acc = 0.0, n = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.data()[i]) continue;
    const double d = static_cast<double>(pred.data()[i]) - gt.data()[i];
    acc += d * d;
    n += 1.0;
  }
  if (n == 0.0) throw DomainError("masked_rmse: mask has no valid pixel");
  return std::sqrt(acc / n);
}

GradCheckResult model_grad_check(const ModelSpec& spec, std::uint64_t seed, std::size_t max_per_tensor) {
  auto model = build_model<double>(spec);
  model.initialize(seed);
  Rng rng(hash_counters(seed, 1));
  for (auto& p : model.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (auto& v : p.tensor.mutable_values()) v = rng.uniform(-0.1, 0.1);
    }
  }
  std::vector<double> input(static_cast<std::size_t>(spec.in_channels) * spec.height * spec.width);
  for (auto& v : input) v = rng.uniform();
  const auto x = Tensor<double>::from_values({1, spec.in_channels, spec.height, spec.width}, input);

  // Targets sit near the initial prediction: a loss of order one keeps the
  // finite-difference roundoff below the gradients being measured.
  std::vector<std::pair<int, Tensor<double>>> initial;
  {
    NoGradGuard no_grad;
    initial = model.forward(x).predictions;
  }
  std::vector<TargetTensor<double>> targets;
  for (const auto& [s, pred] : initial) {
    std::vector<double> depth(pred.values().begin(), pred.values().end());
    TargetTensor<double> t;
    t.scale = s;
    for (auto& v : depth) v += rng.uniform(-0.5, 0.5);
    for (std::size_t i = 0; i < depth.size(); ++i) t.mask.push_back(rng.uniform() < 0.8 ? 1.0 : 0.0);
    t.depth = Tensor<double>::from_values(pred.shape(), std::move(depth));
    targets.push_back(std::move(t));
  }
  LossWeights weights = LossWeights::defaults(spec.scales.size());
  for (auto& b : weights.smooth) b *= 10.0;
  return grad_check([&] { return multiscale_loss(model.forward(x).predictions, targets, weights).total; },
                    model.parameters(), {1e-5, 1e-6, max_per_tensor});
}

template LossTerms<float> multiscale_loss(const std::vector<std::pair<int, Tensor<float>>>&,
                                          const std::vector<TargetTensor<float>>&, const LossWeights&);
template LossTerms<double> multiscale_loss(const std::vector<std::pair<int, Tensor<double>>>&,
                                           const std::vector<TargetTensor<double>>&, const LossWeights&);

}  // namespace panodepth
