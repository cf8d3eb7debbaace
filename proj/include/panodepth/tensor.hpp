#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "panodepth/error.hpp"

namespace panodepth {

// Dense N x C x H x W extent.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
  bool operator==(const Shape&) const = default;
};

// sphere: circular in width (longitude), zeros in height (latitude).
enum class PaddingMode { sphere, zero };

struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int dilation = 1;
  PaddingMode padding = PaddingMode::sphere;

  void validate() const;
};

// "Same"-style sizing: out = ceil(in / stride); the odd pad element goes to the
// bottom/right.
struct ConvGeometry {
  int in_h, in_w;
  int out_h, out_w;
  int kernel_h, kernel_w;
  int stride, dilation;
  int pad_top, pad_left;
  PaddingMode padding;

  static ConvGeometry same(int in_h, int in_w, const ConvSpec& spec);
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return full(shape, T(0), requires_grad);
  }
  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return from_values(shape, std::vector<T>(shape.numel(), value), requires_grad);
  }
  static Tensor from_values(const Shape& shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) +
                       " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor " + shape().str());
    return node_->value[0];
  }
  T at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return node_->value[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
  }
  // Values only, cut from the graph.
  Tensor detach() const { return from_values(shape(), node_->value, false); }

  const std::shared_ptr<TensorNode<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Graph recording switch, per thread.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// weight: Cout x Cin x KH x KW; bias: 1 x Cout x 1 x 1 or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec);

// Adjoint of a "same" strided conv from the (stride*H, stride*W) grid.
// weight: Cin x Cout x KH x KW; output: N x Cout x stride*H x stride*W.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec);

template <typename T>
Tensor<T> elu(const Tensor<T>& x);

// Keys the counter-based keep/drop stream.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
};

// Identity unless train; otherwise keeps each element with probability 1 - rate
// and scales kept elements by 1 / (1 - rate).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, const DropoutKey& key, bool train);

// Along the channel axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);

// out(h, w) = x(h + dh, (w + dw) mod W), zero when h + dh leaves the image.
template <typename T>
Tensor<T> translate(const Tensor<T>& x, int dh, int dw);

// sum_i weights[i] * (x[i] - y[i])^2 as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> weighted_sq_sum(const Tensor<T>& x, const Tensor<T>& y, std::span<const T> weights);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> square(const Tensor<T>& x);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// Single element as a scalar tensor.
template <typename T>
Tensor<T> select(const Tensor<T>& x, int n, int c, int h, int w);

// Reverse-mode accumulation from a scalar. Leaf gradients accumulate across calls.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
bool all_finite(std::span<const T> values);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

template <typename T>
struct Named {
  std::string name;
  Tensor<T> tensor;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Denominator floor of |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every element; otherwise an evenly spaced subset per tensor.
  std::size_t max_per_tensor = 0;
};

// Compares analytic gradients of loss_fn against (f(p + e) - f(p - e)) / 2e for
// every checked element of every tensor in `params`. loss_fn must rebuild its
// graph from the current parameter values on each call.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::vector<Named<double>>& params, const GradCheckOptions& options = {});

}  // namespace panodepth
