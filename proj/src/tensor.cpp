#include "panodepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "panodepth/rng.hpp"

namespace panodepth {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

void ConvSpec::validate() const {
  if (kernel_h < 1 || kernel_w < 1) throw ConfigError("conv kernel dims must be >= 1");
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (dilation < 1) throw ConfigError("conv dilation must be >= 1");
}

ConvGeometry ConvGeometry::same(int in_h, int in_w, const ConvSpec& spec) {
  spec.validate();
  ConvGeometry g{};
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_h = (in_h + spec.stride - 1) / spec.stride;
  g.out_w = (in_w + spec.stride - 1) / spec.stride;
  g.kernel_h = spec.kernel_h;
  g.kernel_w = spec.kernel_w;
  g.stride = spec.stride;
  g.dilation = spec.dilation;
  g.padding = spec.padding;
  const int pad_h = std::max((g.out_h - 1) * spec.stride + (spec.kernel_h - 1) * spec.dilation + 1 - in_h, 0);
  const int pad_w = std::max((g.out_w - 1) * spec.stride + (spec.kernel_w - 1) * spec.dilation + 1 - in_w, 0);
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Creates the output node of an op. It records parents only when gradients are
// being tracked and some parent needs them.
template <typename T>
NodePtr<T> make_node(const Shape& shape, std::initializer_list<const Tensor<T>*> parents) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = shape;
  node->value.assign(shape.numel(), T(0));
  bool needs = false;
  if (GradMode::enabled()) {
    for (const Tensor<T>* p : parents) needs = needs || (p->defined() && p->requires_grad());
  }
  node->requires_grad = needs;
  if (needs) {
    for (const Tensor<T>* p : parents) {
      if (p->defined()) node->parents.push_back(p->node());
    }
  }
  return node;
}

template <typename T>
NodePtr<T> make_node_list(const Shape& shape, const std::vector<Tensor<T>>& parents) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = shape;
  node->value.assign(shape.numel(), T(0));
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    for (const auto& p : parents) node->parents.push_back(p.node());
  }
  return node;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// ---------------------------------------------------------------------------
// Dense kernels. Each output element accumulates its terms in a fixed order
// that does not depend on its position, which keeps results bit-identical
// under circular shifts of the input.

constexpr int kColumnBlock = 256;

// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int j0 = 0; j0 < N; j0 += kColumnBlock) {
    const int jn = std::min(kColumnBlock, N - j0);
    int i = 0;
    for (; i + 4 <= M; i += 4) {
      T* c0 = C + static_cast<std::size_t>(i) * N + j0;
      T* c1 = c0 + N;
      T* c2 = c1 + N;
      T* c3 = c2 + N;
      for (int k = 0; k < K; ++k) {
        const T a0 = A[static_cast<std::size_t>(i) * K + k];
        const T a1 = A[static_cast<std::size_t>(i + 1) * K + k];
        const T a2 = A[static_cast<std::size_t>(i + 2) * K + k];
        const T a3 = A[static_cast<std::size_t>(i + 3) * K + k];
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        for (int j = 0; j < jn; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      T* c = C + static_cast<std::size_t>(i) * N + j0;
      for (int k = 0; k < K; ++k) {
        const T a = A[static_cast<std::size_t>(i) * K + k];
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        for (int j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

// C[K x N] += A^T * B with A[M x K], B[M x N]
template <typename T>
void gemm_tn(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int j0 = 0; j0 < N; j0 += kColumnBlock) {
    const int jn = std::min(kColumnBlock, N - j0);
    for (int k = 0; k < K; ++k) {
      T* c = C + static_cast<std::size_t>(k) * N + j0;
      for (int m = 0; m < M; ++m) {
        const T a = A[static_cast<std::size_t>(m) * K + k];
        const T* b = B + static_cast<std::size_t>(m) * N + j0;
        for (int j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < rows; r0 += kTile) {
    for (int c0 = 0; c0 < cols; c0 += kTile) {
      const int r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

// C[M x K] += A[M x N] * B^T with B[K x N]
template <typename T>
void gemm_nt(int M, int K, int N, const T* A, const T* B, T* C) {
  std::vector<T> bt(static_cast<std::size_t>(N) * K);
  transpose(K, N, B, bt.data());
  gemm_nn(M, K, N, A, bt.data(), C);
}

// Source row/column per kernel tap and output position; -1 reads a zero.
struct TapTables {
  std::vector<int> rows;  // kernel_h x out_h
  std::vector<int> cols;  // kernel_w x out_w
};

TapTables make_taps(const ConvGeometry& g) {
  TapTables t;
  t.rows.resize(static_cast<std::size_t>(g.kernel_h) * g.out_h);
  t.cols.resize(static_cast<std::size_t>(g.kernel_w) * g.out_w);
  for (int i = 0; i < g.kernel_h; ++i) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      const int ih = oh * g.stride + i * g.dilation - g.pad_top;
      t.rows[static_cast<std::size_t>(i) * g.out_h + oh] = (ih >= 0 && ih < g.in_h) ? ih : -1;
    }
  }
  for (int j = 0; j < g.kernel_w; ++j) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      int iw = ow * g.stride + j * g.dilation - g.pad_left;
      if (g.padding == PaddingMode::sphere) {
        iw = ((iw % g.in_w) + g.in_w) % g.in_w;
      } else if (iw < 0 || iw >= g.in_w) {
        iw = -1;
      }
      t.cols[static_cast<std::size_t>(j) * g.out_w + ow] = iw;
    }
  }
  return t;
}

// col[(c, i, j) x (oh, ow)] = x[c, row(i, oh), col(j, ow)]
template <typename T>
void im2col(const T* x, int channels, const ConvGeometry& g, const TapTables& taps, T* col) {
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int i = 0; i < g.kernel_h; ++i) {
      for (int j = 0; j < g.kernel_w; ++j) {
        T* dst = col + ((static_cast<std::size_t>(c) * g.kernel_h + i) * g.kernel_w + j) * plane;
        const int* cols = taps.cols.data() + static_cast<std::size_t>(j) * g.out_w;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = taps.rows[static_cast<std::size_t>(i) * g.out_h + oh];
          T* d = dst + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0) {
            std::fill(d, d + g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * g.in_w;
          for (int ow = 0; ow < g.out_w; ++ow) d[ow] = cols[ow] < 0 ? T(0) : src[cols[ow]];
        }
      }
    }
  }
}

// Adjoint of im2col: x[c, row, col] += col[...]
template <typename T>
void col2im(const T* col, int channels, const ConvGeometry& g, const TapTables& taps, T* x) {
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int i = 0; i < g.kernel_h; ++i) {
      for (int j = 0; j < g.kernel_w; ++j) {
        const T* src = col + ((static_cast<std::size_t>(c) * g.kernel_h + i) * g.kernel_w + j) * plane;
        const int* cols = taps.cols.data() + static_cast<std::size_t>(j) * g.out_w;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = taps.rows[static_cast<std::size_t>(i) * g.out_h + oh];
          if (ih < 0) continue;
          const T* s = src + static_cast<std::size_t>(oh) * g.out_w;
          T* row = xc + static_cast<std::size_t>(ih) * g.in_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            if (cols[ow] >= 0) row[cols[ow]] += s[ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  const Shape xs = x.shape(), ws = weight.shape();
  require(ws.c == xs.c && ws.h == spec.kernel_h && ws.w == spec.kernel_w,
          "conv2d: input " + xs.str() + " incompatible with weight " + ws.str());
  if (bias.defined()) {
    require(bias.shape() == Shape{1, ws.n, 1, 1},
            "conv2d: bias " + bias.shape().str() + " does not match weight " + ws.str());
  }
  const ConvGeometry g = ConvGeometry::same(xs.h, xs.w, spec);
  const int cout = ws.n;
  const int K = xs.c * spec.kernel_h * spec.kernel_w;
  const int P = g.out_h * g.out_w;
  const std::size_t in_plane = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * P;
  auto node = make_node<T>({xs.n, cout, g.out_h, g.out_w}, {&x, &weight, &bias});
  const TapTables taps = make_taps(g);
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  const T* w = weight.values().data();
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.values().data() + n * in_plane, xs.c, g, taps, col.data());
    T* out = node->value.data() + n * out_plane;
    if (bias.defined()) {
      for (int oc = 0; oc < cout; ++oc) std::fill(out + static_cast<std::size_t>(oc) * P, out + static_cast<std::size_t>(oc + 1) * P, bias.values()[oc]);
    }
    gemm_nn(cout, P, K, w, col.data(), out);
  }
  if (node->requires_grad) {
    const bool has_bias = bias.defined();
    node->backward_fn = [g, xs, cout, K, P, in_plane, out_plane, has_bias](TensorNode<T>& self) {
      TensorNode<T>& xn = *self.parents[0];
      TensorNode<T>& wn = *self.parents[1];
      TensorNode<T>* bn = has_bias ? self.parents[2].get() : nullptr;
      const TapTables taps = make_taps(g);
      std::vector<T> col(static_cast<std::size_t>(K) * P);
      std::vector<T> colt(static_cast<std::size_t>(K) * P);
      for (int n = 0; n < xs.n; ++n) {
        const T* gy = self.grad.data() + n * out_plane;
        if (wn.requires_grad) {
          im2col(xn.value.data() + n * in_plane, xs.c, g, taps, col.data());
          transpose(K, P, col.data(), colt.data());
          gemm_nn(cout, K, P, gy, colt.data(), wn.ensure_grad().data());
        }
        if (xn.requires_grad) {
          std::fill(col.begin(), col.end(), T(0));
          gemm_tn(cout, K, P, wn.value.data(), gy, col.data());
          col2im(col.data(), xs.c, g, taps, xn.ensure_grad().data() + n * in_plane);
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int oc = 0; oc < cout; ++oc) {
            T acc = 0;
            for (int p = 0; p < P; ++p) acc += gy[static_cast<std::size_t>(oc) * P + p];
            gb[oc] += acc;
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec) {
  const Shape xs = x.shape(), ws = weight.shape();
  require(ws.n == xs.c && ws.h == spec.kernel_h && ws.w == spec.kernel_w,
          "conv_transpose2d: input " + xs.str() + " incompatible with weight " + ws.str());
  const int cout = ws.c;
  if (bias.defined()) {
    require(bias.shape() == Shape{1, cout, 1, 1},
            "conv_transpose2d: bias " + bias.shape().str() + " does not match weight " + ws.str());
  }
  const ConvGeometry g = ConvGeometry::same(xs.h * spec.stride, xs.w * spec.stride, spec);
  const int K = cout * spec.kernel_h * spec.kernel_w;
  const int P = xs.h * xs.w;
  const std::size_t in_plane = static_cast<std::size_t>(xs.c) * P;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * g.in_h * g.in_w;
  auto node = make_node<T>({xs.n, cout, g.in_h, g.in_w}, {&x, &weight, &bias});
  const TapTables taps = make_taps(g);
  std::vector<T> col(static_cast<std::size_t>(K) * P);
  for (int n = 0; n < xs.n; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_tn(xs.c, K, P, weight.values().data(), x.values().data() + n * in_plane, col.data());
    T* out = node->value.data() + n * out_plane;
    col2im(col.data(), cout, g, taps, out);
    if (bias.defined()) {
      const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
      for (int oc = 0; oc < cout; ++oc) {
        const T b = bias.values()[oc];
        for (std::size_t p = 0; p < plane; ++p) out[oc * plane + p] += b;
      }
    }
  }
  if (node->requires_grad) {
    const bool has_bias = bias.defined();
    node->backward_fn = [g, xs, cout, K, P, in_plane, out_plane, has_bias](TensorNode<T>& self) {
      TensorNode<T>& xn = *self.parents[0];
      TensorNode<T>& wn = *self.parents[1];
      TensorNode<T>* bn = has_bias ? self.parents[2].get() : nullptr;
      const TapTables taps = make_taps(g);
      std::vector<T> col(static_cast<std::size_t>(K) * P);
      const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
      for (int n = 0; n < xs.n; ++n) {
        const T* gy = self.grad.data() + n * out_plane;
        im2col(gy, cout, g, taps, col.data());
        if (xn.requires_grad) {
          gemm_nn(xs.c, P, K, wn.value.data(), col.data(), xn.ensure_grad().data() + n * in_plane);
        }
        if (wn.requires_grad) {
          gemm_nt(xs.c, K, P, xn.value.data() + n * in_plane, col.data(), wn.ensure_grad().data());
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int oc = 0; oc < cout; ++oc) {
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += gy[oc * plane + p];
            gb[oc] += acc;
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  auto node = make_node<T>(x.shape(), {&x});
  const auto in = x.values();
  for (std::size_t i = 0; i < in.size(); ++i) node->value[i] = in[i] > T(0) ? in[i] : std::expm1(in[i]);
  if (node->requires_grad) {
    node->backward_fn = [](TensorNode<T>& self) {
      TensorNode<T>& xn = *self.parents[0];
      if (!xn.requires_grad) return;
      auto& gx = xn.ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T slope = xn.value[i] > T(0) ? T(1) : self.value[i] + T(1);
        gx[i] += self.grad[i] * slope;
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, const DropoutKey& key, bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  auto node = make_node<T>(x.shape(), {&x});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(x.numel());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    const double u = to_unit(hash_counters(key.seed, key.layer, key.step, i));
    factor[i] = u >= rate ? keep_scale : T(0);
    node->value[i] = x.values()[i] * factor[i];
  }
  if (node->requires_grad) {
    node->backward_fn = [factor = std::move(factor)](TensorNode<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor[i];
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "concat of zero tensors");
  Shape out = xs[0].shape();
  out.c = 0;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    require(s.n == out.n && s.h == out.h && s.w == out.w,
            "concat: shape " + s.str() + " does not match " + xs[0].shape().str());
    out.c += s.c;
  }
  auto node = make_node_list<T>(out, xs);
  const std::size_t plane = static_cast<std::size_t>(out.h) * out.w;
  for (int n = 0; n < out.n; ++n) {
    std::size_t offset = static_cast<std::size_t>(n) * out.c * plane;
    for (const auto& t : xs) {
      const std::size_t chunk = static_cast<std::size_t>(t.shape().c) * plane;
      std::copy_n(t.values().data() + n * chunk, chunk, node->value.data() + offset);
      offset += chunk;
    }
  }
  if (node->requires_grad) {
    node->backward_fn = [plane, out](TensorNode<T>& self) {
      for (int n = 0; n < out.n; ++n) {
        std::size_t offset = static_cast<std::size_t>(n) * out.c * plane;
        for (auto& p : self.parents) {
          const std::size_t chunk = static_cast<std::size_t>(p->shape.c) * plane;
          if (p->requires_grad) {
            T* g = p->ensure_grad().data() + n * chunk;
            const T* src = self.grad.data() + offset;
            for (std::size_t i = 0; i < chunk; ++i) g[i] += src[i];
          }
          offset += chunk;
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  const Shape s = x.shape();
  const Shape out{s.n, s.c, s.h * factor, s.w * factor};
  auto node = make_node<T>(out, {&x});
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.values().data() + pl * s.h * s.w;
    T* dst = node->value.data() + pl * out.h * out.w;
    for (int oh = 0; oh < out.h; ++oh) {
      for (int ow = 0; ow < out.w; ++ow) dst[oh * out.w + ow] = src[(oh / factor) * s.w + ow / factor];
    }
  }
  if (node->requires_grad) {
    node->backward_fn = [s, out, factor, planes](TensorNode<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        T* dst = gx.data() + pl * s.h * s.w;
        const T* src = self.grad.data() + pl * out.h * out.w;
        for (int oh = 0; oh < out.h; ++oh) {
          for (int ow = 0; ow < out.w; ++ow) dst[(oh / factor) * s.w + ow / factor] += src[oh * out.w + ow];
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  require(x.shape() == y.shape(), "add: shape " + x.shape().str() + " vs " + y.shape().str());
  auto node = make_node<T>(x.shape(), {&x, &y});
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = x.values()[i] + y.values()[i];
  if (node->requires_grad) {
    node->backward_fn = [](TensorNode<T>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> translate(const Tensor<T>& x, int dh, int dw) {
  const Shape s = x.shape();
  auto node = make_node<T>(s, {&x});
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  auto src_col = [s, dw](int w) { return (((w + dw) % s.w) + s.w) % s.w; };
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.values().data() + pl * s.h * s.w;
    T* dst = node->value.data() + pl * s.h * s.w;
    for (int h = 0; h < s.h; ++h) {
      const int sh = h + dh;
      if (sh < 0 || sh >= s.h) continue;
      for (int w = 0; w < s.w; ++w) dst[h * s.w + w] = src[sh * s.w + src_col(w)];
    }
  }
  if (node->requires_grad) {
    node->backward_fn = [s, dh, planes, src_col](TensorNode<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        T* dst = gx.data() + pl * s.h * s.w;
        const T* src = self.grad.data() + pl * s.h * s.w;
        for (int h = 0; h < s.h; ++h) {
          const int sh = h + dh;
          if (sh < 0 || sh >= s.h) continue;
          for (int w = 0; w < s.w; ++w) dst[sh * s.w + src_col(w)] += src[h * s.w + w];
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> weighted_sq_sum(const Tensor<T>& x, const Tensor<T>& y, std::span<const T> weights) {
  require(x.shape() == y.shape(), "weighted_sq_sum: shape " + x.shape().str() + " vs " + y.shape().str());
  require(weights.size() == x.numel(), "weighted_sq_sum: weight count does not match " + x.shape().str());
  auto node = make_node<T>({1, 1, 1, 1}, {&x, &y});
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double d = static_cast<double>(x.values()[i]) - static_cast<double>(y.values()[i]);
    acc += static_cast<double>(weights[i]) * d * d;
  }
  node->value[0] = static_cast<T>(acc);
  if (node->requires_grad) {
    node->backward_fn = [w = std::vector<T>(weights.begin(), weights.end())](TensorNode<T>& self) {
      TensorNode<T>& xn = *self.parents[0];
      TensorNode<T>& yn = *self.parents[1];
      const T g = self.grad[0];
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] == T(0)) continue;
        const T d = T(2) * w[i] * (xn.value[i] - yn.value[i]) * g;
        if (xn.requires_grad) xn.ensure_grad()[i] += d;
        if (yn.requires_grad) yn.ensure_grad()[i] -= d;
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto node = make_node<T>({1, 1, 1, 1}, {&x});
  double acc = 0;
  for (T v : x.values()) acc += v;
  node->value[0] = static_cast<T>(acc);
  if (node->requires_grad) {
    node->backward_fn = [](TensorNode<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (auto& g : gx) g += self.grad[0];
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  auto node = make_node<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = x.values()[i] * x.values()[i];
  if (node->requires_grad) {
    node->backward_fn = [](TensorNode<T>& self) {
      TensorNode<T>& xn = *self.parents[0];
      auto& gx = xn.ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * xn.value[i] * self.grad[i];
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto node = make_node<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = x.values()[i] * factor;
  if (node->requires_grad) {
    node->backward_fn = [factor](TensorNode<T>& self) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, int n, int c, int h, int w) {
  const Shape s = x.shape();
  require(n >= 0 && n < s.n && c >= 0 && c < s.c && h >= 0 && h < s.h && w >= 0 && w < s.w,
          "select: index outside " + s.str());
  const std::size_t index = ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
  auto node = make_node<T>({1, 1, 1, 1}, {&x});
  node->value[0] = x.values()[index];
  if (node->requires_grad) {
    node->backward_fn = [index](TensorNode<T>& self) { self.parents[0]->ensure_grad()[index] += self.grad[0]; };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::logic_error("backward() needs a scalar loss, got " +
                           (loss.defined() ? loss.shape().str() : std::string("undefined tensor")));
  }
  if (!loss.requires_grad()) return;
  // Post-order DFS gives a topological order; reverse it for the sweep.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (!node->backward_fn) continue;
    if (!node->grad.empty()) node->backward_fn(*node);
    // Interior gradients are consumed; only leaves keep theirs.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn, std::vector<Named<double>>& params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    const Tensor<double> loss = loss_fn();
    backward(loss);
  }
  GradCheckResult result;
  for (auto& p : params) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.mutable_values();
    const std::size_t count = values.size();
    std::vector<std::size_t> indices;
    if (options.max_per_tensor == 0 || count <= options.max_per_tensor) {
      for (std::size_t i = 0; i < count; ++i) indices.push_back(i);
    } else {
      for (std::size_t k = 0; k < options.max_per_tensor; ++k) {
        indices.push_back(k * (count - 1) / (options.max_per_tensor - 1));
      }
    }
    NoGradGuard no_grad;
    for (std::size_t i : indices) {
      const double original = values[i];
      values[i] = original + options.epsilon;
      const double up = loss_fn().item();
      values[i] = original - options.epsilon;
      const double down = loss_fn().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (result.checked == 1 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

#define PANODEPTH_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);   \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                      const ConvSpec&);                                               \
  template Tensor<T> elu(const Tensor<T>&);                                                           \
  template Tensor<T> dropout(const Tensor<T>&, double, const DropoutKey&, bool);                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> translate(const Tensor<T>&, int, int);                                           \
  template Tensor<T> weighted_sq_sum(const Tensor<T>&, const Tensor<T>&, std::span<const T>);         \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> square(const Tensor<T>&);                                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> select(const Tensor<T>&, int, int, int, int);                                    \
  template void backward(const Tensor<T>&);                                                           \
  template bool all_finite(std::span<const T>);

PANODEPTH_INSTANTIATE(float)
PANODEPTH_INSTANTIATE(double)

#undef PANODEPTH_INSTANTIATE

}  // namespace panodepth
