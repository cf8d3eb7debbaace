#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "panodepth/tensor.hpp"

namespace panodepth {

enum class Architecture { uresnet, rectnet };

std::string to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct FilterSize {
  int h = 3;
  int w = 3;
  int area() const { return h * w; }
  bool operator==(const FilterSize&) const = default;
};

// Parallel square and rectangle filters whose outputs are concatenated.
struct RectBankEntry {
  FilterSize square;
  FilterSize rect;
  bool operator==(const RectBankEntry&) const = default;
};

struct ModelSpec {
  Architecture architecture = Architecture::rectnet;
  int in_channels = 3;
  int height = 64;
  int width = 128;
  int base_width = 8;
  std::vector<int> dilations{2, 4, 8, 16};
  std::vector<RectBankEntry> rect_bank{{{3, 3}, {1, 9}}, {{5, 5}, {3, 9}}};
  std::vector<int> scales;  // prediction downscale factors, ascending, 1 first
  double dropout = 0.0;
  PaddingMode padding = PaddingMode::sphere;
  double max_depth = 20.0;

  static ModelSpec defaults(Architecture arch, int height, int width, int base_width = 8);
  // Throws ConfigError on any violated invariant.
  void validate() const;
  std::string to_text() const;
  static ModelSpec from_text(std::string_view text);
  bool operator==(const ModelSpec&) const = default;
};

std::vector<int> architecture_scales(Architecture arch);
// Largest power-of-two factor the input dims must be divisible by.
int architecture_divisor(Architecture arch);

enum class LayerKind { input, conv, conv_transpose, elu, dropout, concat, add, upsample };

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<int> inputs;
  ConvSpec conv;
  int in_channels = 0;
  int out_channels = 0;
  int factor = 1;      // upsample
  int dropout_id = 0;  // keys the dropout stream
};

// Declarative feed-forward graph; layer i only reads layers < i.
class LayerGraph {
 public:
  int input(int channels);
  int conv(const std::string& name, int from, int out_channels, FilterSize kernel, int stride = 1,
           int dilation = 1, PaddingMode padding = PaddingMode::sphere);
  int conv_transpose(const std::string& name, int from, int out_channels, FilterSize kernel, int stride,
                     PaddingMode padding = PaddingMode::sphere);
  int elu(int from);
  int dropout(int from);
  int concat(const std::vector<int>& from);
  int add(int a, int b);
  int upsample(int from, int factor);

  int channels(int layer) const { return layers_.at(layer).out_channels; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  int push(Layer layer);
  std::vector<Layer> layers_;
  int next_dropout_ = 0;
};

struct ForwardOptions {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

template <typename T>
struct ModelOutput {
  Tensor<T> depth;                                   // full resolution, 1 channel
  std::vector<std::pair<int, Tensor<T>>> predictions;  // (scale, map), ascending scale
};

template <typename T>
class Model {
 public:
  // predictions: (scale, layer) pairs; scale 1 is the final output.
  Model(ModelSpec spec, LayerGraph graph, std::vector<std::pair<int, int>> predictions);

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<Layer>& layers() const noexcept { return graph_.layers(); }
  const LayerGraph& graph() const noexcept { return graph_; }
  const std::vector<std::pair<int, int>>& prediction_layers() const noexcept { return predictions_; }
  int find_layer(std::string_view name) const;

  std::vector<Named<T>>& parameters() noexcept { return params_; }
  const std::vector<Named<T>>& parameters() const noexcept { return params_; }
  const Tensor<T>& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  // He-uniform weights (LeCun for prediction heads), zero biases.
  void initialize(std::uint64_t seed);
  void fill_parameters(T value);

  ModelOutput<T> forward(const Tensor<T>& input, const ForwardOptions& options = {}) const;
  // Output of every layer, in layer order.
  std::vector<Tensor<T>> forward_all(const Tensor<T>& input, const ForwardOptions& options = {}) const;

  template <typename U>
  Model<U> cast() const {
    Model<U> out(spec_, graph_, predictions_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto dst = out.parameters()[i].tensor.mutable_values();
      const auto src = params_[i].tensor.values();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

 private:
  ModelSpec spec_;
  LayerGraph graph_;
  std::vector<std::pair<int, int>> predictions_;
  std::vector<Named<T>> params_;
  std::vector<int> param_index_;  // per layer: index of its weight in params_, or -1
};

// Encoder: two single convs (the second strided) then four blocks of
// {stride-2 conv, two convs, additive skip from the strided conv}. Decoder: one
// up-scale block, three up-prediction blocks (1/8, 1/4, 1/2) and a final
// up-scale + 3x3 prediction conv. Input dims must be divisible by 32.
template <typename T>
Model<T> build_uresnet(const ModelSpec& spec);

// Two rect-bank preprocessing blocks, a /4 down-scaling block (two strided convs
// + two convs), two dilation blocks with 1x1 convs and additive skips, and a
// decoder predicting at 1/2 and full resolution.
template <typename T>
Model<T> build_rectnet(const ModelSpec& spec);

template <typename T>
Model<T> build_model(const ModelSpec& spec);

struct ReceptiveField {
  std::string layer;
  double rf_h = 1.0;
  double rf_w = 1.0;
  double jump_h = 1.0;
  double jump_w = 1.0;
};

// Per layer: RF_l = RF_{l-1} + (k - 1) * dilation * jump_{l-1}, jump_l = jump_{l-1} * stride,
// per axis; merges take the maximum. Transposed convs and upsampling report an
// upper bound.
std::vector<ReceptiveField> receptive_field(const LayerGraph& graph);

}  // namespace panodepth
