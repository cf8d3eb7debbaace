#include "panodepth/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "panodepth/rng.hpp"

namespace panodepth {

std::string to_string(Architecture arch) { return arch == Architecture::uresnet ? "uresnet" : "rectnet"; }

Architecture parse_architecture(std::string_view name) {
  if (name == "uresnet") return Architecture::uresnet;
  if (name == "rectnet") return Architecture::rectnet;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected uresnet or rectnet)");
}

std::vector<int> architecture_scales(Architecture arch) {
  return arch == Architecture::uresnet ? std::vector<int>{1, 2, 4, 8} : std::vector<int>{1, 2};
}

int architecture_divisor(Architecture arch) { return arch == Architecture::uresnet ? 32 : 4; }

ModelSpec ModelSpec::defaults(Architecture arch, int height, int width, int base_width) {
  ModelSpec spec;
  spec.architecture = arch;
  spec.height = height;
  spec.width = width;
  spec.base_width = base_width;
  spec.scales = architecture_scales(arch);
  return spec;
}

void ModelSpec::validate() const {
  if (in_channels < 1) throw ConfigError("input channels must be >= 1");
  if (base_width < 2) throw ConfigError("base width must be >= 2");
  const int divisor = architecture_divisor(architecture);
  if (height < 1 || width < 1 || height % divisor != 0 || width % divisor != 0) {
    throw ConfigError(to_string(architecture) + " needs input dims divisible by " + std::to_string(divisor) +
                      ", got " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (scales != architecture_scales(architecture)) {
    throw ConfigError("prediction scales do not match the " + to_string(architecture) + " structure");
  }
  for (int s : scales) {
    if (height % s != 0 || width % s != 0) throw ConfigError("scale " + std::to_string(s) + " does not divide input dims");
  }
  if (architecture == Architecture::rectnet) {
    if (dilations.size() != 4) throw ConfigError("rectnet needs exactly 4 dilations (two per dilation block)");
    if (rect_bank.size() != 2) throw ConfigError("rectnet needs exactly 2 rect bank entries");
  }
  for (int d : dilations) {
    if (d < 1) throw ConfigError("dilations must be >= 1");
  }
  for (const auto& e : rect_bank) {
    if (e.square.h < 1 || e.square.w < 1 || e.rect.h < 1 || e.rect.w < 1) throw ConfigError("filter dims must be >= 1");
    const double rel = std::abs(e.rect.area() - e.square.area()) / static_cast<double>(e.square.area());
    if (rel > 0.2) {
      throw ConfigError("rect filter " + std::to_string(e.rect.h) + "x" + std::to_string(e.rect.w) +
                        " area differs from its square filter by more than 20%");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(max_depth > 0.0)) throw ConfigError("max depth must be > 0");
}

namespace {

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

std::vector<std::string> words_of(std::string_view line) {
  std::vector<std::string> words;
  std::istringstream in{std::string(line)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

int to_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("invalid integer '" + s + "'");
  return v;
}

double to_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("invalid number '" + s + "'");
  return v;
}

FilterSize to_filter(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("invalid filter size '" + s + "'");
  return {to_int(s.substr(0, x)), to_int(s.substr(x + 1))};
}

std::string fmt(const FilterSize& f) { return std::to_string(f.h) + "x" + std::to_string(f.w); }

}  // namespace

std::string ModelSpec::to_text() const {
  std::ostringstream out;
  out << "architecture " << to_string(architecture) << '\n';
  out << "input " << in_channels << ' ' << height << ' ' << width << '\n';
  out << "width " << base_width << '\n';
  out << "dilations";
  for (int d : dilations) out << ' ' << d;
  out << "\nrect_bank";
  for (const auto& e : rect_bank) out << ' ' << fmt(e.square) << '/' << fmt(e.rect);
  out << "\nscales";
  for (int s : scales) out << ' ' << s;
  out << "\ndropout " << fmt(dropout) << '\n';
  out << "padding " << (padding == PaddingMode::sphere ? "sphere" : "zero") << '\n';
  out << "max_depth " << fmt(max_depth) << '\n';
  return out.str();
}

ModelSpec ModelSpec::from_text(std::string_view text) {
  ModelSpec spec;
  spec.dilations.clear();
  spec.rect_bank.clear();
  bool have_arch = false;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto w = words_of(line);
    if (w.empty()) continue;
    const std::string& key = w[0];
    auto need = [&](std::size_t n) {
      if (w.size() != n + 1) throw ConfigError("spec key '" + key + "' expects " + std::to_string(n) + " value(s)");
    };
    if (key == "architecture") {
      need(1);
      spec.architecture = parse_architecture(w[1]);
      have_arch = true;
    } else if (key == "input") {
      need(3);
      spec.in_channels = to_int(w[1]);
      spec.height = to_int(w[2]);
      spec.width = to_int(w[3]);
    } else if (key == "width") {
      need(1);
      spec.base_width = to_int(w[1]);
    } else if (key == "dilations") {
      for (std::size_t i = 1; i < w.size(); ++i) spec.dilations.push_back(to_int(w[i]));
    } else if (key == "rect_bank") {
      for (std::size_t i = 1; i < w.size(); ++i) {
        const auto slash = w[i].find('/');
        if (slash == std::string::npos) throw ConfigError("invalid rect bank entry '" + w[i] + "'");
        spec.rect_bank.push_back({to_filter(w[i].substr(0, slash)), to_filter(w[i].substr(slash + 1))});
      }
    } else if (key == "scales") {
      for (std::size_t i = 1; i < w.size(); ++i) spec.scales.push_back(to_int(w[i]));
    } else if (key == "dropout") {
      need(1);
      spec.dropout = to_double(w[1]);
    } else if (key == "padding") {
      need(1);
      if (w[1] == "sphere") {
        spec.padding = PaddingMode::sphere;
      } else if (w[1] == "zero") {
        spec.padding = PaddingMode::zero;
      } else {
        throw ConfigError("unknown padding '" + w[1] + "'");
      }
    } else if (key == "max_depth") {
      need(1);
      spec.max_depth = to_double(w[1]);
    } else {
      throw ConfigError("unknown spec key '" + key + "'");
    }
  }
  if (!have_arch) throw ConfigError("model spec is missing 'architecture'");
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------

int LayerGraph::push(Layer layer) {
  for (int in : layer.inputs) {
    if (in < 0 || in >= static_cast<int>(layers_.size())) throw ConfigError("layer '" + layer.name + "' reads an unknown layer");
  }
  layers_.push_back(std::move(layer));
  return static_cast<int>(layers_.size()) - 1;
}

int LayerGraph::input(int channels) {
  Layer l;
  l.name = "input";
  l.kind = LayerKind::input;
  l.in_channels = l.out_channels = channels;
  return push(std::move(l));
}

int LayerGraph::conv(const std::string& name, int from, int out_channels, FilterSize kernel, int stride,
                     int dilation, PaddingMode padding) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::conv;
  l.inputs = {from};
  l.conv = {kernel.h, kernel.w, stride, dilation, padding};
  l.conv.validate();
  l.in_channels = channels(from);
  l.out_channels = out_channels;
  return push(std::move(l));
}

int LayerGraph::conv_transpose(const std::string& name, int from, int out_channels, FilterSize kernel, int stride,
                               PaddingMode padding) {
  Layer l;
  l.name = name;
  l.kind = LayerKind::conv_transpose;
  l.inputs = {from};
  l.conv = {kernel.h, kernel.w, stride, 1, padding};
  l.conv.validate();
  l.in_channels = channels(from);
  l.out_channels = out_channels;
  return push(std::move(l));
}

int LayerGraph::elu(int from) {
  Layer l;
  l.name = layers_.at(from).name + ".elu";
  l.kind = LayerKind::elu;
  l.inputs = {from};
  l.in_channels = l.out_channels = channels(from);
  return push(std::move(l));
}

int LayerGraph::dropout(int from) {
  Layer l;
  l.name = layers_.at(from).name + ".dropout";
  l.kind = LayerKind::dropout;
  l.inputs = {from};
  l.in_channels = l.out_channels = channels(from);
  l.dropout_id = next_dropout_++;
  return push(std::move(l));
}

int LayerGraph::concat(const std::vector<int>& from) {
  Layer l;
  l.kind = LayerKind::concat;
  l.inputs = from;
  for (int f : from) {
    l.out_channels += channels(f);
    l.name += (l.name.empty() ? "concat(" : ",") + layers_.at(f).name;
  }
  l.name += ")";
  l.in_channels = l.out_channels;
  return push(std::move(l));
}

int LayerGraph::add(int a, int b) {
  if (channels(a) != channels(b)) throw ConfigError("add of layers with different channel counts");
  Layer l;
  l.name = "add(" + layers_.at(a).name + "," + layers_.at(b).name + ")";
  l.kind = LayerKind::add;
  l.inputs = {a, b};
  l.in_channels = l.out_channels = channels(a);
  return push(std::move(l));
}

int LayerGraph::upsample(int from, int factor) {
  Layer l;
  l.name = layers_.at(from).name + ".up" + std::to_string(factor);
  l.kind = LayerKind::upsample;
  l.inputs = {from};
  l.factor = factor;
  l.in_channels = l.out_channels = channels(from);
  return push(std::move(l));
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelSpec spec, LayerGraph graph, std::vector<std::pair<int, int>> predictions)
    : spec_(std::move(spec)), graph_(std::move(graph)), predictions_(std::move(predictions)) {
  std::sort(predictions_.begin(), predictions_.end());
  if (predictions_.empty() || predictions_.front().first != 1) {
    throw ConfigError("a model needs a full-resolution (scale 1) prediction");
  }
  param_index_.assign(graph_.layers().size(), -1);
  for (std::size_t i = 0; i < graph_.layers().size(); ++i) {
    const Layer& l = graph_.layers()[i];
    if (l.kind != LayerKind::conv && l.kind != LayerKind::conv_transpose) continue;
    const Shape ws = l.kind == LayerKind::conv ? Shape{l.out_channels, l.in_channels, l.conv.kernel_h, l.conv.kernel_w}
                                               : Shape{l.in_channels, l.out_channels, l.conv.kernel_h, l.conv.kernel_w};
    param_index_[i] = static_cast<int>(params_.size());
    params_.push_back({l.name + ".weight", Tensor<T>::zeros(ws, true)});
    params_.push_back({l.name + ".bias", Tensor<T>::zeros({1, l.out_channels, 1, 1}, true)});
  }
}

template <typename T>
int Model<T>::find_layer(std::string_view name) const {
  for (std::size_t i = 0; i < layers().size(); ++i) {
    if (layers()[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError("no layer named '" + std::string(name) + "'");
}

template <typename T>
const Tensor<T>& Model<T>::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers().size(); ++i) {
    if (param_index_[i] < 0) continue;
    const Layer& l = layers()[i];
    const bool head = l.name.rfind("pred", 0) == 0;
    double fan_in = static_cast<double>(l.in_channels) * l.conv.kernel_h * l.conv.kernel_w;
    if (l.kind == LayerKind::conv_transpose) fan_in /= static_cast<double>(l.conv.stride * l.conv.stride);
    const double bound = std::sqrt((head ? 3.0 : 6.0) / fan_in);
    auto weights = params_[param_index_[i]].tensor.mutable_values();
    for (std::size_t k = 0; k < weights.size(); ++k) {
      const double u = to_unit(hash_counters(seed, 0x57454947u, i, k));
      weights[k] = static_cast<T>((2.0 * u - 1.0) * bound);
    }
    auto bias = params_[param_index_[i] + 1].tensor.mutable_values();
    std::fill(bias.begin(), bias.end(), T(0));
  }
}

template <typename T>
void Model<T>::fill_parameters(T value) {
  for (auto& p : params_) {
    auto v = p.tensor.mutable_values();
    std::fill(v.begin(), v.end(), value);
  }
}

template <typename T>
std::vector<Tensor<T>> Model<T>::forward_all(const Tensor<T>& input, const ForwardOptions& options) const {
  const auto& ls = layers();
  if (ls.empty() || ls[0].kind != LayerKind::input) throw ConfigError("model graph has no input layer");
  if (input.shape().c != ls[0].out_channels) {
    throw ShapeError("model expects " + std::to_string(ls[0].out_channels) + " input channels, got " + input.shape().str());
  }
  std::vector<Tensor<T>> out(ls.size());
  out[0] = input;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const Layer& l = ls[i];
    switch (l.kind) {
      case LayerKind::input:
        throw ConfigError("model graph has more than one input layer");
      case LayerKind::conv:
        out[i] = conv2d(out[l.inputs[0]], params_[param_index_[i]].tensor, params_[param_index_[i] + 1].tensor, l.conv);
        break;
      case LayerKind::conv_transpose:
        out[i] = conv_transpose2d(out[l.inputs[0]], params_[param_index_[i]].tensor,
                                  params_[param_index_[i] + 1].tensor, l.conv);
        break;
      case LayerKind::elu:
        out[i] = elu(out[l.inputs[0]]);
        break;
      case LayerKind::dropout:
        out[i] = dropout(out[l.inputs[0]], spec_.dropout,
                         DropoutKey{options.seed, static_cast<std::uint64_t>(l.dropout_id), options.step}, options.train);
        break;
      case LayerKind::concat: {
        std::vector<Tensor<T>> parts;
        for (int in : l.inputs) parts.push_back(out[in]);
        out[i] = concat(parts);
        break;
      }
      case LayerKind::add:
        out[i] = add(out[l.inputs[0]], out[l.inputs[1]]);
        break;
      case LayerKind::upsample:
        out[i] = upsample_nearest(out[l.inputs[0]], l.factor);
        break;
    }
  }
  return out;
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& input, const ForwardOptions& options) const {
  auto all = forward_all(input, options);
  ModelOutput<T> result;
  for (const auto& [scale, layer] : predictions_) result.predictions.emplace_back(scale, all[layer]);
  result.depth = result.predictions.front().second;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

struct Builder {
  LayerGraph g;
  PaddingMode pad;

  int conv_elu(const std::string& name, int from, int cout, FilterSize k, int stride = 1, int dilation = 1) {
    return g.elu(g.conv(name, from, cout, k, stride, dilation, pad));
  }
  int deconv_elu(const std::string& name, int from, int cout) {
    return g.elu(g.conv_transpose(name, from, cout, {4, 4}, 2, pad));
  }
  int prediction(const std::string& name, int from) { return g.conv(name, g.dropout(from), 1, {3, 3}, 1, 1, pad); }
};

}  // namespace

template <typename T>
Model<T> build_uresnet(const ModelSpec& spec) {
  spec.validate();
  if (spec.architecture != Architecture::uresnet) throw ConfigError("spec is not a uresnet spec");
  const int w = spec.base_width;
  Builder b{{}, spec.padding};
  int x = b.g.input(spec.in_channels);
  x = b.conv_elu("input0", x, w, {5, 5});
  x = b.conv_elu("input1", x, 2 * w, {3, 3}, 2);
  const int widths[4] = {4 * w, 8 * w, 8 * w, 16 * w};
  for (int k = 0; k < 4; ++k) {
    const std::string name = "down" + std::to_string(k);
    const int strided = b.conv_elu(name + ".0", x, widths[k], {3, 3}, 2);
    const int c1 = b.conv_elu(name + ".1", strided, widths[k], {3, 3});
    const int c2 = b.conv_elu(name + ".2", c1, widths[k], {3, 3});
    x = b.g.add(strided, c2);
  }
  x = b.deconv_elu("up0.deconv", x, 8 * w);
  x = b.conv_elu("up0.conv", x, 8 * w, {3, 3});

  std::vector<std::pair<int, int>> predictions;
  const int up_widths[3] = {4 * w, 2 * w, w};
  const int up_scales[3] = {8, 4, 2};
  int previous = -1;
  for (int k = 0; k < 3; ++k) {
    const std::string name = "up" + std::to_string(k + 1);
    x = b.deconv_elu(name + ".deconv", x, up_widths[k]);
    x = b.conv_elu(name + ".conv", x, up_widths[k], {3, 3});
    const int head = previous >= 0 ? b.g.concat({x, b.g.upsample(previous, 2)}) : x;
    previous = b.prediction("pred" + std::to_string(k + 1), head);
    predictions.emplace_back(up_scales[k], previous);
  }
  int f = b.deconv_elu("final.deconv", x, w);
  f = b.g.concat({f, b.g.upsample(previous, 2)});
  predictions.emplace_back(1, b.prediction("prediction", f));
  return Model<T>(spec, std::move(b.g), std::move(predictions));
}

template <typename T>
Model<T> build_rectnet(const ModelSpec& spec) {
  spec.validate();
  if (spec.architecture != Architecture::rectnet) throw ConfigError("spec is not a rectnet spec");
  const int w = spec.base_width;
  Builder b{{}, spec.padding};
  int x = b.g.input(spec.in_channels);
  for (int k = 0; k < 2; ++k) {
    const std::string name = "input" + std::to_string(k);
    const auto& bank = spec.rect_bank[k];
    const int square = b.conv_elu(name + ".square", x, w / 2, bank.square);
    const int rect = b.conv_elu(name + ".rect", x, w - w / 2, bank.rect);
    x = b.g.concat({square, rect});
  }
  x = b.conv_elu("down.0", x, 2 * w, {3, 3}, 2);
  x = b.conv_elu("down.1", x, 4 * w, {3, 3}, 2);
  x = b.conv_elu("down.2", x, 4 * w, {3, 3});
  x = b.conv_elu("down.3", x, 4 * w, {3, 3});
  for (int k = 0; k < 2; ++k) {
    const std::string name = "dil" + std::to_string(k);
    int y = b.conv_elu(name + ".0", x, 4 * w, {3, 3}, 1, spec.dilations[2 * k]);
    y = b.conv_elu(name + ".1", y, 4 * w, {3, 3}, 1, spec.dilations[2 * k + 1]);
    y = b.conv_elu(name + ".2", y, 4 * w, {1, 1});
    x = b.g.add(x, y);
  }
  std::vector<std::pair<int, int>> predictions;
  int f = b.deconv_elu("up0.deconv", x, 2 * w);
  f = b.conv_elu("up0.conv", f, 2 * w, {3, 3});
  const int half = b.prediction("pred0", f);
  predictions.emplace_back(2, half);
  f = b.deconv_elu("up1.deconv", f, w);
  f = b.conv_elu("up1.conv", f, w, {3, 3});
  f = b.g.concat({f, b.g.upsample(half, 2)});
  predictions.emplace_back(1, b.prediction("prediction", f));
  return Model<T>(spec, std::move(b.g), std::move(predictions));
}

template <typename T>
Model<T> build_model(const ModelSpec& spec) {
  return spec.architecture == Architecture::uresnet ? build_uresnet<T>(spec) : build_rectnet<T>(spec);
}

std::vector<ReceptiveField> receptive_field(const LayerGraph& graph) {
  std::vector<ReceptiveField> rf;
  for (const Layer& l : graph.layers()) {
    ReceptiveField r{l.name};
    if (l.kind == LayerKind::input) {
      rf.push_back(r);
      continue;
    }
    const ReceptiveField& in = rf[l.inputs[0]];
    r.rf_h = in.rf_h;
    r.rf_w = in.rf_w;
    r.jump_h = in.jump_h;
    r.jump_w = in.jump_w;
    switch (l.kind) {
      case LayerKind::conv:
        r.rf_h += (l.conv.kernel_h - 1) * l.conv.dilation * in.jump_h;
        r.rf_w += (l.conv.kernel_w - 1) * l.conv.dilation * in.jump_w;
        r.jump_h *= l.conv.stride;
        r.jump_w *= l.conv.stride;
        break;
      case LayerKind::conv_transpose: {
        const int s = l.conv.stride;
        r.rf_h += ((l.conv.kernel_h + s - 1) / s - 1) * in.jump_h;
        r.rf_w += ((l.conv.kernel_w + s - 1) / s - 1) * in.jump_w;
        r.jump_h /= s;
        r.jump_w /= s;
        break;
      }
      case LayerKind::upsample:
        r.jump_h /= l.factor;
        r.jump_w /= l.factor;
        break;
      case LayerKind::concat:
      case LayerKind::add:
        for (int i : l.inputs) {
          r.rf_h = std::max(r.rf_h, rf[i].rf_h);
          r.rf_w = std::max(r.rf_w, rf[i].rf_w);
          r.jump_h = std::max(r.jump_h, rf[i].jump_h);
          r.jump_w = std::max(r.jump_w, rf[i].jump_w);
        }
        break;
      default:
        break;
    }
    rf.push_back(r);
  }
  return rf;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_uresnet<float>(const ModelSpec&);
template Model<double> build_uresnet<double>(const ModelSpec&);
template Model<float> build_rectnet<float>(const ModelSpec&);
template Model<double> build_rectnet<double>(const ModelSpec&);
template Model<float> build_model<float>(const ModelSpec&);
template Model<double> build_model<double>(const ModelSpec&);

}  // namespace panodepth
