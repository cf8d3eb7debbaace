#include <doctest.h>

#include <cstring>

#include "panodepth/checkpoint.hpp"
#include "panodepth/models.hpp"
#include "panodepth/rng.hpp"

using namespace panodepth;

namespace {

template <typename T>
Tensor<T> random_input(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(static_cast<std::size_t>(n) * 3 * h * w);
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return Tensor<T>::from_values({n, 3, h, w}, std::move(v));
}

// Parameter count of one conv with bias.
std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw) {
  return cin * cout * kh * kw + cout;
}

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("uresnet shapes: full resolution plus 1/8, 1/4, 1/2 predictions") {
  auto model = build_uresnet<float>(ModelSpec::defaults(Architecture::uresnet, 64, 128, 8));
  model.initialize(1);
  const auto out = model.forward(random_input<float>(1, 64, 128, 2));
  CHECK(out.depth.shape() == Shape{1, 1, 64, 128});
  REQUIRE(out.predictions.size() == 4);
  const int scales[4] = {1, 2, 4, 8};
  for (int i = 0; i < 4; ++i) {
    CHECK(out.predictions[i].first == scales[i]);
    CHECK(out.predictions[i].second.shape() == Shape{1, 1, 64 / scales[i], 128 / scales[i]});
    CHECK(all_finite(out.predictions[i].second.values()));
  }
}

TEST_CASE("rectnet shapes: full resolution plus a half-resolution prediction") {
  auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 128, 256, 8));
  model.initialize(1);
  const auto out = model.forward(random_input<float>(1, 128, 256, 2));
  CHECK(out.depth.shape() == Shape{1, 1, 128, 256});
  REQUIRE(out.predictions.size() == 2);
  CHECK(out.predictions[1].first == 2);
  CHECK(out.predictions[1].second.shape() == Shape{1, 1, 64, 128});
}

TEST_CASE("zero-initialised models predict their head biases everywhere") {
  for (auto arch : {Architecture::uresnet, Architecture::rectnet}) {
    auto model = build_model<float>(ModelSpec::defaults(arch, 32, 64, 4));
    model.fill_parameters(0.0f);
    for (auto& p : model.parameters()) {
      if (p.name.ends_with(".bias") && p.name.starts_with("pred")) {
        for (auto& v : p.tensor.mutable_values()) v = 2.5f;
      }
    }
    const auto out = model.forward(random_input<float>(1, 32, 64, 3));
    for (const auto& [s, pred] : out.predictions) {
      for (float v : pred.values()) REQUIRE(v == 2.5f);
    }
  }
}

TEST_CASE("parameter counts match per-layer arithmetic") {
  const std::size_t w = 8;
  // uresnet: two input convs, four residual down blocks, up block, three up-prediction blocks, final block.
  std::size_t u = conv_params(3, w, 5, 5) + conv_params(w, 2 * w, 3, 3);
  std::size_t cin = 2 * w;
  for (std::size_t c : {4 * w, 8 * w, 8 * w, 16 * w}) {
    u += conv_params(cin, c, 3, 3) + 2 * conv_params(c, c, 3, 3);
    cin = c;
  }
  u += conv_params(16 * w, 8 * w, 4, 4) + conv_params(8 * w, 8 * w, 3, 3);
  u += conv_params(8 * w, 4 * w, 4, 4) + conv_params(4 * w, 4 * w, 3, 3) + conv_params(4 * w, 1, 3, 3);
  u += conv_params(4 * w, 2 * w, 4, 4) + conv_params(2 * w, 2 * w, 3, 3) + conv_params(2 * w + 1, 1, 3, 3);
  u += conv_params(2 * w, w, 4, 4) + conv_params(w, w, 3, 3) + conv_params(w + 1, 1, 3, 3);
  u += conv_params(w, w, 4, 4) + conv_params(w + 1, 1, 3, 3);
  CHECK(u == 821991);
  CHECK(build_uresnet<float>(ModelSpec::defaults(Architecture::uresnet, 64, 128, 8)).parameter_count() == u);

  // rectnet: rect banks, /4 down block, two dilation blocks, two decoder stages.
  std::size_t r = conv_params(3, w / 2, 3, 3) + conv_params(3, w / 2, 1, 9) + conv_params(w, w / 2, 5, 5) +
                  conv_params(w, w / 2, 3, 9);
  r += conv_params(w, 2 * w, 3, 3) + conv_params(2 * w, 4 * w, 3, 3) + 2 * conv_params(4 * w, 4 * w, 3, 3);
  r += 2 * (2 * conv_params(4 * w, 4 * w, 3, 3) + conv_params(4 * w, 4 * w, 1, 1));
  r += conv_params(4 * w, 2 * w, 4, 4) + conv_params(2 * w, 2 * w, 3, 3) + conv_params(2 * w, 1, 3, 3);
  r += conv_params(2 * w, w, 4, 4) + conv_params(w, w, 3, 3) + conv_params(w + 1, 1, 3, 3);
  CHECK(r == 78699);
  CHECK(build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 64, 128, 8)).parameter_count() == r);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(build_uresnet<float>(ModelSpec::defaults(Architecture::uresnet, 8, 16, 2)), ConfigError);
  CHECK_THROWS_AS(build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 6, 12, 2)), ConfigError);
  auto spec = ModelSpec::defaults(Architecture::rectnet, 64, 128);
  spec.rect_bank[1].rect = {3, 10};  // area 30 vs 25: 20% exactly is allowed
  CHECK_NOTHROW(spec.validate());
  spec.rect_bank[1].rect = {2, 16};  // 32 vs 25
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = ModelSpec::defaults(Architecture::rectnet, 64, 128);
  spec.dropout = 1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.dropout = 0.0;
  spec.scales = {1, 2, 4};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = ModelSpec::defaults(Architecture::rectnet, 64, 128);
  spec.base_width = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("rect bank areas stay within 20% of their square filters") {
  const auto spec = ModelSpec::defaults(Architecture::rectnet, 64, 128);
  CHECK(std::abs(spec.rect_bank[0].rect.area() - spec.rect_bank[0].square.area()) == 0);
  CHECK(std::abs(spec.rect_bank[1].rect.area() - spec.rect_bank[1].square.area()) / 25.0 == doctest::Approx(0.08));
}

TEST_CASE("spec text round trip") {
  auto spec = ModelSpec::defaults(Architecture::uresnet, 32, 64, 4);
  spec.dropout = 0.125;
  spec.padding = PaddingMode::zero;
  CHECK(ModelSpec::from_text(spec.to_text()) == spec);
  CHECK_THROWS_AS(ModelSpec::from_text("architecture rectnet\nbogus 1\n"), ConfigError);
  CHECK_THROWS_AS(ModelSpec::from_text("input 3 64 128\n"), ConfigError);
}

TEST_CASE("receptive field recurrence on hand-checked graphs") {
  SUBCASE("three 3x3 convs with dilations 1, 2, 4") {
    LayerGraph g;
    int x = g.input(1);
    for (int d : {1, 2, 4}) x = g.conv("c" + std::to_string(d), x, 1, {3, 3}, 1, d);
    const auto rf = receptive_field(g);
    CHECK(rf.back().rf_h == 15);
    CHECK(rf.back().rf_w == 15);
  }
  SUBCASE("single 1x9 conv") {
    LayerGraph g;
    g.conv("c", g.input(1), 1, {1, 9});
    const auto rf = receptive_field(g);
    CHECK(rf.back().rf_h == 1);
    CHECK(rf.back().rf_w == 9);
  }
  SUBCASE("stride-2 3x3 then 3x3") {
    LayerGraph g;
    const int a = g.conv("a", g.input(1), 1, {3, 3}, 2);
    g.conv("b", a, 1, {3, 3});
    const auto rf = receptive_field(g);
    CHECK(rf.back().rf_h == 7);
    CHECK(rf.back().jump_w == 2);
  }
}

TEST_CASE("rectnet receptive field at the last dilation layer covers half the width") {
  const auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 128, 256, 8));
  const auto rf = receptive_field(model.graph());
  const auto& last = rf[static_cast<std::size_t>(model.find_layer("dil1.1"))];
  CHECK(last.rf_w == 279);
  CHECK(last.rf_h == 269);
  CHECK(last.rf_w >= 128);
}

TEST_CASE("rectnet commutes with 4k-column shifts bit-exactly") {
  auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 32, 64, 4));
  model.initialize(9);
  const auto x = random_input<float>(1, 32, 64, 10);
  const auto base = model.forward(x);
  for (int k = 1; k < 16; k += 5) {
    const auto shifted = model.forward(translate(x, 0, 4 * k));
    CHECK(same_values(shifted.depth, translate(base.depth, 0, 4 * k)));
    CHECK(same_values(shifted.predictions[1].second, translate(base.predictions[1].second, 0, 2 * k)));
  }
}

TEST_CASE("cast to double keeps parameter values") {
  auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 16, 32, 2));
  model.initialize(4);
  const auto d = model.cast<double>();
  REQUIRE(d.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < d.parameters().size(); ++i) {
    CHECK(d.parameters()[i].tensor.values()[0] == model.parameters()[i].tensor.values()[0]);
  }
}

TEST_CASE("checkpoints round trip bit-exactly") {
  auto model = build_uresnet<float>(ModelSpec::defaults(Architecture::uresnet, 32, 64, 2));
  model.initialize(5);
  const std::string bytes = encode_checkpoint(model, 1234);
  CHECK(bytes.substr(0, 4) == "ODCK");
  CHECK(bytes.substr(4, 4) == std::string("\x01\0\0\0", 4));
  const auto loaded = decode_checkpoint(bytes);
  CHECK(loaded.step == 1234);
  CHECK(loaded.model.spec() == model.spec());
  CHECK(encode_checkpoint(loaded.model, loaded.step) == bytes);
  const auto x = random_input<float>(1, 32, 64, 6);
  CHECK(same_values(loaded.model.forward(x).depth, model.forward(x).depth));
}

TEST_CASE("checkpoint decoding errors") {
  auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 16, 32, 2));
  model.initialize(5);
  const std::string bytes = encode_checkpoint(model, 1);
  SUBCASE("truncated") {
    try {
      decode_checkpoint(bytes.substr(0, bytes.size() - 10));
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() > 0);
      CHECK(e.offset() <= bytes.size() - 10);
    }
  }
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b), ParseError);
  }
  SUBCASE("version mismatch") {
    std::string b = bytes;
    b[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(b), ParseError);
  }
  SUBCASE("tensor dims disagree with the model spec") {
    std::string b = bytes;
    const std::string name = "input0.square.weight";
    const auto at = b.find(name) + name.size() + 4;  // past the rank field
    b[at] = static_cast<char>(b[at] + 1);
    CHECK_THROWS_AS(decode_checkpoint(b), ParseError);
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ParseError); }
}
