#include <doctest.h>

#include <filesystem>

#include "panodepth/checkpoint.hpp"
#include "panodepth/renderer.hpp"
#include "panodepth/rng.hpp"
#include "panodepth/training.hpp"

using namespace panodepth;

namespace {

Tensor<double> grid(int h, int w, std::vector<double> v, bool grad = false) {
  return Tensor<double>::from_values({1, 1, h, w}, std::move(v), grad);
}

TargetTensor<double> target(int h, int w, std::vector<double> depth, std::vector<double> mask) {
  return {1, grid(h, w, std::move(depth)), std::move(mask)};
}

LossWeights single(double alpha, double beta) { return {{alpha}, {beta}}; }

std::vector<Sample> tiny_dataset(int scenes, int width) {
  std::vector<Sample> samples;
  for (const auto& named : generate_scenes(scenes, 11)) {
    const auto base = render_panorama(named.scene, SphereDims(width, width / 2));
    for (int k = 0; k < 4; ++k) {
      const auto t = yaw_rotate(base, k);
      samples.push_back({named.id + "_k" + std::to_string(k), named.id, t.color, t.depth, t.mask});
    }
  }
  return samples;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.spec = ModelSpec::defaults(Architecture::rectnet, 16, 32, 2);
  c.spec.dropout = 0.2;
  c.batch = 2;
  c.iterations = 6;
  c.learning_rate = 1e-3;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("downscale_gt averages valid pixels per block") {
  DepthMap depth(2, 2, 1);
  ValidityMask mask(2, 2, 1);
  depth.at(0, 0) = 2.0f;
  depth.at(0, 1) = 4.0f;
  depth.at(1, 0) = depth.at(1, 1) = 20.0f;
  mask.at(0, 0) = mask.at(0, 1) = 1;
  const auto out = downscale_gt(depth, mask, 2, 20.0f);
  CHECK(out.depth.at(0, 0) == 3.0f);
  CHECK(out.mask.at(0, 0) == 1);

  const auto same = downscale_gt(depth, mask, 1, 20.0f);
  CHECK(same.depth == depth);
  CHECK(same.mask == mask);

  const auto empty = downscale_gt(depth, ValidityMask(2, 2, 1), 2, 20.0f);
  CHECK(empty.depth.at(0, 0) == 20.0f);
  CHECK(empty.mask.at(0, 0) == 0);
  CHECK_THROWS_AS(downscale_gt(depth, mask, 3, 20.0f), ConfigError);
}

TEST_CASE("depth term is the masked mean squared error") {
  const auto gt = target(2, 2, {1, 2, 3, 4}, {1, 1, 1, 1});
  const auto pred = grid(2, 2, {1, 2, 3, 5});
  const auto loss = multiscale_loss<double>({{1, pred}}, {gt}, single(1.0, 0.0));
  CHECK(std::abs(loss.total.item() - 0.25) < 1e-7);
  CHECK(loss.depth_term == doctest::Approx(0.25));

  const auto masked = target(2, 2, {1, 2, 3, 4}, {1, 1, 1, 0});
  CHECK(multiscale_loss<double>({{1, pred}}, {masked}, single(1.0, 0.0)).total.item() == 0.0);
}

TEST_CASE("smoothness term: forward differences with longitude wrap, both pixels valid") {
  const auto pred = grid(1, 3, {1, 2, 4});
  const auto all = target(1, 3, {1, 2, 4}, {1, 1, 1});
  // (2-1)^2 + (4-2)^2 + (1-4)^2 over three contributing pixels.
  const auto loss = multiscale_loss<double>({{1, pred}}, {all}, single(1.0, 1.0));
  CHECK(loss.smooth_term == doctest::Approx(14.0 / 3.0));
  CHECK(loss.total.item() == doctest::Approx(14.0 / 3.0));

  // Only the pair (0, 1) has both pixels valid.
  const auto partial = target(1, 3, {1, 2, 4}, {1, 1, 0});
  CHECK(multiscale_loss<double>({{1, pred}}, {partial}, single(1.0, 1.0)).smooth_term == doctest::Approx(1.0));

  const auto flat = grid(2, 3, {5, 5, 5, 5, 5, 5});
  const auto any = target(2, 3, {1, 2, 3, 4, 5, 6}, {1, 1, 1, 1, 1, 1});
  CHECK(multiscale_loss<double>({{1, flat}}, {any}, single(1.0, 1.0)).smooth_term == 0.0);
}

TEST_CASE("all-zero masks give a zero loss, a warning and exactly zero gradients") {
  auto model = build_rectnet<double>(ModelSpec::defaults(Architecture::rectnet, 8, 16, 2));
  model.initialize(2);
  Rng rng(1);
  std::vector<double> x(3 * 8 * 16);
  for (auto& v : x) v = rng.uniform();
  const auto out = model.forward(Tensor<double>::from_values({1, 3, 8, 16}, x));
  std::vector<TargetTensor<double>> targets;
  for (int s : {1, 2}) {
    const int n = (8 / s) * (16 / s);
    targets.push_back({s, Tensor<double>::full({1, 1, 8 / s, 16 / s}, 2.0), std::vector<double>(n, 0.0)});
  }
  const auto loss = multiscale_loss(out.predictions, targets, LossWeights::defaults(2));
  CHECK(loss.empty_mask);
  CHECK(loss.total.item() == 0.0);
  backward(loss.total);
  for (const auto& p : model.parameters()) {
    for (double g : p.tensor.grad()) REQUIRE(g == 0.0);
  }
}

TEST_CASE("masked pixels have no influence on any parameter gradient") {
  auto model = build_rectnet<double>(ModelSpec::defaults(Architecture::rectnet, 8, 16, 2));
  model.initialize(3);
  Rng rng(2);
  std::vector<double> x(3 * 8 * 16);
  for (auto& v : x) v = rng.uniform();
  const auto input = Tensor<double>::from_values({1, 3, 8, 16}, x);
  auto make_targets = [&](double masked_value) {
    Rng r(5);
    std::vector<TargetTensor<double>> targets;
    for (int s : {1, 2}) {
      const int n = (8 / s) * (16 / s);
      std::vector<double> depth(n), mask(n);
      for (int i = 0; i < n; ++i) {
        mask[i] = r.uniform() < 0.6 ? 1.0 : 0.0;
        depth[i] = mask[i] ? r.uniform(1, 3) : masked_value;
      }
      targets.push_back({s, Tensor<double>::from_values({1, 1, 8 / s, 16 / s}, depth), mask});
    }
    return targets;
  };
  auto gradients = [&](double masked_value) {
    for (auto& p : model.parameters()) p.tensor.zero_grad();
    const auto loss = multiscale_loss(model.forward(input).predictions, make_targets(masked_value),
                                      LossWeights{{1.0, 0.5}, {0.1, 0.05}});
    backward(loss.total);
    std::vector<double> all;
    for (const auto& p : model.parameters()) all.insert(all.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    return all;
  };
  CHECK(gradients(0.0) == gradients(1e6));

  const auto targets = make_targets(0.0);
  const auto r = grad_check(
      [&] { return multiscale_loss(model.forward(input).predictions, targets, LossWeights{{1.0, 0.5}, {0.1, 0.05}}).total; },
      model.parameters(), {1e-5, 1e-6, 12});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("loss is non-negative and zero only at the ground truth") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> gt(12), mask(12), pred(12);
    for (int i = 0; i < 12; ++i) {
      gt[i] = rng.uniform(1, 5);
      mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
      pred[i] = gt[i] + rng.uniform(-1, 1);
    }
    const auto t = target(3, 4, gt, mask);
    CHECK(multiscale_loss<double>({{1, grid(3, 4, pred)}}, {t}, single(1.0, 0.0)).total.item() >= 0.0);
    CHECK(multiscale_loss<double>({{1, grid(3, 4, gt)}}, {t}, single(1.0, 0.0)).total.item() == 0.0);
  }
}

TEST_CASE("loss weights") {
  const auto w = LossWeights::defaults(4);
  CHECK(w.depth == std::vector<double>{1.0, 0.5, 0.25, 0.125});
  CHECK(w.smooth[1] == doctest::Approx(0.005));
  CHECK_THROWS_AS(LossWeights({{0.0}, {1.0}}).validate(1), ConfigError);
  CHECK_THROWS_AS(LossWeights({{1.0}, {-1.0}}).validate(1), ConfigError);
  CHECK_THROWS_AS(LossWeights({{1.0}, {1.0}}).validate(2), ConfigError);
}

TEST_CASE("split holds out the last tenth of the scenes") {
  std::vector<Sample> samples;
  for (int s = 0; s < 20; ++s)
    for (int k = 0; k < 4; ++k) samples.push_back({"", "scene" + std::to_string(s), {}, {}, {}});
  const auto split = split_by_scene(samples);
  CHECK(split.train.size() == 72);
  CHECK(split.validation.size() == 8);
  CHECK(samples[split.validation.front()].scene_id == "scene18");
  CHECK(split_by_scene(std::vector<Sample>(samples.begin(), samples.begin() + 8)).validation.empty());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto samples = tiny_dataset(2, 32);
  const auto a = train(tiny_config(), samples);
  const auto b = train(tiny_config(), samples);
  CHECK(encode_checkpoint(a.model, a.steps) == encode_checkpoint(b.model, b.steps));
  REQUIRE(a.log.size() == 6);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
  auto other = tiny_config();
  other.seed = 4;
  CHECK(encode_checkpoint(train(other, samples).model, 6) != encode_checkpoint(a.model, 6));
}

TEST_CASE("zero learning rate leaves parameters unchanged and the loss constant") {
  const auto samples = tiny_dataset(1, 32);
  auto config = tiny_config();
  config.learning_rate = 0.0;
  config.spec.dropout = 0.0;
  config.batch = 4;
  const auto result = train(config, samples);
  auto config0 = config;
  config0.iterations = 0;
  CHECK(encode_checkpoint(result.model, 0) == encode_checkpoint(train(config0, samples).model, 0));
  for (const auto& row : result.log) CHECK(row.loss == result.log.front().loss);
}

TEST_CASE("a short run reduces the loss") {
  const auto samples = tiny_dataset(1, 32);
  auto config = tiny_config();
  config.spec.dropout = 0.0;
  config.batch = 4;
  config.iterations = 60;
  config.learning_rate = 3e-3;
  const auto result = train(config, samples);
  CHECK(result.log.back().loss < 0.5 * result.log.front().loss);
}

TEST_CASE("training rejects mismatched dims and bad configs") {
  const auto samples = tiny_dataset(1, 32);
  auto config = tiny_config();
  config.spec = ModelSpec::defaults(Architecture::rectnet, 32, 64, 2);
  CHECK_THROWS_AS(train(config, samples), ShapeError);
  config = tiny_config();
  config.batch = 0;
  CHECK_THROWS_AS(train(config, samples), ConfigError);
}

TEST_CASE("predict: finite, clamped, dims-checked and yaw-consistent") {
  auto model = build_rectnet<float>(ModelSpec::defaults(Architecture::rectnet, 32, 64, 4));
  model.initialize(8);
  Rng rng(4);
  ColorImage color(64, 32, 3);
  for (auto& v : color.data()) v = static_cast<float>(rng.uniform());
  const auto depth = predict(model, color);
  for (float v : depth.data()) {
    REQUIRE(std::isfinite(v));
    REQUIRE(v >= kMinPredictedDepth);
    REQUIRE(v <= 20.0f);
  }
  const auto rotated = predict(model, yaw_rotate(color, 2));
  const auto expected = yaw_rotate(depth, 2);
  double worst = 0.0;
  for (std::size_t i = 0; i < depth.size(); ++i) worst = std::max(worst, double(std::abs(rotated.data()[i] - expected.data()[i])));
  CHECK(worst < 1e-4);
  CHECK_THROWS_AS(predict(model, ColorImage(32, 16, 3)), ShapeError);
}

TEST_CASE("log rows and manifest loading") {
  CHECK(log_header() == "step,loss,depth_term,smooth_term,seconds");
  CHECK(format_log_row({3, 0.5, 0.25, 0.125, 1.5}) == "3,0.5,0.25,0.125,1.5");
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "panodepth_train_load";
  fs::remove_all(dir);
  render_dataset(generate_scenes(1, 2), SphereDims(32, 16), dir.string());
  const auto samples = load_samples((dir / kManifestName).string());
  REQUIRE(samples.size() == 4);
  CHECK(samples[1].name == "scene_0000_k1");
  CHECK(samples[0].depth.width() == 32);
  fs::remove_all(dir);
}
