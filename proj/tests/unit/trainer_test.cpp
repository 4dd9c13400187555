#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "voxseg/checkpoint.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/preprocess.hpp"
#include "voxseg/synth.hpp"
#include "voxseg/trainer.hpp"

using namespace voxseg;
using voxseg::testing::grad_check;
using voxseg::testing::random_tensor;

namespace {

// p and one-hot g for a random binary label of `n` voxels.
std::pair<Tensor<double>, Tensor<double>> random_pair(Rng& rng, Index n, bool normalized) {
  std::vector<std::uint8_t> label(static_cast<std::size_t>(n));
  for (auto& l : label) l = static_cast<std::uint8_t>(rng.below(2));
  auto g = one_hot<double>(label, Shape{n});
  Tensor<double> p({2, n});
  auto d = p.mutable_data();
  for (Index i = 0; i < n; ++i) {
    const double a = rng.uniform(0.01, 0.99);
    d[static_cast<std::size_t>(n + i)] = a;
    d[static_cast<std::size_t>(i)] = normalized ? 1.0 - a : rng.uniform(0.01, 0.99);
  }
  return {p, g};
}

double soft_dice(const Tensor<double>& p, const Tensor<double>& g, int cls, double eps) {
  const Index n = p.numel() / 2;
  double inter = 0, sp = 0, sg = 0;
  for (Index i = 0; i < n; ++i) {
    inter += p[cls * n + i] * g[cls * n + i];
    sp += p[cls * n + i];
    sg += g[cls * n + i];
  }
  return (2 * inter + 2 * eps) / (sp + sg + 2 * eps);
}

std::vector<Patch> toy_patches(std::uint64_t seed, Index count, Index p = 8) {
  SynthSpec spec;
  spec.dims = {24, 24, 24};
  spec.n_lesions = 3;
  spec.radius_min = 2;
  spec.radius_max = 4;
  spec.seed = seed;
  auto s = generate_synthetic(spec);
  auto mcv = build_channels(s.image);
  return sample_patches(mcv, s.mask, {p, 0.6, count, seed}, "synthetic");
}

std::filesystem::path scratch(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("voxseg_train_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("perfect prediction has zero loss") {
  std::vector<std::uint8_t> label{0, 1, 1, 0, 0, 0};
  auto g = one_hot<double>(label, Shape{6});
  LossConfig cfg;
  CHECK(tversky_loss(g, g, cfg).item() < 1e-5);
  CHECK(focal_tversky_loss(g, g, cfg).item() < 1e-5);
  auto bg = one_hot<double>(std::vector<std::uint8_t>(6, 0), Shape{6});
  CHECK(tversky_loss(bg, bg, cfg).item() == 0.0);
}

TEST_CASE("hand-expanded two-voxel case") {
  std::vector<std::uint8_t> label{1, 1};
  auto g = one_hot<double>(label, Shape{2});
  Tensor<double> p({2, 2}, std::vector<double>{0.2, 0.4, 0.8, 0.6});
  LossConfig half{0.5, 0.5, 1.0, 1e-6};
  const double term = 1.0 - tversky_index(p, g, 1, half);
  CHECK(std::abs(term - 0.1765) < 1e-3);
  CHECK(std::abs(term - (1.0 - (1.4 + 1e-6) / (1.4 + 0.5 * 0.6 + 1e-6))) < 1e-12);
  CHECK(std::abs(std::pow(term, 4.0 / 3.0) - 0.0992) < 1e-3);
}

TEST_CASE("focal with gamma 1 equals tversky exactly") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    auto [p, g] = random_pair(rng, 50, t % 2 == 0);
    LossConfig cfg{rng.uniform(), rng.uniform(), 1.0, 1e-6};
    CHECK(focal_tversky_loss(p, g, cfg).item() == tversky_loss(p, g, cfg).item());
  }
}

TEST_CASE("half weights reduce to soft dice") {
  Rng rng(2);
  LossConfig cfg{0.5, 0.5, 1.0, 1e-6};
  for (int t = 0; t < 20; ++t) {
    auto [p, g] = random_pair(rng, 40, true);
    double sum = 0;
    for (int c = 0; c < 2; ++c) {
      const double term = 1.0 - tversky_index(p, g, c, cfg);
      CHECK(std::abs(term - (1.0 - soft_dice(p, g, c, cfg.epsilon))) < 1e-10);
      sum += term;
    }
    CHECK(std::abs(tversky_loss(p, g, cfg).item() - sum) < 1e-12);
  }
}

TEST_CASE("loss range and validation") {
  Rng rng(3);
  auto [p, g] = random_pair(rng, 30, false);
  const double v = tversky_loss(p, g, LossConfig{}).item();
  CHECK(v >= 0.0);
  CHECK(v <= 2.0);
  Tensor<double> bad_g = g.clone();
  bad_g.mutable_data()[0] = 0.5;
  CHECK_THROWS_AS(tversky_loss(p, bad_g, LossConfig{}), InvariantViolation);
  CHECK_THROWS_AS(tversky_loss(p, g, LossConfig{1.5, 0.3, 1.0, 1e-6}), ConfigError);
  CHECK_THROWS_AS(tversky_loss(p, random_tensor({2, 31}, rng), LossConfig{}), ShapeError);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(4);
  for (double gamma : {1.0, 4.0 / 3.0, 2.0}) {
    auto [p1, g1] = random_pair(rng, 12, false);
    auto [p2, g2] = random_pair(rng, 12, false);
    LossConfig cfg{0.7, 0.3, gamma, 1e-6};
    auto report = grad_check({{"p1", p1}, {"p2", p2}}, [&] {
      std::vector<Tensor<double>> ps{p1, p2}, gs{g1, g2};
      return add(focal_tversky_loss<double>(ps, gs, cfg), scale(tversky_loss<double>(ps, gs, cfg), 0.5));
    });
    INFO(report.worst);
    CHECK(report.checked == 48);
    CHECK(report.max_error <= 1e-4);
  }
}

TEST_CASE("batch loss pools the region sums") {
  Rng rng(5);
  auto [p1, g1] = random_pair(rng, 10, true);
  auto [p2, g2] = random_pair(rng, 10, true);
  Tensor<double> pc({2, 20}), gc({2, 20});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 10; ++i) {
      pc.mutable_data()[static_cast<std::size_t>(c * 20 + i)] = p1[c * 10 + i];
      pc.mutable_data()[static_cast<std::size_t>(c * 20 + 10 + i)] = p2[c * 10 + i];
      gc.mutable_data()[static_cast<std::size_t>(c * 20 + i)] = g1[c * 10 + i];
      gc.mutable_data()[static_cast<std::size_t>(c * 20 + 10 + i)] = g2[c * 10 + i];
    }
  std::vector<Tensor<double>> ps{p1, p2}, gs{g1, g2};
  CHECK(focal_tversky_loss<double>(ps, gs, LossConfig{}).item() ==
        doctest::Approx(focal_tversky_loss(pc, gc, LossConfig{}).item()).epsilon(1e-14));
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("adam hand example and zero gradients") {
  ParamSet<double> ps;
  auto w = ps.add("w", Tensor<double>::scalar(1.0));
  Adam<double> adam(ps);
  w.mutable_grad()[0] = 1.0;
  adam.step(0.1);
  CHECK(w.item() == doctest::Approx(0.9).epsilon(1e-9));

  ParamSet<double> zs;
  auto z = zs.add("z", Tensor<double>({3}, 2.0));
  Adam<double> za(zs);
  z.mutable_grad();
  za.step(0.1);
  for (double v : z.data()) CHECK(v == 2.0);
}

TEST_CASE("adam rejects non-finite gradients by name") {
  ParamSet<double> ps;
  auto w = ps.add("layer.w", Tensor<double>({2}, 1.0));
  Adam<double> adam(ps);
  w.mutable_grad()[1] = NAN;
  CHECK_THROWS_WITH_AS(adam.step(0.1), doctest::Contains("layer.w"), TrainingDiverged);
  CHECK(w[0] == 1.0);
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    ParamSet<double> ps;
    auto w = ps.add("w", Tensor<double>({4}, 0.5));
    Adam<double> adam(ps);
    for (int s = 0; s < 10; ++s) {
      w.zero_grad();
      auto g = w.mutable_grad();
      for (std::size_t i = 0; i < 4; ++i) g[i] = std::sin(static_cast<double>(s * 4 + i));
      adam.step(0.01);
    }
    return std::vector<double>(w.data().begin(), w.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at_epoch(cfg, 0) == 1e-4);
  CHECK(lr_at_epoch(cfg, 2) == doctest::Approx(9.409e-5).epsilon(1e-12));
  cfg.decay = 1.0;
  CHECK(lr_at_epoch(cfg, 7) == cfg.lr0);
}

TEST_CASE("one epoch at zero learning rate keeps the initialization") {
  auto train_set = toy_patches(1, 8), val_set = toy_patches(2, 4);
  Model<float> model(ModelConfig::toy(), 3);
  const auto init = model.params().clone();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr0 = 0.0;
  auto state = train(model, train_set, val_set, cfg, LossConfig{});
  CHECK(state.history.size() == 1);
  for (const auto& e : init.trainable()) {
    auto now = model.params().at(e.name).data();
    CHECK(std::equal(now.begin(), now.end(), e.tensor.data().begin()));
  }
}

TEST_CASE("best checkpoint selection and reload") {
  const auto dir = scratch("best");
  auto train_set = toy_patches(3, 16), val_set = toy_patches(4, 8);
  Model<float> model(ModelConfig::toy(), 4);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr0 = 3e-3;
  cfg.seed = 9;
  cfg.checkpoint = dir / "best";
  auto state = train(model, train_set, val_set, cfg, LossConfig{});
  REQUIRE(state.history.size() == 4);
  double lowest = state.history[0].val_loss;
  for (const auto& r : state.history) lowest = std::min(lowest, r.val_loss);
  CHECK(state.best_val_loss == lowest);
  CHECK(state.history[static_cast<std::size_t>(state.best_epoch)].val_loss == lowest);
  CHECK(state.steps == 16);

  auto reloaded = load_checkpoint<float>(dir / "best");
  CHECK(evaluate_loss(reloaded, val_set, cfg.batch_size, LossConfig{}) == lowest);
  CHECK(evaluate_loss(model, val_set, cfg.batch_size, LossConfig{}) == lowest);

  write_history_csv(state, dir / "loss.csv");
  auto rows = read_history_csv(dir / "loss.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[2].val_loss == state.history[2].val_loss);
  CHECK(rows[3].lr == state.history[3].lr);
}

TEST_CASE("training is deterministic") {
  auto train_set = toy_patches(5, 8), val_set = toy_patches(6, 4);
  auto run = [&] {
    Model<float> model(ModelConfig::toy(), 5);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.lr0 = 1e-3;
    cfg.seed = 1;
    auto state = train(model, train_set, val_set, cfg, LossConfig{});
    std::vector<float> flat;
    for (const auto& e : model.params().entries()) flat.insert(flat.end(), e.tensor.data().begin(), e.tensor.data().end());
    return std::make_pair(flat, state.history.back().val_loss);
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("zero epochs save the initialization") {
  const auto dir = scratch("zero");
  auto train_set = toy_patches(7, 4), val_set = toy_patches(8, 4);
  Model<float> model(ModelConfig::toy(), 6);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.checkpoint = dir / "init";
  auto state = train(model, train_set, val_set, cfg, LossConfig{});
  CHECK(state.history.empty());
  auto back = load_checkpoint<float>(dir / "init");
  Model<float> fresh(ModelConfig::toy(), 6);
  for (const auto& e : fresh.params().entries()) {
    auto got = back.params().at(e.name).data();
    CHECK(std::equal(got.begin(), got.end(), e.tensor.data().begin()));
  }
}

TEST_CASE("divergence restores the best parameters") {
  auto train_set = toy_patches(9, 8), val_set = toy_patches(10, 4);
  train_set[5].data[3] = NAN;
  Model<float> model(ModelConfig::toy(), 7);
  const auto init = model.params().clone();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  CHECK_THROWS_AS(train(model, train_set, val_set, cfg, LossConfig{}), TrainingDiverged);
  for (const auto& e : init.entries()) {
    auto now = model.params().at(e.name).data();
    CHECK(std::equal(now.begin(), now.end(), e.tensor.data().begin()));
  }
}

TEST_CASE("training rejects empty sets") {
  Model<float> model(ModelConfig::toy(), 8);
  auto some = toy_patches(11, 2);
  CHECK_THROWS_AS(train(model, {}, some, TrainConfig{}, LossConfig{}), ConfigError);
  CHECK_THROWS_AS(train(model, some, {}, TrainConfig{}, LossConfig{}), ConfigError);
}

}  // TEST_SUITE

TEST_SUITE("inference") {

TEST_CASE("prediction keeps dims and breaks ties toward background") {
  Rng rng(12);
  Model<float> model(ModelConfig::toy(), 9);
  MultiChannelVolume mcv(2, {10, 17, 9});
  for (auto& v : mcv.data) v = static_cast<float>(rng.normal());
  // Populate running statistics, then zero the head so every logit ties.
  model.forward(voxseg::testing::random_tensor_f({2, 8, 8, 8}, rng), BnMode::train);
  for (const char* n : {"head.w", "head.b"})
    for (auto& v : model.params().at(n).mutable_data()) v = 0.0f;
  auto prob = predict_probabilities(model, {mcv}, 8);
  CHECK(prob.dims == mcv.dims);
  for (float v : prob.data) CHECK(v == 0.5f);
  auto mask = predict_volume(model, mcv, 8);
  CHECK(mask.dims == mcv.dims);
  CHECK(mask.count() == 0);
  CHECK_THROWS_AS(predict_volume(model, mcv, 12), ConfigError);
}

TEST_CASE("tiles are stitched without seams") {
  // Each tile's probability map is placed once: a model whose lesion map
  // depends on the input reproduces the per-tile forward pass exactly.
  Rng rng(13);
  Model<float> model(ModelConfig::toy(), 10);
  model.forward(voxseg::testing::random_tensor_f({2, 8, 8, 8}, rng), BnMode::train);
  MultiChannelVolume mcv(2, {16, 8, 12});
  for (auto& v : mcv.data) v = static_cast<float>(rng.normal());
  auto prob = predict_probabilities(model, {mcv}, 8);
  const auto plan = tile_plan(mcv.dims, 8);
  std::vector<int> cover(static_cast<std::size_t>(voxel_count(mcv.dims)), 0);
  for (const auto& w : plan.windows) {
    Patch tile = extract_patch(mcv, nullptr, w, 8);
    auto out = model.forward(Tensor<float>({2, 8, 8, 8}, tile.data), BnMode::eval);
    for (Index z = 0; z < 8; ++z)
      for (Index y = 0; y < 8; ++y)
        for (Index x = 0; x < 8; ++x) {
          const Index gz = w[0] + z, gy = w[1] + y, gx = w[2] + x;
          if (gz >= 16 || gy >= 8 || gx >= 12) continue;
          ++cover[static_cast<std::size_t>(flat_index(mcv.dims, gz, gy, gx))];
          CHECK(prob.at(gz, gy, gx) == out[512 + (z * 8 + y) * 8 + x]);
        }
  }
  for (int c : cover) CHECK(c == 1);
}

TEST_CASE("mask union") {
  LabelVolume a({1, 1, 4}), b({1, 1, 4});
  a.data = {1, 0, 1, 0};
  b.data = {0, 0, 1, 1};
  CHECK(mask_union(a, b).data == std::vector<std::uint8_t>{1, 0, 1, 1});
  CHECK_THROWS_AS(mask_union(a, LabelVolume({1, 1, 3})), ShapeError);
}

}  // TEST_SUITE
