#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "voxseg/checkpoint.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/network.hpp"

using namespace voxseg;
using voxseg::testing::grad_check;
using voxseg::testing::GradCheckOptions;
using voxseg::testing::NamedLeaf;
using voxseg::testing::probe;
using voxseg::testing::random_tensor;

namespace {

void fill(const Tensor<double>& t, double v) {
  Tensor<double> h = t;
  for (auto& x : h.mutable_data()) x = v;
}

void randomize(const Tensor<double>& t, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> h = t;
  for (auto& x : h.mutable_data()) x = rng.uniform(lo, hi);
}

std::vector<NamedLeaf> trainable_leaves(const ParamSet<double>& params) {
  std::vector<NamedLeaf> out;
  for (const auto& e : params.trainable()) out.emplace_back(e.name, e.tensor);
  return out;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("channel attention with zero FC weights halves the input") {
  Rng rng(1);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_channel_attention(init, "ca", 8, 4);
  fill(ps.at("ca.fc1.w"), 0);
  fill(ps.at("ca.fc1.b"), 0);
  fill(ps.at("ca.fc2.w"), 0);
  fill(ps.at("ca.fc2.b"), 0);
  auto f = random_tensor({8, 3, 3, 3}, rng);
  auto y = channel_attention(f, ps, "ca");
  for (Index i = 0; i < f.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5 * f[i]).epsilon(1e-15));
}

TEST_CASE("channel attention scales each channel by one factor") {
  Rng rng(2);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_channel_attention(init, "ca", 8, 2);
  auto zero = channel_attention(Tensor<double>({8, 2, 2, 2}), ps, "ca");
  for (double v : zero.data()) CHECK(v == 0.0);

  auto f = random_tensor({8, 3, 4, 5}, rng);
  auto y = channel_attention(f, ps, "ca");
  const Index n = 60;
  for (Index c = 0; c < 8; ++c) {
    const double r0 = y[c * n] / f[c * n];
    CHECK(r0 > 0.0);
    CHECK(r0 < 1.0);
    for (Index i = 1; i < n; ++i) CHECK(y[c * n + i] / f[c * n + i] == doctest::Approx(r0).epsilon(1e-12));
  }
  ParamSet<double> bad;
  ParamInit<double> bad_init{rng, bad};
  CHECK_THROWS_AS(init_channel_attention(bad_init, "ca", 6, 4), ConfigError);
}

TEST_CASE("spatial attention identities") {
  Rng rng(3);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_spatial_attention(init, "sa", 4, 0.0);
  auto f = random_tensor({4, 3, 2, 4}, rng);
  Tensor<double> e;
  auto y = spatial_attention(f, ps, "sa", 4096, &e);
  CHECK(std::equal(y.data().begin(), y.data().end(), f.data().begin()));

  REQUIRE(e.shape() == Shape{24, 24});
  for (Index j = 0; j < 24; ++j) {
    double s = 0;
    for (Index i = 0; i < 24; ++i) {
      CHECK(e[i * 24 + j] > 0.0);
      CHECK(e[i * 24 + j] < 1.0);
      s += e[i * 24 + j];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK_THROWS_WITH(spatial_attention(f, ps, "sa", 10), doctest::Contains("attention resolution too large"));
}

TEST_CASE("spatial attention two-voxel hand expansion") {
  Rng rng(4);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_spatial_attention(init, "sa", 1, 0.5);
  fill(ps.at("sa.a.w"), 2.0);
  fill(ps.at("sa.b.w"), 1.0);
  fill(ps.at("sa.c.w"), 3.0);
  for (const char* b : {"sa.a.b", "sa.b.b", "sa.c.b"}) fill(ps.at(b), 0.0);
  Tensor<double> f({1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
  auto y = spatial_attention(f, ps, "sa", 4096);
  // A = [2, 4], B = [1, 2], Cmap = [3, 6]; S[i][j] = B_i * A_j.
  const double e00 = std::exp(2.0) / (std::exp(2.0) + std::exp(4.0));
  const double e10 = 1.0 - e00;
  const double e01 = std::exp(4.0) / (std::exp(4.0) + std::exp(8.0));
  const double e11 = 1.0 - e01;
  CHECK(std::abs(y[0] - (0.5 * (e00 * 3 + e10 * 6) + 1.0)) < 1e-6);
  CHECK(std::abs(y[1] - (0.5 * (e01 * 3 + e11 * 6) + 2.0)) < 1e-6);
}

TEST_CASE("sca_voxres residual identity and shape") {
  Rng rng(5);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_sca_voxres(init, "blk", 4, 2, 0.0);
  auto x = random_tensor({4, 4, 3, 5}, rng);
  auto y = sca_voxres(x, ps, "blk", BnMode::train, 4096);
  CHECK(y.shape() == x.shape());
  for (const char* n : {"blk.conv_a.w", "blk.conv_a.b", "blk.conv_b.w", "blk.conv_b.b"}) fill(ps.at(n), 0.0);
  y = sca_voxres(x, ps, "blk", BnMode::train, 4096);
  CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
}

TEST_CASE("sca_voxres gradients match finite differences") {
  Rng rng(6);
  ParamSet<double> ps;
  ParamInit<double> init{rng, ps};
  init_sca_voxres(init, "blk", 4, 2, 0.7);
  for (const auto& e : ps.entries())
    if (e.name.find(".beta") != std::string::npos || e.name.find(".gamma") != std::string::npos) randomize(e.tensor, rng, 0.5, 1.5);
  auto x = random_tensor({4, 3, 3, 3}, rng);
  auto leaves = trainable_leaves(ps);
  leaves.emplace_back("x", x);
  auto report = grad_check(leaves, [&] { return probe(sca_voxres(x, ps, "blk", BnMode::train, 4096)); });
  INFO(report.worst);
  CHECK(report.checked > 200);
  CHECK(report.max_error <= 1e-4);
}

TEST_CASE("config validator") {
  const auto paper = describe(ModelConfig::paper());
  CHECK(paper.total_layers == 25);
  CHECK(paper.trunk_conv_layers == 17);
  CHECK(paper.deconv_layers == 7);
  CHECK(paper.sca_blocks == 6);
  CHECK(paper.stride2_convs == 3);
  CHECK(paper.tap_channels == 224);
  CHECK(paper.tap_layers == std::vector<int>{3, 5, 12, 17});
  CHECK_NOTHROW(validate_paper_layout(ModelConfig::paper()));
  CHECK_NOTHROW(validate(ModelConfig::toy()));
  CHECK(ModelConfig::toy().tap_channels() == 28);
  CHECK_THROWS_AS(validate_paper_layout(ModelConfig::toy()), ConfigError);

  auto bad = ModelConfig::paper();
  bad.taps[2].deconvs = 1;
  CHECK_THROWS_WITH(validate(bad), doctest::Contains("input resolution"));
  bad = ModelConfig::paper();
  bad.taps[1].after_layer = 4;
  CHECK_THROWS_WITH(validate(bad), doctest::Contains("block boundary"));
  bad = ModelConfig::paper();
  bad.reduction = 5;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  auto round = model_config_from_json(to_json(ModelConfig::toy()));
  CHECK(to_json(round) == to_json(ModelConfig::toy()));
}

TEST_CASE("toy parameter count matches the closed form") {
  const auto cfg = ModelConfig::toy();
  // Independent count from the layer table.
  auto conv = [](Index co, Index ci, Index k) { return co * ci * k * k * k + co; };
  auto bn = [](Index c) { return 2 * c; };
  auto block = [&](Index c, Index r) {
    return 2 * (bn(c) + conv(c, c, 3)) + (c * (c / r) + c / r) + ((c / r) * c + c) + 3 * conv(c, c, 1) + 1;
  };
  const Index a = 4, b = 8, r = 4;
  Index trunk = conv(a, 2, 3) + bn(a) + conv(a, a, 3) + bn(a) + conv(b, a, 3) + bn(b);
  trunk += 2 * block(b, r) + conv(b, b, 3) + bn(b) + 2 * block(b, r) + conv(b, b, 3) + bn(b) + 2 * block(b, r);
  auto deconv = [&](Index ci, Index co) { return ci * co * 64 + bn(co); };
  const Index taps = deconv(b, a) + deconv(b, b) + 2 * deconv(b, b) + 3 * deconv(b, b);
  const Index head = conv(2, 28, 1);
  CHECK(parameter_count(cfg) == trunk + taps + head);
}

TEST_CASE("base model output shapes") {
  Rng rng(7);
  Model<float> toy(ModelConfig::toy(), 1);
  auto x = voxseg::testing::random_tensor_f({2, 16, 16, 16}, rng);
  CHECK(toy.features(x, BnMode::train).shape() == Shape{28, 16, 16, 16});
  CHECK(toy.forward(x, BnMode::train).shape() == Shape{2, 16, 16, 16});
  CHECK(ModelConfig::toy().patch_multiple() == 8);
  CHECK(conv_out_extent(conv_out_extent(conv_out_extent(16, 3, 2, 1), 3, 2, 1), 3, 2, 1) == 2);
  CHECK_THROWS_AS(toy.forward(voxseg::testing::random_tensor_f({2, 12, 12, 12}, rng), BnMode::train), ConfigError);
  CHECK_THROWS_AS(toy.forward(voxseg::testing::random_tensor_f({3, 16, 16, 16}, rng), BnMode::train), ShapeError);

  Model<float> paper(ModelConfig::paper(), 1);
  CHECK(paper.features(x, BnMode::train).shape() == Shape{224, 16, 16, 16});
}

TEST_CASE("segmentation head") {
  Rng rng(8);
  Model<double> m(ModelConfig::toy(), 2);
  auto feats = random_tensor({28, 2, 2, 2}, rng);
  auto p = segmentation_head(feats, m.params());
  for (Index i = 0; i < 8; ++i) CHECK(std::abs(p[i] + p[8 + i] - 1.0) < 1e-12);

  fill(m.params().at("head.w"), 0.0);
  fill(m.params().at("head.b"), 0.0);
  p = segmentation_head(feats, m.params());
  for (double v : p.data()) CHECK(v == 0.5);

  // Logit difference equals the single feature channel value.
  auto w = m.params().at("head.w");
  auto wd = w.mutable_data();
  wd[0 * 28 + 0] = -1.0;
  wd[1 * 28 + 0] = 1.0;
  Tensor<double> f({28, 1, 1, 4});
  const double z[4] = {-2.0, -0.1, 0.0, 0.3};
  for (int i = 0; i < 4; ++i) f.mutable_data()[static_cast<std::size_t>(i)] = z[i];
  p = segmentation_head(f, m.params());
  const bool expect[4] = {false, false, false, true};
  for (int i = 0; i < 4; ++i) {
    CHECK((p[4 + i] > 0.5) == expect[i]);
    CHECK(p[4 + i] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0 * z[i]))));
  }
  CHECK_THROWS_AS(segmentation_head(random_tensor({27, 2, 2, 2}, rng), m.params()), ShapeError);
}

TEST_CASE("two-path fusion") {
  Rng rng(9);
  auto cfg = ModelConfig::toy();
  cfg.paths = 2;
  Model<double> two(cfg, 3);
  CHECK(two.params().at("head.w").dim(1) == 56);
  CHECK(ModelConfig::paper().tap_channels() * 2 == 448);

  auto flair = random_tensor({2, 8, 8, 8}, rng);
  auto t1 = random_tensor({2, 8, 8, 8}, rng);
  Model<double> one(ModelConfig::toy(), 3);
  // Copy the FLAIR path and head block into the single-path model.
  for (const auto& e : one.params().entries()) {
    if (e.name.rfind("p0.", 0) == 0) {
      auto src = two.params().at(e.name).data();
      std::copy(src.begin(), src.end(), Tensor<double>(e.tensor).mutable_data().begin());
    }
  }
  auto hw = two.params().at("head.w");
  auto hd = hw.mutable_data();
  auto ow = one.params().at("head.w");
  for (Index c = 0; c < 2; ++c)
    for (Index k = 0; k < 56; ++k) {
      if (k >= 28) hd[static_cast<std::size_t>(c * 56 + k)] = 0.0;
      else ow.mutable_data()[static_cast<std::size_t>(c * 28 + k)] = hd[static_cast<std::size_t>(c * 56 + k)];
    }
  auto hb = one.params().at("head.b").mutable_data();
  auto src_b = two.params().at("head.b").data();
  std::copy(src_b.begin(), src_b.end(), hb.begin());
  auto a = two.forward({flair, t1}, BnMode::train);
  auto b = one.forward(flair, BnMode::train);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  CHECK_THROWS_AS(two.forward({flair, random_tensor({2, 16, 16, 16}, rng)}, BnMode::train), ShapeError);

  Model<double> fresh(cfg, 4);
  {
    Tape<double> tape;
    auto loss = probe(fresh.forward({flair, t1}, BnMode::train));
    tape.backward(loss);
  }
  int p0 = 0, p1 = 0;
  for (const auto& e : fresh.params().trainable()) {
    REQUIRE_MESSAGE(e.tensor.has_grad(), e.name);
    bool any = false;
    for (double g : e.tensor.grad()) any = any || g != 0.0;
    if (e.name.rfind("p0.", 0) == 0) p0 += any;
    if (e.name.rfind("p1.", 0) == 0) p1 += any;
  }
  CHECK(p0 > 0);
  CHECK(p1 > 0);
}

TEST_CASE("checkpoint round trip") {
  auto dir = std::filesystem::temp_directory_path() / "voxseg_ckpt";
  std::filesystem::remove_all(dir);
  Rng rng(10);
  Model<float> m(ModelConfig::toy(), 5);
  auto x = voxseg::testing::random_tensor_f({2, 8, 8, 8}, rng);
  auto y_train = m.forward(x, BnMode::train);
  save_checkpoint(m, dir / "ck", {{"epoch", 3}});
  nlohmann::json meta;
  auto back = load_checkpoint<float>(dir / "ck", &meta);
  CHECK(meta.at("epoch") == 3);
  auto y1 = m.forward(x, BnMode::eval);
  auto y2 = back.forward(x, BnMode::eval);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  CHECK(y_train.numel() == y1.numel());

  auto as_double = load_checkpoint<double>(dir / "ck");
  CHECK(as_double.params().entries().size() == m.params().entries().size());

  std::filesystem::resize_file(dir / "ck.raw", 64);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "ck"), CorruptContainer);
}

TEST_CASE("eval mode needs trained statistics") {
  Rng rng(11);
  Model<float> m(ModelConfig::toy(), 6);
  CHECK_THROWS_WITH(m.forward(voxseg::testing::random_tensor_f({2, 8, 8, 8}, rng), BnMode::eval),
                    doctest::Contains("uninitialized statistics"));
}

}  // TEST_SUITE
