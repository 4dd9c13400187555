#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/ops.hpp"
#include "voxseg/parallel.hpp"

using namespace voxseg;
using voxseg::testing::grad_check;
using voxseg::testing::probe;
using voxseg::testing::random_tensor;

namespace {

// Direct-summation correlation, one output voxel at a time.
Tensor<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, int s, int p) {
  const Index ci_n = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index co_n = w.dim(0), k = w.dim(2);
  const Index od = (d + 2 * p - k) / s + 1, oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor<double> y(Shape{co_n, od, oh, ow});
  auto ys = y.mutable_data();
  for (Index co = 0; co < co_n; ++co)
    for (Index z = 0; z < od; ++z)
      for (Index r = 0; r < oh; ++r)
        for (Index c = 0; c < ow; ++c) {
          double acc = b.defined() ? b[co] : 0.0;
          for (Index ci = 0; ci < ci_n; ++ci)
            for (Index kz = 0; kz < k; ++kz)
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx) {
                  const Index iz = z * s - p + kz, iy = r * s - p + ky, ix = c * s - p + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= wd) continue;
                  acc += x[((ci * d + iz) * h + iy) * wd + ix] *
                         w[(((co * ci_n + ci) * k + kz) * k + ky) * k + kx];
                }
          ys[static_cast<std::size_t>(((co * od + z) * oh + r) * ow + c)] = acc;
        }
  return y;
}

double inner(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("conv3d identity kernel returns the input") {
  Rng rng(1);
  auto x = random_tensor({1, 3, 4, 5}, rng);
  Tensor<double> w(Shape{1, 1, 1, 1, 1}, 1.0);
  auto y = conv3d(x, w, Tensor<double>(), 1, 0);
  CHECK(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3d stride-2 shape arithmetic") {
  Tensor<float> x(Shape{2, 8, 8, 8}, 1.0f);
  Tensor<float> w(Shape{4, 2, 3, 3, 3}, 0.1f);
  auto y = conv3d(x, w, Tensor<float>(Shape{4}), 2, 1);
  CHECK(y.shape() == Shape{4, 4, 4, 4});
}

TEST_CASE("conv3d matches the direct-summation oracle") {
  Rng rng(7);
  for (int s : {1, 2}) {
    auto x = random_tensor({1, 4, 4, 4}, rng);
    auto w = random_tensor({1, 1, 3, 3, 3}, rng);
    auto b = random_tensor({1}, rng);
    auto y = conv3d(x, w, b, s, 1);
    auto ref = naive_conv3d(x, w, b, s, 1);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-5 * std::max(1.0, std::abs(ref[i])));
  }
  // multi-channel, odd extents
  auto x = random_tensor({3, 5, 6, 7}, rng);
  auto w = random_tensor({2, 3, 3, 3, 3}, rng);
  auto b = random_tensor({2}, rng);
  auto y = conv3d(x, w, b, 2, 1);
  auto ref = naive_conv3d(x, w, b, 2, 1);
  REQUIRE(y.shape() == ref.shape());
  for (Index i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv3d rejects channel mismatch with a shape diagnostic") {
  Tensor<float> x(Shape{3, 4, 4, 4});
  Tensor<float> w(Shape{2, 2, 3, 3, 3});
  CHECK_THROWS_AS(conv3d(x, w, Tensor<float>(), 1, 1), ShapeError);
  CHECK_THROWS_WITH_AS(conv3d(x, w, Tensor<float>(), 1, 1), doctest::Contains("input channels"), ShapeError);
}

TEST_CASE("conv_transpose3d identity and shape arithmetic") {
  Rng rng(2);
  auto x = random_tensor({1, 3, 3, 3}, rng);
  Tensor<double> w(Shape{1, 1, 1, 1, 1}, 1.0);
  auto y = conv_transpose3d(x, w, 1, 0);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  Tensor<float> big(Shape{64, 5, 5, 5}, 0.5f);
  Tensor<float> k(Shape{64, 8, 4, 4, 4}, 0.01f);
  auto up = conv_transpose3d(big, k, 2, 1);
  CHECK(up.shape() == Shape{8, 10, 10, 10});

  Tensor<float> k4(Shape{64, 2, 8, 8, 8}, 0.01f);
  CHECK(conv_transpose3d(big, k4, 4, 2).shape() == Shape{2, 20, 20, 20});
  CHECK_THROWS_AS(conv_transpose3d(big, Tensor<float>(Shape{8, 2, 4, 4, 4}), 2, 1), ShapeError);
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(4));
    const int s = 1 + static_cast<int>(rng.below(2));
    const int p = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    const Index ci = 1 + static_cast<Index>(rng.below(3)), co = 1 + static_cast<Index>(rng.below(3));
    const Index d = k + static_cast<Index>(rng.below(5));
    auto x = random_tensor({ci, d, d, d}, rng);
    auto w = random_tensor({co, ci, k, k, k}, rng);
    auto y_shape = conv3d(x, w, Tensor<double>(), s, p).shape();
    auto y = random_tensor(y_shape, rng);
    const Index rem = (d + 2 * p - k) % s;
    auto lhs = inner(conv3d(x, w, Tensor<double>(), s, p).data(), y.data());
    auto xt = conv_transpose3d(y, w, s, p, static_cast<int>(rem));
    REQUIRE(xt.shape() == x.shape());
    auto rhs = inner(x.data(), xt.data());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("batch_norm train-mode moments") {
  Rng rng(4);
  auto x = random_tensor({3, 4, 4, 4}, rng, -2.0, 5.0);
  auto st = BatchNormState<double>::fresh(3);
  Tensor<double> g(Shape{3}, 1.0), b(Shape{3}, 0.0);
  auto y = batch_norm(x, g, b, st, BnMode::train);
  for (Index c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (Index i = 0; i < 64; ++i) m += y[c * 64 + i];
    m /= 64;
    for (Index i = 0; i < 64; ++i) v += (y[c * 64 + i] - m) * (y[c * 64 + i] - m);
    v /= 64;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1) < 1e-4);
  }
  Tensor<double> g2(Shape{3}, 2.0), b2(Shape{3}, 3.0);
  auto y2 = batch_norm(y, g2, b2, st, BnMode::train);
  for (Index c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (Index i = 0; i < 64; ++i) m += y2[c * 64 + i];
    m /= 64;
    for (Index i = 0; i < 64; ++i) v += (y2[c * 64 + i] - m) * (y2[c * 64 + i] - m);
    CHECK(m == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(std::sqrt(v / 64) == doctest::Approx(2.0).epsilon(1e-3));
  }
}

TEST_CASE("batch_norm constant input and eval-mode guard") {
  Tensor<double> x(Shape{2, 2, 2, 2}, 4.0);
  auto st = BatchNormState<double>::fresh(2);
  Tensor<double> g(Shape{2}, 1.0), b(Shape{2}, 0.0);
  CHECK_THROWS_WITH(batch_norm(x, g, b, st, BnMode::eval), doctest::Contains("uninitialized statistics"));
  auto y = batch_norm(x, g, b, st, BnMode::train);
  for (double v : y.data()) CHECK(v == 0.0);
  CHECK(st.initialized());
  CHECK(st.running_mean[0] == doctest::Approx(0.4));
  auto ye = batch_norm(x, g, b, st, BnMode::eval);
  CHECK(ye.shape() == x.shape());
}

TEST_CASE("elementwise operations") {
  Tensor<double> x(Shape{3}, std::vector<double>{-1, 0, 2});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
  CHECK(sigmoid(Tensor<double>::scalar(-1000.0)).item() >= 0.0);
  auto z = add(x, Tensor<double>(Shape{3}, 0.0));
  for (Index i = 0; i < 3; ++i) CHECK(z[i] == x[i]);
  CHECK(scale(x, 2.0)[2] == 4.0);
  CHECK_THROWS_AS(add(x, Tensor<double>(Shape{4})), ShapeError);
  CHECK_THROWS_AS(mul(x, Tensor<double>(Shape{1, 3})), ShapeError);
}

TEST_CASE("matmul examples") {
  Tensor<double> a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> b(Shape{2, 1}, std::vector<double>{5, 6});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 17.0);
  CHECK(c[1] == 39.0);

  Rng rng(5);
  auto m = random_tensor({3, 4}, rng);
  Tensor<double> eye(Shape{4, 4}, 0.0);
  for (Index i = 0; i < 4; ++i) eye.mutable_data()[static_cast<std::size_t>(i * 5)] = 1.0;
  auto mi = matmul(m, eye);
  for (Index i = 0; i < m.numel(); ++i) CHECK(mi[i] == m[i]);

  auto n = random_tensor({4, 2}, rng);
  auto lhs = transpose(matmul(m, n));
  auto rhs = matmul(transpose(n), transpose(m));
  for (Index i = 0; i < lhs.numel(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
  CHECK_THROWS_AS(matmul(m, m), ShapeError);
}

TEST_CASE("softmax examples and invariants") {
  Tensor<double> x(Shape{2}, std::vector<double>{1, 0});
  auto y = softmax(x, 0);
  CHECK(y[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(0.2689).epsilon(1e-4));

  auto u = softmax(Tensor<double>(Shape{5}, 3.0), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(0.2));

  Rng rng(6);
  auto m = random_tensor({4, 3, 5}, rng, -20, 20);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = softmax(m, axis);
    auto shifted = softmax(add(m, Tensor<double>(m.shape(), 7.5)), axis);
    for (Index i = 0; i < s.numel(); ++i) {
      CHECK(s[i] > 0.0);
      CHECK(s[i] < 1.0);
      CHECK(std::abs(s[i] - shifted[i]) < 1e-12);
    }
  }
  auto s1 = softmax(m, 1);
  for (Index a = 0; a < 4; ++a)
    for (Index c = 0; c < 5; ++c) {
      double total = 0;
      for (Index b = 0; b < 3; ++b) total += s1[(a * 3 + b) * 5 + c];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("reductions and reshape") {
  auto pooled = global_avg_pool(Tensor<double>(Shape{3, 2, 2, 2}, 2.5));
  CHECK(pooled.shape() == Shape{3});
  for (double v : pooled.data()) CHECK(v == 2.5);

  Tensor<float> a(Shape{32, 2, 3, 4}), b(Shape{64, 2, 3, 4});
  CHECK(concat_channels<float>({a, b}).shape() == Shape{96, 2, 3, 4});
  CHECK_THROWS_AS(concat_channels<float>({a, Tensor<float>(Shape{4, 2, 3, 5})}), ShapeError);

  Rng rng(8);
  auto x = random_tensor({2, 3, 4}, rng);
  auto back = reshape(reshape(x, {6, 4}), {2, 3, 4});
  for (Index i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);

  Tensor<double> w(Shape{2, 3}, std::vector<double>{1, 0, 0, 0, 1, 1});
  Tensor<double> bias(Shape{2}, std::vector<double>{0.5, -1});
  auto fc = fully_connected(Tensor<double>(Shape{3}, std::vector<double>{1, 2, 3}), w, bias);
  CHECK(fc[0] == 1.5);
  CHECK(fc[1] == 4.0);
}

TEST_CASE("backward examples") {
  Rng rng(9);
  auto x = random_tensor({2, 3}, rng);
  x.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  {
    Tape<double> tape;
    auto l = sum(mul(x, x));
    tape.backward(l);
  }
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == doctest::Approx(2 * x[i]));

  x.zero_grad();
  {
    Tape<double> tape;
    auto l = sum(scale(x, 3.0));
    tape.backward(l);
    tape.backward(l);
  }
  for (double g : x.grad()) CHECK(g == 6.0);

  Tape<double> tape;
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  CHECK(tape.size() == 1);
}

TEST_CASE("operations do not record without an active tape") {
  Tensor<double> x(Shape{2}, 1.0);
  x.set_requires_grad();
  auto y = relu(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference gradient checks per operation") {
  Rng rng(10);
  const double tol = 1e-4;

  SUBCASE("conv3d") {
    for (int s : {1, 2}) {
      auto x = random_tensor({2, 5, 4, 5}, rng);
      auto w = random_tensor({3, 2, 3, 3, 3}, rng);
      auto b = random_tensor({3}, rng);
      auto r = grad_check({{"x", x}, {"w", w}, {"b", b}}, [&] { return probe(conv3d(x, w, b, s, 1)); });
      CHECK_MESSAGE(r.max_error <= tol, r.worst);
    }
  }
  SUBCASE("conv_transpose3d") {
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto w = random_tensor({2, 3, 4, 4, 4}, rng);
    auto r = grad_check({{"x", x}, {"w", w}}, [&] { return probe(conv_transpose3d(x, w, 2, 1)); });
    CHECK_MESSAGE(r.max_error <= tol, r.worst);
  }
  SUBCASE("batch_norm") {
    auto x = random_tensor({3, 3, 3, 3}, rng);
    auto g = random_tensor({3}, rng, 0.5, 2.0);
    auto b = random_tensor({3}, rng);
    for (BnMode mode : {BnMode::train, BnMode::eval}) {
      auto st = BatchNormState<double>::fresh(3);
      batch_norm(x, g, b, st, BnMode::train);
      auto r = grad_check({{"x", x}, {"g", g}, {"b", b}},
                          [&] { return probe(batch_norm(x, g, b, st, mode)); });
      CHECK_MESSAGE(r.max_error <= tol, r.worst);
    }
  }
  SUBCASE("elementwise") {
    auto a = random_tensor({4, 5}, rng);
    auto b = random_tensor({4, 5}, rng);
    auto s = random_tensor({1}, rng);
    auto c = random_tensor({4}, rng);
    auto r = grad_check({{"a", a}, {"b", b}, {"s", s}, {"c", c}}, [&] {
      auto y = add(mul(relu(a), sigmoid(b)), scale_by(a, s));
      return probe(scale_channels(scale(y, 1.5), c));
    });
    CHECK_MESSAGE(r.max_error <= tol, r.worst);
    CHECK(r.checked > 0);
  }
  SUBCASE("matmul, transpose, softmax") {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 5}, rng);
    auto r = grad_check({{"a", a}, {"b", b}}, [&] { return probe(softmax(matmul(transpose(a), b), 0)); });
    CHECK_MESSAGE(r.max_error <= tol, r.worst);
    auto r1 = grad_check({{"a", a}}, [&] { return probe(softmax(a, 1)); });
    CHECK_MESSAGE(r1.max_error <= tol, r1.worst);
  }
  SUBCASE("pooling, reshape, concat, fully connected") {
    auto x = random_tensor({4, 2, 2, 3}, rng);
    auto y = random_tensor({2, 2, 2, 3}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto bias = random_tensor({3}, rng);
    auto r = grad_check({{"x", x}, {"y", y}, {"w", w}, {"bias", bias}}, [&] {
      auto cat = concat_channels<double>({x, y});
      auto fc = fully_connected(global_avg_pool(x), w, bias);
      return add(probe(reshape(cat, {6, 12})), probe(fc, 5));
    });
    CHECK_MESSAGE(r.max_error <= tol, r.worst);
  }
}

TEST_CASE("kernels are thread-count invariant") {
  Rng rng(11);
  auto x = random_tensor({4, 6, 6, 6}, rng);
  auto w = random_tensor({5, 4, 3, 3, 3}, rng);
  auto y1 = conv3d(x, w, Tensor<double>(), 1, 1);
  set_num_threads(3);
  auto y3 = conv3d(x, w, Tensor<double>(), 1, 1);
  set_num_threads(1);
  for (Index i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y3[i]);
}

}  // TEST_SUITE
