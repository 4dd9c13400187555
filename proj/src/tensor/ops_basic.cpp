#include <algorithm>
#include <cmath>

#include "voxseg/errors.hpp"
#include "voxseg/ops.hpp"

namespace voxseg {

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

thread_local ReluSignRecorder* current_recorder = nullptr;

}  // namespace

ReluSignRecorder::ReluSignRecorder() : previous_(current_recorder) { current_recorder = this; }
ReluSignRecorder::~ReluSignRecorder() { current_recorder = previous_; }
ReluSignRecorder* ReluSignRecorder::active() { return current_recorder; }

void ReluSignRecorder::mix(std::uint64_t word) {
  hash_ ^= word;
  hash_ *= 1099511628211ULL;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::fresh(Index channels) {
  return {Tensor<T>(Shape{channels}, T(0)), Tensor<T>(Shape{channels}, T(1)),
          Tensor<T>(Shape{1}, T(0))};
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, BnMode mode, double eps, double momentum) {
  if (input.rank() < 2) throw ShapeError("batch_norm: input must be [C, ...]");
  const Index c_n = input.dim(0);
  const Index n = input.numel() / c_n;
  if (gamma.shape() != Shape{c_n} || beta.shape() != Shape{c_n}) {
    throw ShapeError("batch_norm: affine parameters must have shape [" + std::to_string(c_n) + "]");
  }
  if (!(eps > 0)) throw ConfigError("batch_norm: eps must be positive");
  if (mode == BnMode::eval && !state.initialized()) {
    throw Error("batch_norm: uninitialized statistics (eval mode before any train-mode call)");
  }

  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(c_n));
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  T* xh = xhat.mutable_data().data();

  for (Index c = 0; c < c_n; ++c) {
    const T* xc = x + c * n;
    T mean, var;
    if (mode == BnMode::train) {
      double s = 0;
      for (Index i = 0; i < n; ++i) s += xc[i];
      const double m = s / static_cast<double>(n);
      double ss = 0;
      for (Index i = 0; i < n; ++i) ss += (xc[i] - m) * (xc[i] - m);
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(n));
      const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
      auto rm = state.running_mean.mutable_data();
      auto rv = state.running_var.mutable_data();
      rm[c] = static_cast<T>((1 - momentum) * rm[c] + momentum * m);
      rv[c] = static_cast<T>((1 - momentum) * rv[c] + momentum * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[static_cast<std::size_t>(c)] = is;
    const T g = gamma[c], b = beta[c];
    for (Index i = 0; i < n; ++i) {
      const T v = (xc[i] - mean) * is;
      xh[c * n + i] = v;
      y[c * n + i] = g * v + b;
    }
  }
  if (mode == BnMode::train) state.tracked.mutable_data()[0] += T(1);

  if (should_record<T>({&input, &gamma, &beta})) {
    Tape<T>::active()->record({input, gamma, beta}, out,
                              [input, gamma, beta, out, xhat, inv_std, mode, c_n, n]() mutable {
      const T* gy = out.grad().data();
      const T* xh = xhat.data().data();
      for (Index c = 0; c < c_n; ++c) {
        const T* gyc = gy + c * n;
        const T* xhc = xh + c * n;
        T sum_gy = T(0), sum_gy_xh = T(0);
        for (Index i = 0; i < n; ++i) {
          sum_gy += gyc[i];
          sum_gy_xh += gyc[i] * xhc[i];
        }
        if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_gy_xh;
        if (beta.requires_grad()) beta.mutable_grad()[c] += sum_gy;
        if (input.requires_grad()) {
          T* gx = input.mutable_grad().data() + c * n;
          const T scale = gamma[c] * inv_std[static_cast<std::size_t>(c)];
          if (mode == BnMode::train) {
            const T mean_gy = sum_gy / static_cast<T>(n);
            const T mean_gy_xh = sum_gy_xh / static_cast<T>(n);
            for (Index i = 0; i < n; ++i) gx[i] += scale * (gyc[i] - mean_gy - xhc[i] * mean_gy_xh);
          } else {
            for (Index i = 0; i < n; ++i) gx[i] += scale * gyc[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
  if (auto* rec = ReluSignRecorder::active()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      word = (word << 1) | (xs[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63) {
        rec->mix(word);
        word = 0;
      }
    }
    rec->mix(word);
  }
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out]() mutable {
      auto gy = out.grad();
      auto xs = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (xs[i] > T(0)) gx[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    // Branch on sign so exp never overflows.
    if (xs[i] >= T(0)) {
      ys[i] = T(1) / (T(1) + std::exp(-xs[i]));
    } else {
      const T e = std::exp(xs[i]);
      ys[i] = e / (T(1) + e);
    }
  }
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out]() mutable {
      auto gy = out.grad();
      auto ys = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * ys[i] * (T(1) - ys[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  if (should_record<T>({&a, &b})) {
    Tape<T>::active()->record({a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto as = a.data(), bs = b.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * bs[i];
  if (should_record<T>({&a, &b})) {
    Tape<T>::active()->record({a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        auto bs = b.data();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bs[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        auto as = a.data();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * as[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] * c;
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out, c]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: factor must have one element, got " + shape_str(s.shape()));
  const T c = s[0];
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] * c;
  if (should_record<T>({&x, &s})) {
    Tape<T>::active()->record({x, s}, out, [x, s, out]() mutable {
      auto gy = out.grad();
      auto xs = x.data();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        const T c = s[0];
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c;
      }
      if (s.requires_grad()) {
        T acc = T(0);
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xs[i];
        s.mutable_grad()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 1 || s.shape() != Shape{x.dim(0)}) {
    throw ShapeError("scale_channels: factors " + shape_str(s.shape()) + " do not match input " +
                     shape_str(x.shape()));
  }
  const Index c_n = x.dim(0), n = x.numel() / c_n;
  Tensor<T> out(x.shape());
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (Index c = 0; c < c_n; ++c)
    for (Index i = 0; i < n; ++i) ys[c * n + i] = xs[c * n + i] * s[c];
  if (should_record<T>({&x, &s})) {
    Tape<T>::active()->record({x, s}, out, [x, s, out, c_n, n]() mutable {
      auto gy = out.grad();
      auto xs = x.data();
      for (Index c = 0; c < c_n; ++c) {
        if (x.requires_grad()) {
          auto gx = x.mutable_grad();
          for (Index i = 0; i < n; ++i) gx[c * n + i] += gy[c * n + i] * s[c];
        }
        if (s.requires_grad()) {
          T acc = T(0);
          for (Index i = 0; i < n; ++i) acc += gy[c * n + i] * xs[c * n + i];
          s.mutable_grad()[c] += acc;
        }
      }
    });
  }
  return out;
}

namespace {

// c[M,N] += a[M,K] * b[K,N], optionally with either operand transposed in
// storage: ta means a is stored [K,M], tb means b is stored [N,K].
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, Index m, Index k, Index n, bool ta, bool tb) {
  for (Index i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (Index p = 0; p < k; ++p) {
      const T av = ta ? a[p * m + i] : a[i * k + p];
      if (av == T(0)) continue;
      if (!tb) {
        const T* brow = b + p * n;
        for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (Index j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible operands " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  gemm_acc(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n, false, false);
  if (should_record<T>({&a, &b})) {
    Tape<T>::active()->record({a, b}, out, [a, b, out, m, k, n]() mutable {
      const T* gy = out.grad().data();
      if (a.requires_grad()) {
        // dA[M,K] = dC[M,N] * B^T
        gemm_acc(gy, b.data().data(), a.mutable_grad().data(), m, n, k, false, true);
      }
      if (b.requires_grad()) {
        // dB[K,N] = A^T * dC[M,N]
        gemm_acc(a.data().data(), gy, b.mutable_grad().data(), k, m, n, true, false);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Tensor<T> out(Shape{n, m});
  auto as = a.data();
  auto ys = out.mutable_data();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) ys[j * m + i] = as[i * n + j];
  if (should_record<T>({&a})) {
    Tape<T>::active()->record({a}, out, [a, out, m, n]() mutable {
      auto gy = out.grad();
      auto ga = a.mutable_grad();
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  Index outer = 1, inner = 1;
  const Index len = x.dim(static_cast<std::size_t>(axis));
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));

  Tensor<T> out(x.shape());
  const T* xs = x.data().data();
  T* ys = out.mutable_data().data();
  std::vector<T> mx(static_cast<std::size_t>(inner)), total(static_cast<std::size_t>(inner));
  for (Index o = 0; o < outer; ++o) {
    const T* xb = xs + o * len * inner;
    T* yb = ys + o * len * inner;
    std::copy(xb, xb + inner, mx.begin());
    for (Index l = 1; l < len; ++l)
      for (Index i = 0; i < inner; ++i) mx[i] = std::max(mx[i], xb[l * inner + i]);
    std::fill(total.begin(), total.end(), T(0));
    for (Index l = 0; l < len; ++l)
      for (Index i = 0; i < inner; ++i) {
        const T e = std::exp(xb[l * inner + i] - mx[i]);
        yb[l * inner + i] = e;
        total[i] += e;
      }
    for (Index l = 0; l < len; ++l)
      for (Index i = 0; i < inner; ++i) yb[l * inner + i] /= total[i];
  }

  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out, outer, len, inner]() mutable {
      const T* gy = out.grad().data();
      const T* ys = out.data().data();
      T* gx = x.mutable_grad().data();
      std::vector<T> dot(static_cast<std::size_t>(inner));
      for (Index o = 0; o < outer; ++o) {
        const Index base = o * len * inner;
        std::fill(dot.begin(), dot.end(), T(0));
        for (Index l = 0; l < len; ++l)
          for (Index i = 0; i < inner; ++i) dot[i] += gy[base + l * inner + i] * ys[base + l * inner + i];
        for (Index l = 0; l < len; ++l)
          for (Index i = 0; i < inner; ++i) {
            const Index at = base + l * inner + i;
            gx[at] += ys[at] * (gy[at] - dot[i]);
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("global_avg_pool: input must be [C, ...]");
  const Index c_n = x.dim(0), n = x.numel() / c_n;
  Tensor<T> out(Shape{c_n});
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (Index c = 0; c < c_n; ++c) {
    T acc = T(0);
    for (Index i = 0; i < n; ++i) acc += xs[c * n + i];
    ys[c] = acc / static_cast<T>(n);
  }
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out, c_n, n]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (Index c = 0; c < c_n; ++c) {
        const T g = gy[c] / static_cast<T>(n);
        for (Index i = 0; i < n; ++i) gx[c * n + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out]() mutable {
      auto gy = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape shape = parts.front().shape();
  Index channels = 0;
  for (const auto& p : parts) {
    Shape tail_a(p.shape().begin() + 1, p.shape().end());
    Shape tail_b(shape.begin() + 1, shape.end());
    if (p.rank() != shape.size() || tail_a != tail_b) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(shape));
    }
    channels += p.dim(0);
  }
  shape[0] = channels;
  Tensor<T> out(shape);
  auto ys = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), ys.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.data().size();
  }
  bool record = false;
  for (const auto& p : parts) record = record || should_record<T>({&p});
  if (record) {
    Tape<T>::active()->record(parts, out, [parts, out]() mutable {
      auto gy = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t n = p.data().size();
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (std::size_t i = 0; i < n; ++i) gp[i] += gy[offset + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 1 || weight.rank() != 2 || weight.dim(1) != x.dim(0) ||
      (bias.defined() && bias.shape() != Shape{weight.dim(0)})) {
    throw ShapeError("fully_connected: incompatible shapes x " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()));
  }
  const Index out_n = weight.dim(0), in_n = weight.dim(1);
  Tensor<T> out(Shape{out_n});
  auto xs = x.data();
  auto ws = weight.data();
  auto ys = out.mutable_data();
  for (Index o = 0; o < out_n; ++o) {
    T acc = bias.defined() ? bias[o] : T(0);
    for (Index i = 0; i < in_n; ++i) acc += ws[o * in_n + i] * xs[i];
    ys[o] = acc;
  }
  if (should_record<T>({&x, &weight, &bias})) {
    Tape<T>::active()->record({x, weight, bias}, out, [x, weight, bias, out, out_n, in_n]() mutable {
      auto gy = out.grad();
      auto xs = x.data();
      auto ws = weight.data();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (Index o = 0; o < out_n; ++o)
          for (Index i = 0; i < in_n; ++i) gx[i] += gy[o] * ws[o * in_n + i];
      }
      if (weight.requires_grad()) {
        auto gw = weight.mutable_grad();
        for (Index o = 0; o < out_n; ++o)
          for (Index i = 0; i < in_n; ++i) gw[o * in_n + i] += gy[o] * xs[i];
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (Index o = 0; o < out_n; ++o) gb[o] += gy[o];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (should_record<T>({&x})) {
    Tape<T>::active()->record({x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      auto gx = x.mutable_grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

#define VOXSEG_INSTANTIATE(T)                                                                   \
  template struct BatchNormState<T>;                                                            \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                BatchNormState<T>&, BnMode, double, double);                    \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> sum(const Tensor<T>&);

VOXSEG_INSTANTIATE(float)
VOXSEG_INSTANTIATE(double)

#undef VOXSEG_INSTANTIATE

}  // namespace voxseg
