#include "voxseg/losses.hpp"

#include <cmath>

#include "voxseg/errors.hpp"

namespace voxseg {

void LossConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("loss: alpha must lie in [0, 1]");
  if (!(beta >= 0 && beta <= 1)) throw ConfigError("loss: beta must lie in [0, 1]");
  if (!(gamma > 0)) throw ConfigError("loss: gamma must be positive");
  if (!(epsilon > 0)) throw ConfigError("loss: epsilon must be positive");
}

namespace {

struct ClassSums {
  double tp[2] = {0, 0};
  double fn[2] = {0, 0};
  double fp[2] = {0, 0};
};

template <typename T>
void check_pair(const Tensor<T>& p, const Tensor<T>& g) {
  if (p.rank() < 2 || p.dim(0) != 2) throw ShapeError("loss: predictions must be [2, ...], got " + shape_str(p.shape()));
  if (g.shape() != p.shape()) {
    throw ShapeError("loss: target shape " + shape_str(g.shape()) + " differs from prediction " + shape_str(p.shape()));
  }
  const Index n = p.numel() / 2;
  for (Index i = 0; i < n; ++i) {
    const T g0 = g[i], g1 = g[n + i];
    if (!((g0 == T(0) || g0 == T(1)) && g0 + g1 == T(1))) {
      throw InvariantViolation("loss: target is not one-hot at voxel " + std::to_string(i));
    }
  }
}

template <typename T>
ClassSums class_sums(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g) {
  ClassSums s;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Index n = p[k].numel() / 2;
    const T* pp = p[k].data().data();
    const T* gg = g[k].data().data();
    for (int c = 0; c < 2; ++c) {
      const T* pc = pp + c * n;
      const T* pn = pp + (1 - c) * n;
      const T* gc = gg + c * n;
      const T* gn = gg + (1 - c) * n;
      double tp = 0, fn = 0, fp = 0;
      for (Index i = 0; i < n; ++i) {
        tp += static_cast<double>(pc[i]) * gc[i];
        fn += static_cast<double>(pn[i]) * gc[i];
        fp += static_cast<double>(pc[i]) * gn[i];
      }
      s.tp[c] += tp;
      s.fn[c] += fn;
      s.fp[c] += fp;
    }
  }
  return s;
}

template <typename T>
Tensor<T> tversky_family(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g, const LossConfig& cfg,
                         bool focal) {
  cfg.validate();
  if (p.empty() || p.size() != g.size()) throw ShapeError("loss: need matching, non-empty prediction/target lists");
  for (std::size_t k = 0; k < p.size(); ++k) check_pair(p[k], g[k]);

  const ClassSums s = class_sums(p, g);
  const double eps = cfg.epsilon;
  double value = 0;
  double d_tp[2], d_fn[2], d_fp[2];
  for (int c = 0; c < 2; ++c) {
    const double num = s.tp[c] + eps;
    const double den = s.tp[c] + cfg.alpha * s.fn[c] + cfg.beta * s.fp[c] + eps;
    const double ti = num / den;
    const double miss = std::max(0.0, 1.0 - ti);
    // dL/dTI for this class term.
    double w;
    if (focal) {
      value += std::pow(miss, cfg.gamma);
      // At a perfect match the slope is 0 for gamma > 1 and unbounded for
      // gamma < 1; the latter uses the gamma = 1 slope.
      if (miss > 0) {
        w = -cfg.gamma * std::pow(miss, cfg.gamma - 1);
      } else {
        w = cfg.gamma > 1 ? 0.0 : -1.0;
      }
    } else {
      value += 1.0 - ti;
      w = -1.0;
    }
    const double den2 = den * den;
    d_tp[c] = w * (den - num) / den2;
    d_fn[c] = w * (-num * cfg.alpha) / den2;
    d_fp[c] = w * (-num * cfg.beta) / den2;
  }

  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value));
  bool any = false;
  for (const auto& t : p) any = any || should_record<T>({&t});
  if (any) {
    std::vector<Tensor<T>> ps(p.begin(), p.end()), gs(g.begin(), g.end());
    Tape<T>::active()->record(ps, out, [ps, gs, out, d_tp = std::to_array(d_tp), d_fn = std::to_array(d_fn),
                                        d_fp = std::to_array(d_fp)]() {
      const double go = out.grad()[0];
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!ps[k].requires_grad()) continue;
        auto gp = ps[k].mutable_grad();
        const T* gg = gs[k].data().data();
        const Index n = ps[k].numel() / 2;
        for (int c = 0; c < 2; ++c) {
          // p_c appears in TP_c, FP_c and FN_(1-c).
          const double a = go * d_tp[c], f = go * (d_fp[c] + d_fn[1 - c]);
          const T* gc = gg + c * n;
          const T* gn = gg + (1 - c) * n;
          T* dst = gp.data() + c * n;
          for (Index i = 0; i < n; ++i) dst[i] += static_cast<T>(a * gc[i] + f * gn[i]);
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> tversky_loss(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g, const LossConfig& cfg) {
  return tversky_family(p, g, cfg, false);
}

template <typename T>
Tensor<T> focal_tversky_loss(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g, const LossConfig& cfg) {
  return tversky_family(p, g, cfg, true);
}

template <typename T>
double tversky_index(const Tensor<T>& p, const Tensor<T>& g, int cls, const LossConfig& cfg) {
  check_pair(p, g);
  const ClassSums s = class_sums<T>(std::span<const Tensor<T>>(&p, 1), std::span<const Tensor<T>>(&g, 1));
  return (s.tp[cls] + cfg.epsilon) / (s.tp[cls] + cfg.alpha * s.fn[cls] + cfg.beta * s.fp[cls] + cfg.epsilon);
}

template <typename T>
Tensor<T> one_hot(std::span<const std::uint8_t> label, const Shape& spatial) {
  Shape shape{2};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Tensor<T> out(shape);
  const auto n = label.size();
  if (static_cast<Index>(n) != shape_numel(spatial)) throw ShapeError("one_hot: label size does not match shape");
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] > 1) throw InvariantViolation("one_hot: label value " + std::to_string(label[i]) + " is not binary");
    d[i] = label[i] ? T(0) : T(1);
    d[n + i] = label[i] ? T(1) : T(0);
  }
  return out;
}

#define VOXSEG_INSTANTIATE(T)                                                                               \
  template Tensor<T> tversky_loss(std::span<const Tensor<T>>, std::span<const Tensor<T>>, const LossConfig&); \
  template Tensor<T> focal_tversky_loss(std::span<const Tensor<T>>, std::span<const Tensor<T>>,              \
                                        const LossConfig&);                                                 \
  template double tversky_index(const Tensor<T>&, const Tensor<T>&, int, const LossConfig&);                \
  template Tensor<T> one_hot(std::span<const std::uint8_t>, const Shape&);

VOXSEG_INSTANTIATE(float)
VOXSEG_INSTANTIATE(double)

#undef VOXSEG_INSTANTIATE

}  // namespace voxseg
