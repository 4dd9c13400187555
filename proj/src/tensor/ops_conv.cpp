#include <algorithm>
#include <array>

#include "voxseg/errors.hpp"
#include "voxseg/ops.hpp"
#include "voxseg/parallel.hpp"

namespace voxseg {

namespace {

Index floor_div(Index a, Index b) {
  Index q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

// Both convolution directions relate a "fine" index f and a "coarse" index c
// through f = c * stride - pad + k. For every kernel tap k this returns the
// half-open range of coarse indices whose fine index lies inside [0, fine).
struct Range {
  Index lo;
  Index hi;
};

std::vector<Range> tap_ranges(Index fine, Index coarse, Index kernel, Index stride, Index pad) {
  std::vector<Range> out(static_cast<std::size_t>(kernel));
  for (Index k = 0; k < kernel; ++k) {
    Index lo = std::max<Index>(0, ceil_div(pad - k, stride));
    Index hi = std::min<Index>(coarse, floor_div(fine - 1 + pad - k, stride) + 1);
    out[static_cast<std::size_t>(k)] = {lo, std::max(lo, hi)};
  }
  return out;
}

struct Geometry {
  Index fine_d, fine_h, fine_w;
  Index coarse_d, coarse_h, coarse_w;
  Index k;
  Index stride;
  Index pad;
  std::vector<Range> rz, ry, rx;

  Geometry(Index fd, Index fh, Index fw, Index cd, Index ch, Index cw, Index kk, Index s, Index p)
      : fine_d(fd), fine_h(fh), fine_w(fw), coarse_d(cd), coarse_h(ch), coarse_w(cw), k(kk),
        stride(s), pad(p),
        rz(tap_ranges(fd, cd, kk, s, p)),
        ry(tap_ranges(fh, ch, kk, s, p)),
        rx(tap_ranges(fw, cw, kk, s, p)) {}

  Index fine_size() const { return fine_d * fine_h * fine_w; }
  Index coarse_size() const { return coarse_d * coarse_h * coarse_w; }
};

// coarse[c] += w * fine[c*s - p + k] over all valid coarse positions.
template <typename T>
void gather_tap(const Geometry& g, Index kz, Index ky, Index kx, T w, const T* fine, T* coarse) {
  const Range rz = g.rz[kz], ry = g.ry[ky], rx = g.rx[kx];
  for (Index cz = rz.lo; cz < rz.hi; ++cz) {
    const Index fz = cz * g.stride - g.pad + kz;
    for (Index cy = ry.lo; cy < ry.hi; ++cy) {
      const Index fy = cy * g.stride - g.pad + ky;
      const T* frow = fine + (fz * g.fine_h + fy) * g.fine_w;
      T* crow = coarse + (cz * g.coarse_h + cy) * g.coarse_w;
      if (g.stride == 1) {
        const T* src = frow + (kx - g.pad);
        for (Index cx = rx.lo; cx < rx.hi; ++cx) crow[cx] += w * src[cx];
      } else {
        for (Index cx = rx.lo; cx < rx.hi; ++cx) crow[cx] += w * frow[cx * g.stride - g.pad + kx];
      }
    }
  }
}

// fine[c*s - p + k] += w * coarse[c] over all valid coarse positions.
template <typename T>
void scatter_tap(const Geometry& g, Index kz, Index ky, Index kx, T w, const T* coarse, T* fine) {
  const Range rz = g.rz[kz], ry = g.ry[ky], rx = g.rx[kx];
  for (Index cz = rz.lo; cz < rz.hi; ++cz) {
    const Index fz = cz * g.stride - g.pad + kz;
    for (Index cy = ry.lo; cy < ry.hi; ++cy) {
      const Index fy = cy * g.stride - g.pad + ky;
      T* frow = fine + (fz * g.fine_h + fy) * g.fine_w;
      const T* crow = coarse + (cz * g.coarse_h + cy) * g.coarse_w;
      if (g.stride == 1) {
        T* dst = frow + (kx - g.pad);
        for (Index cx = rx.lo; cx < rx.hi; ++cx) dst[cx] += w * crow[cx];
      } else {
        for (Index cx = rx.lo; cx < rx.hi; ++cx) frow[cx * g.stride - g.pad + kx] += w * crow[cx];
      }
    }
  }
}

// sum over valid coarse positions of coarse[c] * fine[c*s - p + k].
template <typename T>
T correlate_tap(const Geometry& g, Index kz, Index ky, Index kx, const T* fine, const T* coarse) {
  T acc = T(0);
  const Range rz = g.rz[kz], ry = g.ry[ky], rx = g.rx[kx];
  for (Index cz = rz.lo; cz < rz.hi; ++cz) {
    const Index fz = cz * g.stride - g.pad + kz;
    for (Index cy = ry.lo; cy < ry.hi; ++cy) {
      const Index fy = cy * g.stride - g.pad + ky;
      const T* frow = fine + (fz * g.fine_h + fy) * g.fine_w;
      const T* crow = coarse + (cz * g.coarse_h + cy) * g.coarse_w;
      T row = T(0);
      if (g.stride == 1) {
        const T* src = frow + (kx - g.pad);
        for (Index cx = rx.lo; cx < rx.hi; ++cx) row += crow[cx] * src[cx];
      } else {
        for (Index cx = rx.lo; cx < rx.hi; ++cx) row += crow[cx] * frow[cx * g.stride - g.pad + kx];
      }
      acc += row;
    }
  }
  return acc;
}

void check_kernel_args(const Shape& in, const Shape& kernel, const char* op) {
  if (in.size() != 4) {
    throw ShapeError(std::string(op) + ": input must be [C,D,H,W], got " + shape_str(in));
  }
  if (kernel.size() != 5 || kernel[2] != kernel[3] || kernel[2] != kernel[4]) {
    throw ShapeError(std::string(op) + ": kernel must be [A,B,k,k,k], got " + shape_str(kernel));
  }
}

}  // namespace

Index conv_out_extent(Index in, Index kernel, Index stride, Index pad) {
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv3d: padded extent " + std::to_string(in + 2 * pad) +
                     " smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Index deconv_out_extent(Index in, Index kernel, Index stride, Index pad, Index output_pad) {
  const Index out = (in - 1) * stride - 2 * pad + kernel + output_pad;
  if (out <= 0) throw ShapeError("conv_transpose3d: non-positive output extent");
  return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int pad) {
  check_kernel_args(input.shape(), kernel.shape(), "conv3d");
  const Index ci_n = input.dim(0), co_n = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != ci_n) {
    throw ShapeError("conv3d: kernel " + shape_str(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)) + " input channels, input " +
                     shape_str(input.shape()) + " has " + std::to_string(ci_n));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co_n)) {
    throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(co_n) + " output channels");
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv3d: invalid stride/pad");
  const Geometry g(input.dim(1), input.dim(2), input.dim(3),
                   conv_out_extent(input.dim(1), k, stride, pad),
                   conv_out_extent(input.dim(2), k, stride, pad),
                   conv_out_extent(input.dim(3), k, stride, pad), k, stride, pad);
  Tensor<T> out(Shape{co_n, g.coarse_d, g.coarse_h, g.coarse_w});
  const T* x = input.data().data();
  const T* w = kernel.data().data();
  T* y = out.mutable_data().data();
  const Index k3 = k * k * k, in_sz = g.fine_size(), out_sz = g.coarse_size();

  parallel_for(co_n, [&](Index co) {
    T* yc = y + co * out_sz;
    std::fill(yc, yc + out_sz, bias.defined() ? bias[co] : T(0));
    for (Index ci = 0; ci < ci_n; ++ci) {
      const T* wk = w + (co * ci_n + ci) * k3;
      const T* xc = x + ci * in_sz;
      for (Index kz = 0; kz < k; ++kz)
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx) gather_tap(g, kz, ky, kx, wk[(kz * k + ky) * k + kx], xc, yc);
    }
  });

  if (should_record<T>({&input, &kernel, &bias})) {
    Tape<T>::active()->record({input, kernel, bias}, out, [input, kernel, bias, out, g, ci_n, co_n,
                                                           k, k3, in_sz, out_sz]() mutable {
      const T* gy = out.grad().data();
      const T* x = input.data().data();
      const T* w = kernel.data().data();
      if (input.requires_grad()) {
        T* gx = input.mutable_grad().data();
        parallel_for(ci_n, [&](Index ci) {
          T* gxc = gx + ci * in_sz;
          for (Index co = 0; co < co_n; ++co) {
            const T* wk = w + (co * ci_n + ci) * k3;
            const T* gyc = gy + co * out_sz;
            for (Index kz = 0; kz < k; ++kz)
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx)
                  scatter_tap(g, kz, ky, kx, wk[(kz * k + ky) * k + kx], gyc, gxc);
          }
        });
      }
      if (kernel.requires_grad()) {
        T* gw = kernel.mutable_grad().data();
        parallel_for(co_n, [&](Index co) {
          const T* gyc = gy + co * out_sz;
          for (Index ci = 0; ci < ci_n; ++ci) {
            T* gwk = gw + (co * ci_n + ci) * k3;
            const T* xc = x + ci * in_sz;
            for (Index kz = 0; kz < k; ++kz)
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx)
                  gwk[(kz * k + ky) * k + kx] += correlate_tap(g, kz, ky, kx, xc, gyc);
          }
        });
      }
      if (bias.defined() && bias.requires_grad()) {
        T* gb = bias.mutable_grad().data();
        for (Index co = 0; co < co_n; ++co) {
          T acc = T(0);
          const T* gyc = gy + co * out_sz;
          for (Index i = 0; i < out_sz; ++i) acc += gyc[i];
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int pad,
                           int output_pad) {
  check_kernel_args(input.shape(), kernel.shape(), "conv_transpose3d");
  const Index ci_n = input.dim(0), co_n = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != ci_n) {
    throw ShapeError("conv_transpose3d: kernel " + shape_str(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(0)) + " input channels, input " +
                     shape_str(input.shape()) + " has " + std::to_string(ci_n));
  }
  if (stride < 1 || pad < 0 || output_pad < 0 || output_pad >= stride) {
    throw ShapeError("conv_transpose3d: invalid stride/pad/output_pad");
  }
  const Geometry g(deconv_out_extent(input.dim(1), k, stride, pad, output_pad),
                   deconv_out_extent(input.dim(2), k, stride, pad, output_pad),
                   deconv_out_extent(input.dim(3), k, stride, pad, output_pad), input.dim(1),
                   input.dim(2), input.dim(3), k, stride, pad);
  Tensor<T> out(Shape{co_n, g.fine_d, g.fine_h, g.fine_w});
  const T* x = input.data().data();
  const T* w = kernel.data().data();
  T* y = out.mutable_data().data();
  const Index k3 = k * k * k, in_sz = g.coarse_size(), out_sz = g.fine_size();

  parallel_for(co_n, [&](Index co) {
    T* yc = y + co * out_sz;
    for (Index ci = 0; ci < ci_n; ++ci) {
      const T* wk = w + (ci * co_n + co) * k3;
      const T* xc = x + ci * in_sz;
      for (Index kz = 0; kz < k; ++kz)
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx) scatter_tap(g, kz, ky, kx, wk[(kz * k + ky) * k + kx], xc, yc);
    }
  });

  if (should_record<T>({&input, &kernel})) {
    Tape<T>::active()->record({input, kernel}, out, [input, kernel, out, g, ci_n, co_n, k, k3,
                                                     in_sz, out_sz]() mutable {
      const T* gy = out.grad().data();
      const T* x = input.data().data();
      const T* w = kernel.data().data();
      if (input.requires_grad()) {
        T* gx = input.mutable_grad().data();
        parallel_for(ci_n, [&](Index ci) {
          T* gxc = gx + ci * in_sz;
          for (Index co = 0; co < co_n; ++co) {
            const T* wk = w + (ci * co_n + co) * k3;
            const T* gyc = gy + co * out_sz;
            for (Index kz = 0; kz < k; ++kz)
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx)
                  gather_tap(g, kz, ky, kx, wk[(kz * k + ky) * k + kx], gyc, gxc);
          }
        });
      }
      if (kernel.requires_grad()) {
        T* gw = kernel.mutable_grad().data();
        parallel_for(ci_n, [&](Index ci) {
          const T* xc = x + ci * in_sz;
          for (Index co = 0; co < co_n; ++co) {
            T* gwk = gw + (ci * co_n + co) * k3;
            const T* gyc = gy + co * out_sz;
            for (Index kz = 0; kz < k; ++kz)
              for (Index ky = 0; ky < k; ++ky)
                for (Index kx = 0; kx < k; ++kx)
                  gwk[(kz * k + ky) * k + kx] += correlate_tap(g, kz, ky, kx, gyc, xc);
          }
        });
      }
    });
  }
  return out;
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, int, int);
template Tensor<float> conv_transpose3d(const Tensor<float>&, const Tensor<float>&, int, int, int);
template Tensor<double> conv_transpose3d(const Tensor<double>&, const Tensor<double>&, int, int, int);

}  // namespace voxseg
