#include <algorithm>
#include <cmath>

#include "borderflow/kernels.hpp"

namespace borderflow::kernels::serial {

void gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        const double b = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
        s += a * b;
      }
      double& c = g.c[i * g.ldc + j];
      c = g.beta == 0.0 ? g.alpha * s : g.alpha * s + g.beta * c;
    }
  }
}

void im2col(const ConvGeometry& geo, const double* image, double* columns) {
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t kk = geo.kernel * geo.kernel;
  for (std::size_t row = 0; row < geo.channels * kk; ++row) {
    const std::size_t c = row / kk, ki = (row % kk) / geo.kernel, kj = row % geo.kernel;
    double* out = columns + row * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const long iy = static_cast<long>(y * geo.stride + ki) - static_cast<long>(geo.pad);
      for (std::size_t x = 0; x < ow; ++x) {
        const long ix = static_cast<long>(x * geo.stride + kj) - static_cast<long>(geo.pad);
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.height) &&
                            ix < static_cast<long>(geo.width);
        out[y * ow + x] = inside ? image[(c * geo.height + iy) * geo.width + ix] : 0.0;
      }
    }
  }
}

void col2im_add(const ConvGeometry& geo, const double* columns, double* image) {
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t kk = geo.kernel * geo.kernel;
  for (std::size_t c = 0; c < geo.channels; ++c) {
    for (std::size_t r = 0; r < kk; ++r) {
      const std::size_t ki = r / geo.kernel, kj = r % geo.kernel;
      const double* in = columns + (c * kk + r) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        const long iy = static_cast<long>(y * geo.stride + ki) - static_cast<long>(geo.pad);
        if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
        for (std::size_t x = 0; x < ow; ++x) {
          const long ix = static_cast<long>(x * geo.stride + kj) - static_cast<long>(geo.pad);
          if (ix < 0 || ix >= static_cast<long>(geo.width)) continue;
          image[(c * geo.height + iy) * geo.width + ix] += in[y * ow + x];
        }
      }
    }
  }
}

namespace {
struct Tap {
  std::size_t i0, i1;
  double frac;
};

// Half-pixel-centre sampling (corners not aligned).
Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  auto i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 > in - 1) i0 = in - 1;
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}
}  // namespace

void upsample_bilinear(const double* src, std::size_t planes, std::size_t h, std::size_t w, std::size_t out_h,
                       std::size_t out_w, double* dst) {
  for (std::size_t p = 0; p < planes; ++p) {
    const double* s = src + p * h * w;
    double* d = dst + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap ty = source_tap(y, h, out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap tx = source_tap(x, w, out_w);
        const double top = s[ty.i0 * w + tx.i0] * (1.0 - tx.frac) + s[ty.i0 * w + tx.i1] * tx.frac;
        const double bot = s[ty.i1 * w + tx.i0] * (1.0 - tx.frac) + s[ty.i1 * w + tx.i1] * tx.frac;
        d[y * out_w + x] = top * (1.0 - ty.frac) + bot * ty.frac;
      }
    }
  }
}

void upsample_bilinear_adjoint_add(const double* grad_out, std::size_t planes, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w, double* grad_in) {
  for (std::size_t p = 0; p < planes; ++p) {
    const double* g = grad_out + p * out_h * out_w;
    double* d = grad_in + p * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap ty = source_tap(y, h, out_h);
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap tx = source_tap(x, w, out_w);
        const double v = g[y * out_w + x];
        d[ty.i0 * w + tx.i0] += v * (1.0 - ty.frac) * (1.0 - tx.frac);
        d[ty.i0 * w + tx.i1] += v * (1.0 - ty.frac) * tx.frac;
        d[ty.i1 * w + tx.i0] += v * ty.frac * (1.0 - tx.frac);
        d[ty.i1 * w + tx.i1] += v * ty.frac * tx.frac;
      }
    }
  }
}

}  // namespace borderflow::kernels::serial
