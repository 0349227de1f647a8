#include <algorithm>
#include <cmath>
#include <vector>

#include "borderflow/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace borderflow::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace parallel {
namespace {

constexpr std::size_t kColumnTile = 256;
constexpr std::size_t kParallelWork = 1 << 15;

// Each C element is reduced over k in ascending order starting from 0.0,
// exactly like the serial triple loop.
void gemm_row(const GemmArgs& g, std::size_t i, std::vector<double>& acc) {
  double* crow = g.c + i * g.ldc;
  for (std::size_t j0 = 0; j0 < g.n; j0 += kColumnTile) {
    const std::size_t j1 = std::min(g.n, j0 + kColumnTile);
    const std::size_t len = j1 - j0;
    if (g.trans_b) {
      for (std::size_t j = j0; j < j1; ++j) {
        const double* brow = g.b + j * g.ldb;
        double s = 0.0;
        if (g.trans_a) {
          for (std::size_t p = 0; p < g.k; ++p) s += g.a[p * g.lda + i] * brow[p];
        } else {
          const double* arow = g.a + i * g.lda;
          for (std::size_t p = 0; p < g.k; ++p) s += arow[p] * brow[p];
        }
        acc[j - j0] = s;
      }
    } else {
      std::fill(acc.begin(), acc.begin() + static_cast<long>(len), 0.0);
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
        const double* brow = g.b + p * g.ldb + j0;
        double* out = acc.data();
        for (std::size_t j = 0; j < len; ++j) out[j] += a * brow[j];
      }
    }
    for (std::size_t j = 0; j < len; ++j) {
      double& c = crow[j0 + j];
      c = g.beta == 0.0 ? g.alpha * acc[j] : g.alpha * acc[j] + g.beta * c;
    }
  }
}

}  // namespace

void gemm(const GemmArgs& g) {
  const std::size_t work = g.m * g.n * g.k;
#pragma omp parallel if (work > kParallelWork)
  {
    std::vector<double> acc(std::min(g.n, kColumnTile));
#pragma omp for schedule(static)
    for (long i = 0; i < static_cast<long>(g.m); ++i) gemm_row(g, static_cast<std::size_t>(i), acc);
  }
}

void im2col(const ConvGeometry& geo, const double* image, double* columns) {
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t kk = geo.kernel * geo.kernel;
  const long rows = static_cast<long>(geo.channels * kk);
#pragma omp parallel for schedule(static) if (rows * oh * ow > kParallelWork)
  for (long row = 0; row < rows; ++row) {
    const std::size_t r = static_cast<std::size_t>(row);
    const std::size_t c = r / kk, ki = (r % kk) / geo.kernel, kj = r % geo.kernel;
    double* out = columns + r * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const long iy = static_cast<long>(y * geo.stride + ki) - static_cast<long>(geo.pad);
      const bool row_inside = iy >= 0 && iy < static_cast<long>(geo.height);
      for (std::size_t x = 0; x < ow; ++x) {
        const long ix = static_cast<long>(x * geo.stride + kj) - static_cast<long>(geo.pad);
        const bool inside = row_inside && ix >= 0 && ix < static_cast<long>(geo.width);
        out[y * ow + x] = inside ? image[(c * geo.height + iy) * geo.width + ix] : 0.0;
      }
    }
  }
}

void col2im_add(const ConvGeometry& geo, const double* columns, double* image) {
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t kk = geo.kernel * geo.kernel;
  const long channels = static_cast<long>(geo.channels);
#pragma omp parallel for schedule(static) if (channels * kk * oh * ow > kParallelWork)
  for (long cl = 0; cl < channels; ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    for (std::size_t r = 0; r < kk; ++r) {
      const std::size_t ki = r / geo.kernel, kj = r % geo.kernel;
      const double* in = columns + (c * kk + r) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        const long iy = static_cast<long>(y * geo.stride + ki) - static_cast<long>(geo.pad);
        if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
        double* dst = image + (c * geo.height + static_cast<std::size_t>(iy)) * geo.width;
        for (std::size_t x = 0; x < ow; ++x) {
          const long ix = static_cast<long>(x * geo.stride + kj) - static_cast<long>(geo.pad);
          if (ix < 0 || ix >= static_cast<long>(geo.width)) continue;
          dst[ix] += in[y * ow + x];
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

Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  auto i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 > in - 1) i0 = in - 1;
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  for (std::size_t i = 0; i < out; ++i) t[i] = source_tap(i, in, out);
  return t;
}
}  // namespace

void upsample_bilinear(const double* src, std::size_t planes, std::size_t h, std::size_t w, std::size_t out_h,
                       std::size_t out_w, double* dst) {
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
#pragma omp parallel for schedule(static) if (planes * out_h * out_w > kParallelWork)
  for (long pl = 0; pl < static_cast<long>(planes); ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    const double* s = src + p * h * w;
    double* d = dst + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = s[a.i0 * w + b.i0] * (1.0 - b.frac) + s[a.i0 * w + b.i1] * b.frac;
        const double bot = s[a.i1 * w + b.i0] * (1.0 - b.frac) + s[a.i1 * w + b.i1] * b.frac;
        d[y * out_w + x] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  }
}

void upsample_bilinear_adjoint_add(const double* grad_out, std::size_t planes, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w, double* grad_in) {
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
#pragma omp parallel for schedule(static) if (planes * out_h * out_w > kParallelWork)
  for (long pl = 0; pl < static_cast<long>(planes); ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    const double* g = grad_out + p * out_h * out_w;
    double* d = grad_in + p * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double v = g[y * out_w + x];
        d[a.i0 * w + b.i0] += v * (1.0 - a.frac) * (1.0 - b.frac);
        d[a.i0 * w + b.i1] += v * (1.0 - a.frac) * b.frac;
        d[a.i1 * w + b.i0] += v * a.frac * (1.0 - b.frac);
        d[a.i1 * w + b.i1] += v * a.frac * b.frac;
      }
    }
  }
}

}  // namespace parallel
}  // namespace borderflow::kernels
