#pragma once

// Dense numeric kernels behind the autodiff primitives.
//
// Two implementations are kept side by side:
//   serial::   plain loops, the reference used by tests and benchmarks.
//   parallel:: OpenMP versions that split work over independent outputs.
// Every output element is reduced in the same order in both, so the two
// produce bit-identical results for any thread count (build uses
// -ffp-contract=off). The unqualified functions dispatch to parallel::.

#include <cstddef>

namespace borderflow::kernels {

// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major, op = transpose when flag set.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  double alpha = 1.0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double beta = 0.0;
  double* c = nullptr;
  std::size_t ldc = 0;
};

struct ConvGeometry {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;
  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

namespace serial {
void gemm(const GemmArgs& g);
void im2col(const ConvGeometry& geo, const double* image, double* columns);
void col2im_add(const ConvGeometry& geo, const double* columns, double* image);
void upsample_bilinear(const double* src, std::size_t planes, std::size_t h, std::size_t w,
                       std::size_t out_h, std::size_t out_w, double* dst);
void upsample_bilinear_adjoint_add(const double* grad_out, std::size_t planes, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w, double* grad_in);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& g);
void im2col(const ConvGeometry& geo, const double* image, double* columns);
void col2im_add(const ConvGeometry& geo, const double* columns, double* image);
void upsample_bilinear(const double* src, std::size_t planes, std::size_t h, std::size_t w,
                       std::size_t out_h, std::size_t out_w, double* dst);
void upsample_bilinear_adjoint_add(const double* grad_out, std::size_t planes, std::size_t h, std::size_t w,
                                   std::size_t out_h, std::size_t out_w, double* grad_in);
}  // namespace parallel

using parallel::col2im_add;
using parallel::gemm;
using parallel::im2col;
using parallel::upsample_bilinear;
using parallel::upsample_bilinear_adjoint_add;

int max_threads();
void set_threads(int n);

}  // namespace borderflow::kernels
