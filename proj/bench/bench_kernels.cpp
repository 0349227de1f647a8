// Serial reference kernels against their OpenMP counterparts.
// Threads default to OMP_NUM_THREADS; results are bit-identical either way.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "borderflow/kernels.hpp"

namespace k = borderflow::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <void (*Gemm)(const k::GemmArgs&)>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  k::GemmArgs g;
  g.m = g.n = g.k = n;
  g.a = a.data();
  g.lda = n;
  g.b = b.data();
  g.ldb = n;
  g.c = c.data();
  g.ldc = n;
  for (auto _ : state) {
    Gemm(g);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <void (*Im2col)(const k::ConvGeometry&, const double*, double*)>
void BM_im2col(benchmark::State& state) {
  k::ConvGeometry geo;
  geo.channels = static_cast<std::size_t>(state.range(0));
  geo.height = geo.width = 64;
  geo.kernel = 3;
  geo.pad = 1;
  const auto image = random_vector(geo.channels * 64 * 64, 3);
  std::vector<double> cols(geo.channels * 9 * geo.out_height() * geo.out_width());
  for (auto _ : state) {
    Im2col(geo, image.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

template <void (*Up)(const double*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, double*)>
void BM_upsample(benchmark::State& state) {
  const auto planes = static_cast<std::size_t>(state.range(0));
  const auto src = random_vector(planes * 16 * 16, 4);
  std::vector<double> dst(planes * 64 * 64);
  for (auto _ : state) {
    Up(src.data(), planes, 16, 16, 64, 64, dst.data());
    benchmark::DoNotOptimize(dst.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<k::parallel::gemm>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_im2col<k::serial::im2col>)->Name("im2col/serial")->Arg(8)->Arg(32);
BENCHMARK(BM_im2col<k::parallel::im2col>)->Name("im2col/parallel")->Arg(8)->Arg(32);
BENCHMARK(BM_upsample<k::serial::upsample_bilinear>)->Name("upsample/serial")->Arg(16)->Arg(64);
BENCHMARK(BM_upsample<k::parallel::upsample_bilinear>)->Name("upsample/parallel")->Arg(16)->Arg(64);

BENCHMARK_MAIN();
