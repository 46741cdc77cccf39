// Serial reference vs parallel kernels on the shapes the detector runs.
//   ./bench_kernels --benchmark_filter=gemm

#include <benchmark/benchmark.h>

#include <vector>

#include "aaf/kernels.hpp"
#include "aaf/random.hpp"

using namespace aaf;
using namespace aaf::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

using GemmFn = void (*)(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                        const double*, double*, bool);

template <GemmFn F>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const Trans tb = state.range(3) ? Trans::Yes : Trans::No;
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    F(Trans::No, tb, m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * n * k, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

// conv1 of a 64x64 query, conv3 at 8x8, the head's hidden layer, a 256^3 block.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({1024, 16, 72, 0})->Args({64, 64, 288, 0})->Args({64, 32, 64, 0})
      ->Args({256, 256, 256, 0})->Args({256, 256, 256, 1});
}

template <void (*F)(const ConvGeometry&, const double*, double*)>
void BM_im2col(benchmark::State& state) {
  ConvGeometry g;
  g.height = g.width = static_cast<std::size_t>(state.range(0));
  g.channels = static_cast<std::size_t>(state.range(1));
  g.stride = 2;
  const auto image = filled(g.height * g.width * g.channels, 3);
  std::vector<double> cols(g.out_height() * g.out_width() * g.patch_size());
  for (auto _ : state) {
    F(g, image.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<serial::gemm>)->Name("gemm/serial")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<parallel::gemm>)->Name("gemm/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_im2col<serial::im2col>)->Name("im2col/serial")->Args({64, 3})->Args({32, 8})->Args({16, 16});
BENCHMARK(BM_im2col<parallel::im2col>)->Name("im2col/parallel")->Args({64, 3})->Args({32, 8})->Args({16, 16});

BENCHMARK_MAIN();
