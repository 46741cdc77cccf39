#include "aaf/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(AAF_HAVE_OPENMP)
#include <omp.h>
#endif

namespace aaf::kernels {

int max_threads() {
#if defined(AAF_HAVE_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 8;

// One output tile held in registers for the whole k loop. `b` is K x N.
template <std::size_t R, std::size_t C>
void tile(Trans ta, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, std::size_t i0, std::size_t j0, bool accumulate) {
  double acc[R][C] = {};
  for (std::size_t p = 0; p < k; ++p) {
    double av[R];
    for (std::size_t r = 0; r < R; ++r)
      av[r] = ta == Trans::No ? a[(i0 + r) * k + p] : a[p * m + i0 + r];
    const double* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t q = 0; q < C; ++q) acc[r][q] += av[r] * brow[q];
  }
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = c + (i0 + r) * n + j0;
    for (std::size_t q = 0; q < C; ++q) crow[q] = accumulate ? crow[q] + acc[r][q] : acc[r][q];
  }
}

// Ragged edge tiles.
void edge(Trans ta, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, std::size_t i0, std::size_t rows, std::size_t j0,
          std::size_t cols, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) {
      const std::size_t i = i0 + r, j = j0 + q;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc += (ta == Trans::No ? a[i * k + p] : a[p * m + i]) * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  // Work on a K x N copy of a transposed B so every tile streams rows.
  std::vector<double> packed;
  if (tb == Trans::Yes) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = b[j * k + p];
    b = packed.data();
  }
  const std::size_t row_tiles = (m + kTileRows - 1) / kTileRows;
  const std::size_t full_cols = n - n % kTileCols;
  const bool big = m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (long t = 0; t < static_cast<long>(row_tiles); ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kTileRows;
    const std::size_t rows = std::min(kTileRows, m - i0);
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kTileCols) {
      if (rows == kTileRows) {
        tile<kTileRows, kTileCols>(ta, m, n, k, a, b, c, i0, j0, accumulate);
      } else {
        edge(ta, m, n, k, a, b, c, i0, rows, j0, kTileCols, accumulate);
      }
    }
    if (full_cols < n) edge(ta, m, n, k, a, b, c, i0, rows, full_cols, n - full_cols, accumulate);
  }
}

void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t patch = g.patch_size();
  const long out_rows = static_cast<long>(oh);
#pragma omp parallel for schedule(static) if (oh * ow * patch >= kParallelWork)
  for (long oyy = 0; oyy < out_rows; ++oyy) {
    const std::size_t oy = static_cast<std::size_t>(oyy);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols + (oy * ow + ox) * patch;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long x = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          double* dst = row + (ky * g.kernel + kx) * g.channels;
          if (y < 0 || x < 0 || y >= static_cast<long>(g.height) ||
              x >= static_cast<long>(g.width)) {
            std::fill(dst, dst + g.channels, 0.0);
          } else {
            const double* src = image + (static_cast<std::size_t>(y) * g.width +
                                         static_cast<std::size_t>(x)) * g.channels;
            std::copy(src, src + g.channels, dst);
          }
        }
      }
    }
  }
}

// Gather form: every image pixel sums the patch entries that read it, so
// threads never write to the same location.
void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t patch = g.patch_size();
  const long rows = static_cast<long>(g.height);
#pragma omp parallel for schedule(static) if (oh * ow * patch >= kParallelWork)
  for (long yy = 0; yy < rows; ++yy) {
    for (std::size_t x = 0; x < g.width; ++x) {
      double* dst = image + (static_cast<std::size_t>(yy) * g.width + x) * g.channels;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const long ny = yy + static_cast<long>(g.pad) - static_cast<long>(ky);
        if (ny < 0 || ny % static_cast<long>(g.stride) != 0) continue;
        const std::size_t oy = static_cast<std::size_t>(ny) / g.stride;
        if (oy >= oh) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long nx = static_cast<long>(x + g.pad) - static_cast<long>(kx);
          if (nx < 0 || nx % static_cast<long>(g.stride) != 0) continue;
          const std::size_t ox = static_cast<std::size_t>(nx) / g.stride;
          if (ox >= ow) continue;
          const double* src = cols + (oy * ow + ox) * patch + (ky * g.kernel + kx) * g.channels;
          for (std::size_t ch = 0; ch < g.channels; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace parallel
}  // namespace aaf::kernels
