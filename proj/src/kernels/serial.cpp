#include "aaf/kernels.hpp"

namespace aaf::kernels::serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t patch = g.patch_size();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols + (oy * ow + ox) * patch;
      std::size_t idx = 0;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          const long x = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                              x < static_cast<long>(g.width);
          for (std::size_t ch = 0; ch < g.channels; ++ch) {
            row[idx++] = inside ? image[(static_cast<std::size_t>(y) * g.width +
                                         static_cast<std::size_t>(x)) * g.channels + ch]
                                : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t patch = g.patch_size();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* row = cols + (oy * ow + ox) * patch;
      std::size_t idx = 0;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long y = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          const long x = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                              x < static_cast<long>(g.width);
          for (std::size_t ch = 0; ch < g.channels; ++ch, ++idx) {
            if (inside) {
              image[(static_cast<std::size_t>(y) * g.width + static_cast<std::size_t>(x)) *
                        g.channels + ch] += row[idx];
            }
          }
        }
      }
    }
  }
}

}  // namespace aaf::kernels::serial
