#pragma once

#include <cstddef>

// Dense kernels behind the tensor ops. Two implementations share one
// signature: `serial` is the straightforward reference kept for testing and
// benchmarking, `parallel` is the cache-friendly OpenMP version the library
// calls. Every parallel kernel assigns each output element to exactly one
// thread and accumulates in a fixed order, so results do not depend on the
// thread count.
namespace aaf::kernels {

enum class Trans { No, Yes };

struct ConvGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch_size() const { return kernel * kernel * channels; }
};

namespace serial {

// C[M x N] = op(A) * op(B), or C += ... when accumulate is set.
// A is M x K (K x M when transposed), B is K x N (N x K when transposed).
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

// HWC image -> (out_h * out_w) x (kernel * kernel * channels) patch matrix.
void im2col(const ConvGeometry& g, const double* image, double* cols);

// Adjoint of im2col: adds patch-matrix entries back onto the HWC image.
void col2im(const ConvGeometry& g, const double* cols, double* image);

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);
void im2col(const ConvGeometry& g, const double* image, double* cols);
void col2im(const ConvGeometry& g, const double* cols, double* image);

}  // namespace parallel

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace aaf::kernels
