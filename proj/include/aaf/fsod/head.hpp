#pragma once

#include <string>
#include <vector>

#include "aaf/fsod/geometry.hpp"
#include "aaf/operators.hpp"
#include "aaf/random.hpp"

namespace aaf::fsod {

/// Cell layout of a feature map over the image: cell p covers row p / cols,
/// column p % cols, and its center sits at ((col + 0.5) * stride, (row + 0.5) * stride).
struct Grid {
  std::size_t rows = 8;
  std::size_t cols = 8;
  double stride = 8.0;

  std::size_t cells() const { return rows * cols; }
  double center_x(std::size_t p) const { return (static_cast<double>(p % cols) + 0.5) * stride; }
  double center_y(std::size_t p) const { return (static_cast<double>(p / cols) + 0.5) * stride; }
};

/// Column layout of head outputs.
enum HeadColumn : std::size_t { kLogit = 0, kLeft, kTop, kRight, kBottom, kHeadColumns };

/// Per-cell classifier and box regressor shared by every class:
/// d -> hidden (ReLU) -> [logit, l, t, r, b]. Box offsets are stride * exp(raw).
class Head {
 public:
  static Head init(std::size_t in_channels, std::size_t hidden, Rng& rng, double prior = 0.01);
  static Head zeros(std::size_t in_channels, std::size_t hidden);

  /// [cells x d] -> [cells x 5] raw outputs.
  Tensor forward(const FeatureMap& features) const;

  void append_named(std::vector<NamedParam>& out, const std::string& prefix) const;
  std::size_t in_channels() const { return w1_.dim(0); }

 private:
  Tensor w1_, b1_, w2_, b2_;
};

/// Scored boxes of one class decoded from raw head outputs, clipped to the image.
struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};
std::vector<ScoredBox> decode(const Tensor& raw, const Grid& grid, double image_size,
                              double min_score = 0.0);
BoundingBox decode_cell(std::span<const double> raw_row, const Grid& grid, std::size_t cell);

}  // namespace aaf::fsod
