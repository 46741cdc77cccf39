#include "aaf/fsod/head.hpp"

#include <algorithm>
#include <cmath>

namespace aaf::fsod {

Head Head::init(std::size_t in_channels, std::size_t hidden, Rng& rng, double prior) {
  Head h;
  std::vector<double> w1(in_channels * hidden), w2(hidden * kHeadColumns);
  const double sd1 = std::sqrt(2.0 / static_cast<double>(in_channels));
  for (double& x : w1) x = sd1 * rng.normal();
  for (double& x : w2) x = 0.01 * rng.normal();
  std::vector<double> b2(kHeadColumns, 0.0);
  // Start every cell at a low foreground probability.
  b2[kLogit] = -std::log((1.0 - prior) / prior);
  h.w1_ = Tensor::parameter({in_channels, hidden}, std::move(w1));
  h.b1_ = Tensor::parameter({1, hidden}, std::vector<double>(hidden, 0.0));
  h.w2_ = Tensor::parameter({hidden, kHeadColumns}, std::move(w2));
  h.b2_ = Tensor::parameter({1, kHeadColumns}, std::move(b2));
  return h;
}

Head Head::zeros(std::size_t in_channels, std::size_t hidden) {
  Head h;
  h.w1_ = Tensor::parameter({in_channels, hidden}, std::vector<double>(in_channels * hidden));
  h.b1_ = Tensor::parameter({1, hidden}, std::vector<double>(hidden));
  h.w2_ = Tensor::parameter({hidden, kHeadColumns}, std::vector<double>(hidden * kHeadColumns));
  h.b2_ = Tensor::parameter({1, kHeadColumns}, std::vector<double>(kHeadColumns));
  return h;
}

Tensor Head::forward(const FeatureMap& features) const {
  return pointwise_linear(relu(pointwise_linear(features, w1_, b1_)), w2_, b2_);
}

void Head::append_named(std::vector<NamedParam>& out, const std::string& prefix) const {
  out.push_back({prefix + "hidden.weight", w1_});
  out.push_back({prefix + "hidden.bias", b1_});
  out.push_back({prefix + "out.weight", w2_});
  out.push_back({prefix + "out.bias", b2_});
}

BoundingBox decode_cell(std::span<const double> r, const Grid& grid, std::size_t cell) {
  const double cx = grid.center_x(cell), cy = grid.center_y(cell);
  return {cx - grid.stride * std::exp(r[kLeft]), cy - grid.stride * std::exp(r[kTop]),
          cx + grid.stride * std::exp(r[kRight]), cy + grid.stride * std::exp(r[kBottom])};
}

std::vector<ScoredBox> decode(const Tensor& raw, const Grid& grid, double image_size,
                              double min_score) {
  if (raw.rank() != 2 || raw.dim(0) != grid.cells() || raw.dim(1) != kHeadColumns) {
    throw ShapeError("decode: head output " + shape_str(raw.shape()) + " does not fit a " +
                     std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  }
  std::vector<ScoredBox> out;
  const auto data = raw.data();
  for (std::size_t p = 0; p < grid.cells(); ++p) {
    const auto row = data.subspan(p * kHeadColumns, kHeadColumns);
    const double score = 1.0 / (1.0 + std::exp(-row[kLogit]));
    if (score < min_score) continue;
    BoundingBox b = decode_cell(row, grid, p);
    b.x_min = std::clamp(b.x_min, 0.0, image_size);
    b.y_min = std::clamp(b.y_min, 0.0, image_size);
    b.x_max = std::clamp(b.x_max, 0.0, image_size);
    b.y_max = std::clamp(b.y_max, 0.0, image_size);
    if (b.valid()) out.push_back({b, score});
  }
  return out;
}

}  // namespace aaf::fsod
