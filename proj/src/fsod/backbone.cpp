#include "aaf/fsod/backbone.hpp"

#include <cmath>

namespace aaf::fsod {

namespace {

ConvBlock make_block(Rng& rng, std::size_t c_in, std::size_t c_out, std::size_t stride) {
  // He initialization for ReLU.
  const std::size_t fan_in = 9 * c_in;
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> w(fan_in * c_out);
  for (double& x : w) x = sd * rng.normal();
  return {Tensor::parameter({fan_in, c_out}, std::move(w)),
          Tensor::parameter({1, c_out}, std::vector<double>(c_out, 0.0)), stride};
}

Tensor run(const ConvBlock& b, const Tensor& x) {
  return relu(conv2d(x, b.weight, b.bias, 3, b.stride, 1));
}

FeatureMap flatten(const Tensor& x) { return reshape(x, {x.dim(0) * x.dim(1), x.dim(2)}); }

}  // namespace

Backbone Backbone::init(const BackboneSpec& spec, Rng& rng) {
  if (spec.widths.size() != 4) throw std::invalid_argument("Backbone: expected 4 block widths");
  Backbone b;
  b.spec_ = spec;
  std::size_t c_in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    b.blocks_.push_back(make_block(rng, c_in, spec.widths[i], i < 3 ? 2 : 1));
    c_in = spec.widths[i];
  }
  if (spec.second_level) b.extra_.push_back(make_block(rng, c_in, c_in, 2));
  return b;
}

std::size_t Backbone::stride() const {
  std::size_t s = 1;
  for (const ConvBlock& b : blocks_) s *= b.stride;
  return s;
}

std::vector<FeatureMap> Backbone::forward_levels(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("backbone: expected an HxWx3 image, got " + shape_str(image.shape()));
  }
  // Center pixel values.
  Tensor x = sub(image, Tensor::full(image.shape(), 0.5));
  for (const ConvBlock& b : blocks_) x = run(b, x);
  std::vector<FeatureMap> levels = {flatten(x)};
  for (const ConvBlock& b : extra_) {
    x = run(b, x);
    levels.push_back(flatten(x));
  }
  return levels;
}

void Backbone::append_named(std::vector<NamedParam>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".weight", blocks_[i].weight});
    out.push_back({prefix + "conv" + std::to_string(i) + ".bias", blocks_[i].bias});
  }
  for (std::size_t i = 0; i < extra_.size(); ++i) {
    out.push_back({prefix + "level2.conv" + std::to_string(i) + ".weight", extra_[i].weight});
    out.push_back({prefix + "level2.conv" + std::to_string(i) + ".bias", extra_[i].bias});
  }
}

}  // namespace aaf::fsod
