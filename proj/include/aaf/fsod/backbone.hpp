#pragma once

#include <string>
#include <vector>

#include "aaf/operators.hpp"
#include "aaf/random.hpp"

namespace aaf::fsod {

struct BackboneSpec {
  /// Output channels of the four 3x3 conv blocks; the first three stride 2.
  std::vector<std::size_t> widths = {8, 16, 32, 64};
  /// Adds a stride-2 block after the last one (8x8 -> 4x4 for a 64x64 input).
  bool second_level = false;

  bool operator==(const BackboneSpec&) const = default;
};

struct ConvBlock {
  Tensor weight;  // (9 * c_in) x c_out
  Tensor bias;    // 1 x c_out
  std::size_t stride = 1;
};

/// Shared between query images and support crops.
class Backbone {
 public:
  static Backbone init(const BackboneSpec& spec, Rng& rng);

  /// H x W x 3 image -> one [positions x d] map per pyramid level.
  std::vector<FeatureMap> forward_levels(const Tensor& image) const;
  FeatureMap forward(const Tensor& image) const { return forward_levels(image).front(); }

  std::size_t channels() const { return blocks_.back().bias.size(); }
  /// Total downsampling of the first level.
  std::size_t stride() const;
  const BackboneSpec& spec() const { return spec_; }

  void append_named(std::vector<NamedParam>& out, const std::string& prefix) const;

 private:
  BackboneSpec spec_;
  std::vector<ConvBlock> blocks_;
  std::vector<ConvBlock> extra_;
};

}  // namespace aaf::fsod
