#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "aaf/random.hpp"
#include "aaf/tensor.hpp"

// Alignment, attention and fusion operator families. Feature maps are
// [positions x channels] matrices.
namespace aaf {

using FeatureMap = Tensor;

/// How the affinity between two maps' positions is scored.
struct AffinityKind {
  enum class Variant { Identity, DotProduct, SoftmaxDotProduct };
  Variant variant = Variant::Identity;
  double scale = 1.0;  // used by SoftmaxDotProduct only

  static AffinityKind identity() { return {}; }
  static AffinityKind dot_product() { return {Variant::DotProduct, 1.0}; }
  static AffinityKind softmax_dot(double scale) { return {Variant::SoftmaxDotProduct, scale}; }
  bool is_identity() const { return variant == Variant::Identity; }
  bool operator==(const AffinityKind&) const = default;
};

struct AttentionKind {
  enum class Variant { None, SupportPoolReweight, BackgroundAttenuation, SimilarityReweight };
  Variant variant = Variant::None;
  PoolMode pool = PoolMode::Max;  // used by SupportPoolReweight only

  static AttentionKind none() { return {}; }
  static AttentionKind support_pool_reweight(PoolMode pool) {
    return {Variant::SupportPoolReweight, pool};
  }
  static AttentionKind background_attenuation() { return {Variant::BackgroundAttenuation}; }
  static AttentionKind similarity_reweight() { return {Variant::SimilarityReweight}; }
  bool operator==(const AttentionKind&) const = default;
};

struct FusionComponent {
  enum class Op { Mul, Sub, Add, Identity, Cat };
  Op op = Op::Identity;
  bool learnable = false;  // followed by a per-position linear post-map

  /// Channels produced for inputs with `channels` channels each.
  std::size_t output_channels(std::size_t channels) const {
    return op == Op::Cat ? 2 * channels : channels;
  }
  bool operator==(const FusionComponent&) const = default;
};

/// Point-wise components whose results are concatenated along channels.
/// An empty list means no fusion: the query map passes through.
struct FusionKind {
  std::vector<FusionComponent> components;

  std::size_t arity() const { return components.size(); }
  std::size_t output_channels(std::size_t channels) const;
  bool operator==(const FusionKind&) const = default;
};

/// Trainable post-maps of a FusionKind, one slot per component (empty for
/// non-learnable components).
struct FusionParams {
  struct PostMap {
    Tensor weight;
    Tensor bias;
  };
  std::vector<std::optional<PostMap>> post_maps;

  /// Identity weights plus N(0, noise^2), zero bias.
  static FusionParams init(const FusionKind& kind, std::size_t channels, Rng& rng,
                           double noise = 0.01);
  void append_named(std::vector<NamedParam>& out, const std::string& prefix) const;
};

/// [m x n] affinity between the positions of phi [m x d] and rho [n x d].
/// SoftmaxDotProduct normalizes over phi's positions (axis 0).
Tensor build_affinity(const AffinityKind& kind, const FeatureMap& phi, const FeatureMap& rho);

/// A(phi, rho)^T phi: phi re-expressed on rho's grid. Identity passes phi
/// through untouched.
FeatureMap align(const FeatureMap& phi, const FeatureMap& rho, const AffinityKind& kind);

/// Channel-wise reweighting of phi; phi's spatial extent is preserved.
FeatureMap attend(const FeatureMap& phi, const FeatureMap& rho, const AttentionKind& kind);

/// Requires equal spatial extents. `params` is needed when any component is
/// learnable.
FeatureMap fuse(const FeatureMap& phi, const FeatureMap& rho, const FusionKind& kind,
                const FusionParams* params = nullptr);

}  // namespace aaf
