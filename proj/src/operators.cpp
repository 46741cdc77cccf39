#include "aaf/operators.hpp"

#include <string>

namespace aaf {

namespace {

void require_map(const FeatureMap& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a [positions x channels] map, got " +
                     shape_str(t.shape()));
  }
}

void require_same_channels(const FeatureMap& phi, const FeatureMap& rho, const char* op) {
  require_map(phi, op);
  require_map(rho, op);
  if (phi.dim(1) != rho.dim(1)) {
    throw ShapeError(std::string(op) + ": channel counts differ: " + shape_str(phi.shape()) +
                     " vs " + shape_str(rho.shape()));
  }
}

}  // namespace

std::size_t FusionKind::output_channels(std::size_t channels) const {
  if (components.empty()) return channels;
  std::size_t total = 0;
  for (const FusionComponent& c : components) total += c.output_channels(channels);
  return total;
}

FusionParams FusionParams::init(const FusionKind& kind, std::size_t channels, Rng& rng,
                                double noise) {
  FusionParams params;
  for (const FusionComponent& c : kind.components) {
    if (!c.learnable) {
      params.post_maps.emplace_back();
      continue;
    }
    const std::size_t width = c.output_channels(channels);
    std::vector<double> w(width * width);
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t j = 0; j < width; ++j)
        w[i * width + j] = (i == j ? 1.0 : 0.0) + noise * rng.normal();
    params.post_maps.push_back(PostMap{Tensor::parameter({width, width}, std::move(w)),
                                       Tensor::parameter({1, width},
                                                         std::vector<double>(width, 0.0))});
  }
  return params;
}

void FusionParams::append_named(std::vector<NamedParam>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < post_maps.size(); ++i) {
    if (!post_maps[i]) continue;
    const std::string base = prefix + "psi" + std::to_string(i);
    out.push_back({base + ".weight", post_maps[i]->weight});
    out.push_back({base + ".bias", post_maps[i]->bias});
  }
}

Tensor build_affinity(const AffinityKind& kind, const FeatureMap& phi, const FeatureMap& rho) {
  require_same_channels(phi, rho, "build_affinity");
  switch (kind.variant) {
    case AffinityKind::Variant::Identity:
      if (phi.dim(0) != rho.dim(0)) {
        throw ShapeError("build_affinity: identity affinity needs equal spatial extents, got " +
                         shape_str(phi.shape()) + " and " + shape_str(rho.shape()));
      }
      return Tensor::identity(phi.dim(0));
    case AffinityKind::Variant::DotProduct:
      return matmul(phi, transpose(rho));
    case AffinityKind::Variant::SoftmaxDotProduct:
      return softmax(scale(matmul(phi, transpose(rho)), kind.scale), 0);
  }
  return {};
}

FeatureMap align(const FeatureMap& phi, const FeatureMap& rho, const AffinityKind& kind) {
  require_same_channels(phi, rho, "align");
  if (kind.is_identity()) return phi;
  return matmul(transpose(build_affinity(kind, phi, rho)), phi);
}

FeatureMap attend(const FeatureMap& phi, const FeatureMap& rho, const AttentionKind& kind) {
  require_same_channels(phi, rho, "attend");
  switch (kind.variant) {
    case AttentionKind::Variant::None:
      return phi;
    case AttentionKind::Variant::SupportPoolReweight:
      return mul(phi, global_pool(rho, kind.pool));
    case AttentionKind::Variant::BackgroundAttenuation:
      return mul(phi, sigmoid(global_pool(phi, PoolMode::Avg)));
    case AttentionKind::Variant::SimilarityReweight: {
      // Similarity of every rho position to phi, averaged over phi's
      // positions, turned into weights over rho's rows.
      const Tensor similarity = matmul(phi, transpose(rho));
      const Tensor weights = softmax(global_pool(similarity, PoolMode::Avg), 1);
      return mul(phi, matmul(weights, rho));
    }
  }
  return phi;
}

FeatureMap fuse(const FeatureMap& phi, const FeatureMap& rho, const FusionKind& kind,
                const FusionParams* params) {
  require_same_channels(phi, rho, "fuse");
  // No components: the query passes through and the support extent is free.
  if (kind.components.empty()) return phi;
  if (phi.dim(0) != rho.dim(0)) {
    throw ShapeError("fuse: spatial extents differ (" + shape_str(phi.shape()) + " vs " +
                     shape_str(rho.shape()) +
                     "); fusion needs equal extents, so align the support to the query or "
                     "declare support pooling");
  }
  if (params && params->post_maps.size() != kind.components.size()) {
    throw ShapeError("fuse: parameters do not match the fusion components");
  }

  std::vector<Tensor> parts;
  parts.reserve(kind.components.size());
  for (std::size_t i = 0; i < kind.components.size(); ++i) {
    const FusionComponent& c = kind.components[i];
    Tensor part;
    switch (c.op) {
      case FusionComponent::Op::Mul: part = mul(phi, rho); break;
      case FusionComponent::Op::Sub: part = sub(phi, rho); break;
      case FusionComponent::Op::Add: part = add(phi, rho); break;
      case FusionComponent::Op::Identity: part = phi; break;
      case FusionComponent::Op::Cat: {
        const Tensor pair[] = {phi, rho};
        part = concat_channels(pair);
        break;
      }
    }
    if (c.learnable) {
      if (!params || !params->post_maps[i]) {
        throw std::invalid_argument("fuse: component " + std::to_string(i) +
                                    " is learnable but no post-map parameters were given");
      }
      part = pointwise_linear(part, params->post_maps[i]->weight, params->post_maps[i]->bias);
    }
    parts.push_back(std::move(part));
  }
  return concat_channels(parts);
}

}  // namespace aaf
