#include "aaf/pipeline.hpp"

#include <stdexcept>
#include <utility>

namespace aaf {

namespace {

using Op = FusionComponent::Op;

struct Pair {
  Tensor query;
  Tensor support;
};

Pair apply_alignment(const AlignmentSpec& spec, const Pair& in) {
  Pair out;
  out.query = align(in.query, in.support, spec.query);
  if (spec.support_pool) {
    if (in.query.dim(1) != in.support.dim(1)) {
      throw ShapeError("support pooling: channel counts differ: " +
                       shape_str(in.query.shape()) + " vs " + shape_str(in.support.shape()));
    }
    out.support = broadcast_rows(global_pool(in.support, *spec.support_pool), in.query.dim(0));
  } else {
    out.support = align(in.support, in.query, spec.support);
  }
  return out;
}

Pair apply_attention(const AttentionSpec& spec, const Pair& in) {
  return {attend(in.query, in.support, spec.query), attend(in.support, in.query, spec.support)};
}

Pair transform_shot(const PipelineConfig& config, const Pair& in) {
  if (config.order == Order::AlignThenAttend) {
    return apply_attention(config.attention, apply_alignment(config.alignment, in));
  }
  return apply_alignment(config.alignment, apply_attention(config.attention, in));
}

}  // namespace

PipelineConfig preset(std::string_view name) {
  PipelineConfig c;
  if (name == "frw") {
    c.attention.query = AttentionKind::support_pool_reweight(PoolMode::Max);
  } else if (name == "dana_lite") {
    c.order = Order::AttendThenAlign;
    c.attention.support = AttentionKind::background_attenuation();
    c.alignment.support = AffinityKind::softmax_dot(kPresetSoftmaxScale);
    c.fusion.components = {{Op::Cat, false}};
  } else if (name == "mfrcn_lite") {
    // Reweighting runs before the learnable fusion maps.
    c.alignment.support = AffinityKind::softmax_dot(kPresetSoftmaxScale);
    c.attention.query = AttentionKind::similarity_reweight();
    c.fusion.components = {{Op::Sub, true}, {Op::Cat, true}};
  } else if (name == "drl") {
    c.alignment.support_pool = PoolMode::Avg;
    c.fusion.components = {{Op::Mul, false}, {Op::Sub, false}, {Op::Identity, false}};
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) +
                                "' (expected frw, dana_lite, mfrcn_lite or drl)");
  }
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"frw", "dana_lite", "mfrcn_lite", "drl"};
  return names;
}

std::size_t output_channels(const PipelineConfig& config, std::size_t channels) {
  return config.fusion.output_channels(channels);
}

PipelineParams PipelineParams::init(const PipelineConfig& config, std::size_t channels,
                                    Rng& rng) {
  return {FusionParams::init(config.fusion, channels, rng)};
}

std::vector<NamedParam> PipelineParams::named(const std::string& prefix) const {
  std::vector<NamedParam> out;
  fusion.append_named(out, prefix + "fusion.");
  return out;
}

FeatureMap aaf_forward_class(const PipelineConfig& config, const PipelineParams& params,
                             const FeatureMap& query, std::span<const FeatureMap> shots) {
  if (shots.empty()) throw std::invalid_argument("aaf_forward: a class needs at least one shot");
  if (query.rank() != 2) {
    throw ShapeError("aaf_forward: query must be [positions x channels], got " +
                     shape_str(query.shape()));
  }
  std::vector<Tensor> queries, supports, outputs;
  for (std::size_t k = 0; k < shots.size(); ++k) {
    try {
      Pair p = transform_shot(config, {query, shots[k]});
      if (config.shots_aggregation == ShotsAggregation::MeanOutputs) {
        outputs.push_back(fuse(p.query, p.support, config.fusion, &params.fusion));
      } else {
        queries.push_back(std::move(p.query));
        supports.push_back(std::move(p.support));
      }
    } catch (const ShapeError& e) {
      throw ShapeError("shot " + std::to_string(k) + ": " + e.what());
    }
  }
  FeatureMap out = config.shots_aggregation == ShotsAggregation::MeanOutputs
                       ? mean_of(outputs)
                       : fuse(mean_of(queries), mean_of(supports), config.fusion, &params.fusion);
  if (out.dim(0) != query.dim(0)) {
    throw ShapeError("aaf_forward: output has " + std::to_string(out.dim(0)) +
                     " positions but the query has " + std::to_string(query.dim(0)) +
                     "; query alignment must keep the query grid");
  }
  return out;
}

ClassSpecificFeatures aaf_forward(const PipelineConfig& config, const PipelineParams& params,
                                  const FeatureMap& query, const ClassSupports& supports) {
  ClassSpecificFeatures out;
  for (const auto& [cls, shots] : supports) {
    try {
      out.emplace(cls, aaf_forward_class(config, params, query, shots));
    } catch (const ShapeError& e) {
      throw ShapeError("class " + std::to_string(cls) + ", " + e.what());
    }
  }
  return out;
}

std::vector<ClassSpecificFeatures> multiscale_forward(const PipelineConfig& config,
                                                      const PipelineParams& params,
                                                      std::span<const LevelInput> levels) {
  std::vector<ClassSpecificFeatures> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    try {
      out.push_back(aaf_forward(config, params, levels[l].query, levels[l].supports));
    } catch (const ShapeError& e) {
      throw ShapeError("level " + std::to_string(l) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace aaf
