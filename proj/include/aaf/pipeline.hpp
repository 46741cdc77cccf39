#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aaf/operators.hpp"

namespace aaf {

enum class Order { AlignThenAttend, AttendThenAlign };
enum class ShotsAggregation { MeanFeatures, MeanOutputs };

struct AlignmentSpec {
  AffinityKind query;    // query re-expressed on the support grid
  AffinityKind support;  // support re-expressed on the query grid
  // When set, the support is globally pooled and broadcast to the query
  // extent instead of aligned. Requires support == Identity.
  std::optional<PoolMode> support_pool;
  bool operator==(const AlignmentSpec&) const = default;
};

struct AttentionSpec {
  AttentionKind query;
  AttentionKind support;
  bool operator==(const AttentionSpec&) const = default;
};

/// One composition of alignment, attention and fusion.
struct PipelineConfig {
  Order order = Order::AlignThenAttend;
  AlignmentSpec alignment;
  AttentionSpec attention;
  FusionKind fusion;
  ShotsAggregation shots_aggregation = ShotsAggregation::MeanFeatures;

  bool operator==(const PipelineConfig&) const = default;
};

/// Softmax affinity scale used by the presets: 1/sqrt(64) for the default
/// 64-channel backbone.
inline constexpr double kPresetSoftmaxScale = 0.125;

/// Catalog of compared methods: frw, dana_lite, mfrcn_lite, drl.
PipelineConfig preset(std::string_view name);
const std::vector<std::string>& preset_names();

/// Channels of the class-specific maps for d-channel inputs.
std::size_t output_channels(const PipelineConfig& config, std::size_t channels);

/// Trainable state owned by a pipeline (the fusion post-maps).
struct PipelineParams {
  FusionParams fusion;

  static PipelineParams init(const PipelineConfig& config, std::size_t channels, Rng& rng);
  std::vector<NamedParam> named(const std::string& prefix = "pipeline.") const;
};

/// Support shots per class id, K >= 1 each.
using ClassSupports = std::map<int, std::vector<FeatureMap>>;
/// One map per class, all with the query's spatial extent.
using ClassSpecificFeatures = std::map<int, FeatureMap>;

FeatureMap aaf_forward_class(const PipelineConfig& config, const PipelineParams& params,
                             const FeatureMap& query, std::span<const FeatureMap> shots);

ClassSpecificFeatures aaf_forward(const PipelineConfig& config, const PipelineParams& params,
                                  const FeatureMap& query, const ClassSupports& supports);

struct LevelInput {
  FeatureMap query;
  ClassSupports supports;
};

/// aaf_forward per pyramid level with the same parameters.
std::vector<ClassSpecificFeatures> multiscale_forward(const PipelineConfig& config,
                                                      const PipelineParams& params,
                                                      std::span<const LevelInput> levels);

}  // namespace aaf
