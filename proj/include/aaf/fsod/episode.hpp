#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "aaf/fsod/scene.hpp"

namespace aaf::fsod {

enum class Phase { Base, Finetune };

/// Support crop taken from a scene object.
struct SupportCrop {
  Tensor image;  // 32 x 32 x 3
  BoundingBox source_box;
};

/// The k annotated examples available for each novel class, drawn once and
/// reused unchanged by every fine-tuning episode and by evaluation. Entry i
/// does not depend on k, so a k = 1 registry is a prefix of a k = 5 one.
struct NovelRegistry {
  int k = 0;
  std::map<int, std::vector<SyntheticScene>> scenes;  // one novel object each
  std::map<int, std::vector<SupportCrop>> crops;

  static NovelRegistry build(std::uint64_t seed, const ClassSplit& split, int k,
                             const LayoutParams& layout = {});
};

struct Episode {
  Phase phase = Phase::Base;
  std::vector<int> classes;  // C_ep
  std::map<int, std::vector<SupportCrop>> support;
  /// Annotations restricted to C_ep.
  std::vector<SyntheticScene> queries;
};

struct EpisodeSpec {
  int n_way = 5;
  int shots = 1;
  int queries_per_class = 50;
};

/// Base episodes draw C_ep from base classes only and never render novel
/// objects. Fine-tuning episodes take every novel class plus random base
/// classes up to n_way; novel support and novel queries come from the
/// registry (shots and queries_per_class are capped by registry.k for them).
Episode sample_episode(Rng& rng, const ClassSplit& split, Phase phase, const EpisodeSpec& spec,
                       const NovelRegistry* registry = nullptr, const LayoutParams& layout = {});

/// Fresh support crops of a base class.
std::vector<SupportCrop> sample_support(Rng& rng, int cls, std::span<const int> scene_classes,
                                        int shots, const LayoutParams& layout = {});

/// Drops annotations outside `classes`.
SyntheticScene restrict_to(SyntheticScene scene, std::span<const int> classes);

}  // namespace aaf::fsod
