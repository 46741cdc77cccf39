#include "aaf/fsod/episode.hpp"

#include <algorithm>
#include <string>

namespace aaf::fsod {

namespace {

std::vector<int> choose(Rng& rng, std::vector<int> pool, std::size_t n) {
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

SupportCrop crop_first(const SyntheticScene& scene) {
  return {crop_resize(scene.image, scene.objects.front().box), scene.objects.front().box};
}

}  // namespace

NovelRegistry NovelRegistry::build(std::uint64_t seed, const ClassSplit& split, int k,
                                   const LayoutParams& layout) {
  if (k < 1) throw std::invalid_argument("NovelRegistry: k must be at least 1");
  NovelRegistry reg;
  reg.k = k;
  LayoutParams single = layout;
  single.min_objects = single.max_objects = 1;
  for (int cls : split.novel) {
    Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(cls) * 7919ULL + 17ULL);
    const int only[] = {cls};
    for (int i = 0; i < k; ++i) {
      SyntheticScene scene = generate_scene(rng, only, single);
      reg.crops[cls].push_back(crop_first(scene));
      reg.scenes[cls].push_back(std::move(scene));
    }
  }
  return reg;
}

std::vector<SupportCrop> sample_support(Rng& rng, int cls, std::span<const int> scene_classes,
                                        int shots, const LayoutParams& layout) {
  std::vector<SupportCrop> out;
  for (int s = 0; s < shots; ++s) out.push_back(crop_first(generate_scene_with(rng, cls, scene_classes, layout)));
  return out;
}

SyntheticScene restrict_to(SyntheticScene scene, std::span<const int> classes) {
  std::erase_if(scene.objects, [&](const SceneObject& o) {
    return std::find(classes.begin(), classes.end(), o.cls) == classes.end();
  });
  return scene;
}

Episode sample_episode(Rng& rng, const ClassSplit& split, Phase phase, const EpisodeSpec& spec,
                       const NovelRegistry* registry, const LayoutParams& layout) {
  if (spec.n_way < 1 || spec.shots < 1 || spec.queries_per_class < 1) {
    throw std::invalid_argument("sample_episode: n_way, shots and queries_per_class must be >= 1");
  }
  const auto n = static_cast<std::size_t>(spec.n_way);
  Episode ep;
  ep.phase = phase;
  if (phase == Phase::Base) {
    if (n > split.base.size()) {
      throw std::invalid_argument("sample_episode: " + std::to_string(n) + "-way episode but only " +
                                  std::to_string(split.base.size()) + " base classes");
    }
    ep.classes = choose(rng, split.base, n);
  } else {
    if (!registry) throw std::invalid_argument("sample_episode: fine-tuning needs a novel registry");
    if (n < split.novel.size() || n > split.novel.size() + split.base.size()) {
      throw std::invalid_argument("sample_episode: fine-tuning " + std::to_string(n) +
                                  "-way episode cannot hold the " +
                                  std::to_string(split.novel.size()) + " novel classes");
    }
    ep.classes = choose(rng, split.base, n - split.novel.size());
    ep.classes.insert(ep.classes.end(), split.novel.begin(), split.novel.end());
    std::sort(ep.classes.begin(), ep.classes.end());
  }

  // Scenes only ever show base objects; novel objects enter through the registry.
  for (int cls : ep.classes) {
    if (split.is_novel(cls)) {
      const auto& crops = registry->crops.at(cls);
      const auto& scenes = registry->scenes.at(cls);
      const auto shots = std::min<std::size_t>(crops.size(), static_cast<std::size_t>(spec.shots));
      const auto queries =
          std::min<std::size_t>(scenes.size(), static_cast<std::size_t>(spec.queries_per_class));
      ep.support[cls].assign(crops.begin(), crops.begin() + static_cast<long>(shots));
      for (std::size_t q = 0; q < queries; ++q) ep.queries.push_back(scenes[q]);
    } else {
      ep.support[cls] = sample_support(rng, cls, split.base, spec.shots, layout);
      for (int q = 0; q < spec.queries_per_class; ++q) {
        ep.queries.push_back(restrict_to(generate_scene_with(rng, cls, split.base, layout), ep.classes));
      }
    }
  }
  return ep;
}

}  // namespace aaf::fsod
