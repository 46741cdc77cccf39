#pragma once

#include <map>
#include <vector>

#include "aaf/fsod/backbone.hpp"
#include "aaf/fsod/episode.hpp"
#include "aaf/fsod/head.hpp"
#include "aaf/fsod/metrics.hpp"
#include "aaf/pipeline.hpp"

namespace aaf::fsod {

struct DetectorConfig {
  PipelineConfig pipeline;
  BackboneSpec backbone;
  std::size_t head_hidden = 32;
  int image_size = 64;

  bool operator==(const DetectorConfig&) const = default;
};

/// Raw head outputs of one pyramid level, per class.
using LevelOutputs = std::map<int, Tensor>;

/// Backbone + AAF pipeline + shared head.
class Detector {
 public:
  static Detector init(const DetectorConfig& config, Rng& rng);

  /// Deep copy: parameters get fresh storage.
  Detector clone() const;

  const DetectorConfig& config() const { return config_; }
  std::vector<NamedParam> params() const;
  std::vector<Tensor> tensors() const;
  std::vector<Grid> grids() const;

  /// Support crops -> per-level ClassSupports.
  std::vector<ClassSupports> encode_support(
      const std::map<int, std::vector<SupportCrop>>& support) const;
  std::vector<LevelOutputs> forward(const Tensor& image,
                                    const std::vector<ClassSupports>& support) const;

  /// Post-NMS detections per class for one image.
  std::map<int, std::vector<Detection>> detect(const Tensor& image,
                                               const std::vector<ClassSupports>& support,
                                               int image_index, double min_score = 0.01,
                                               std::size_t max_per_class = 100) const;

 private:
  DetectorConfig config_;
  Backbone backbone_;
  PipelineParams pipeline_;
  Head head_;
};

}  // namespace aaf::fsod
