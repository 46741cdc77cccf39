#include "aaf/fsod/detector.hpp"

#include <algorithm>

namespace aaf::fsod {

Detector Detector::init(const DetectorConfig& config, Rng& rng) {
  Detector d;
  d.config_ = config;
  d.backbone_ = Backbone::init(config.backbone, rng);
  const std::size_t channels = d.backbone_.channels();
  d.pipeline_ = PipelineParams::init(config.pipeline, channels, rng);
  d.head_ = Head::init(output_channels(config.pipeline, channels), config.head_hidden, rng);
  return d;
}

Detector Detector::clone() const {
  Rng unused(0);
  Detector d = init(config_, unused);
  const std::vector<NamedParam> from = params();
  std::vector<NamedParam> to = d.params();
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto src = from[i].value.data();
    std::copy(src.begin(), src.end(), to[i].value.mutable_data().begin());
  }
  return d;
}

std::vector<NamedParam> Detector::params() const {
  std::vector<NamedParam> out;
  backbone_.append_named(out, "backbone.");
  for (NamedParam& p : pipeline_.named("pipeline.")) out.push_back(std::move(p));
  head_.append_named(out, "head.");
  return out;
}

std::vector<Tensor> Detector::tensors() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : params()) out.push_back(p.value);
  return out;
}

std::vector<Grid> Detector::grids() const {
  std::vector<Grid> out;
  std::size_t stride = backbone_.stride();
  const std::size_t levels = config_.backbone.second_level ? 2 : 1;
  for (std::size_t l = 0; l < levels; ++l, stride *= 2) {
    const std::size_t cells = (static_cast<std::size_t>(config_.image_size) + stride - 1) / stride;
    out.push_back({cells, cells, static_cast<double>(stride)});
  }
  return out;
}

std::vector<ClassSupports> Detector::encode_support(
    const std::map<int, std::vector<SupportCrop>>& support) const {
  std::vector<ClassSupports> levels;
  for (const auto& [cls, crops] : support) {
    for (const SupportCrop& crop : crops) {
      const std::vector<FeatureMap> maps = backbone_.forward_levels(crop.image);
      levels.resize(maps.size());
      for (std::size_t l = 0; l < maps.size(); ++l) levels[l][cls].push_back(maps[l]);
    }
  }
  return levels;
}

std::vector<LevelOutputs> Detector::forward(const Tensor& image,
                                            const std::vector<ClassSupports>& support) const {
  const std::vector<FeatureMap> query = backbone_.forward_levels(image);
  if (query.size() != support.size()) {
    throw ShapeError("detector: " + std::to_string(query.size()) + " query levels but " +
                     std::to_string(support.size()) + " support levels");
  }
  std::vector<LevelInput> inputs;
  for (std::size_t l = 0; l < query.size(); ++l) inputs.push_back({query[l], support[l]});
  std::vector<LevelOutputs> out;
  for (const ClassSpecificFeatures& level :
       multiscale_forward(config_.pipeline, pipeline_, inputs)) {
    LevelOutputs raw;
    for (const auto& [cls, features] : level) raw.emplace(cls, head_.forward(features));
    out.push_back(std::move(raw));
  }
  return out;
}

std::map<int, std::vector<Detection>> Detector::detect(const Tensor& image,
                                                       const std::vector<ClassSupports>& support,
                                                       int image_index, double min_score,
                                                       std::size_t max_per_class) const {
  NoGradScope no_grad;
  const std::vector<LevelOutputs> raw = forward(image, support);
  const std::vector<Grid> level_grids = grids();
  std::map<int, std::vector<Detection>> out;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    for (const auto& [cls, r] : raw[l]) {
      for (const ScoredBox& sb : decode(r, level_grids[l], config_.image_size, min_score))
        out[cls].push_back({image_index, sb.box, sb.score});
    }
  }
  for (auto& [cls, dets] : out) {
    dets = nms(std::move(dets), 0.5);
    if (dets.size() > max_per_class) dets.resize(max_per_class);
  }
  return out;
}

}  // namespace aaf::fsod
