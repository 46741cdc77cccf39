#include "aaf/fsod/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "aaf/fsod/loss.hpp"

namespace aaf::fsod {

void Sgd::step(std::span<Tensor> params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    if (momentum_ > 0.0) {
      auto& v = velocity_[i];
      if (v.size() != g.size()) v.assign(g.size(), 0.0);
      for (std::size_t j = 0; j < g.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        w[j] -= lr * v[j];
      }
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) w[j] -= lr * g[j];
    }
    p.clear_grad();
  }
}

Tensor image_loss(const Detector& detector, const SyntheticScene& query,
                  const std::vector<ClassSupports>& support) {
  const std::vector<LevelOutputs> raw = detector.forward(query.image, support);
  const std::vector<Grid> grids = detector.grids();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < raw.size(); ++l) {
    std::map<int, std::vector<CellTarget>> targets;
    for (const auto& [cls, r] : raw[l]) {
      std::vector<BoundingBox> boxes;
      for (const SceneObject& o : query.objects)
        if (o.cls == cls) boxes.push_back(o.box);
      targets[cls] = assign_targets(boxes, grids[l]);
    }
    total = add(total, detection_loss(raw[l], targets, grids[l]).total);
  }
  return total;
}

double train_step(const Detector& detector, Sgd& optimizer, std::span<const SyntheticScene> queries,
                  const std::map<int, std::vector<SupportCrop>>& support, double lr) {
  GradTape tape;
  double value = 0.0;
  {
    TapeScope scope(tape);
    const std::vector<ClassSupports> encoded = detector.encode_support(support);
    Tensor total = Tensor::scalar(0.0);
    for (const SyntheticScene& q : queries) total = add(total, image_loss(detector, q, encoded));
    total = scale(total, 1.0 / static_cast<double>(queries.size()));
    value = total.item();
    if (!std::isfinite(value)) {
      tape.reset();
      throw DivergenceError("loss is not finite (" + std::to_string(value) + ")");
    }
    tape.backward(total);
  }
  std::vector<Tensor> params = detector.tensors();
  optimizer.step(params, lr);
  return value;
}

namespace {

struct ClassResults {
  std::map<int, std::vector<Detection>> detections;
  std::map<int, std::vector<GroundTruth>> truths;
};

void collect(const Detector& detector, std::span<const SyntheticScene> scenes,
             const std::vector<ClassSupports>& encoded, ClassResults& out) {
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const int index = static_cast<int>(i);
    for (auto& [cls, dets] : detector.detect(scenes[i].image, encoded, index)) {
      auto& all = out.detections[cls];
      all.insert(all.end(), dets.begin(), dets.end());
    }
    for (const SceneObject& o : scenes[i].objects) out.truths[o.cls].push_back({index, o.box});
  }
}

double class_ap(const ClassResults& r, int cls) {
  const auto d = r.detections.find(cls);
  const auto g = r.truths.find(cls);
  if (d == r.detections.end() || g == r.truths.end()) return 0.0;
  return average_precision(d->second, g->second, 0.5);
}

double mean_of_classes(const std::map<int, double>& ap, std::span<const int> classes) {
  if (classes.empty()) return 0.0;
  double s = 0.0;
  for (int c : classes) s += ap.at(c);
  return s / static_cast<double>(classes.size());
}

double spread(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double episode_map(const Detector& detector, std::span<const SyntheticScene> scenes,
                   const std::map<int, std::vector<SupportCrop>>& support) {
  std::vector<ClassSupports> encoded;
  {
    NoGradScope no_grad;
    encoded = detector.encode_support(support);
  }
  ClassResults r;
  collect(detector, scenes, encoded, r);
  double s = 0.0;
  for (const auto& [cls, crops] : support) s += class_ap(r, cls);
  return support.empty() ? 0.0 : s / static_cast<double>(support.size());
}

EvalReport evaluate(const Detector& detector, const ClassSplit& split,
                    const NovelRegistry& registry, int k, const EvalSpec& spec,
                    const LayoutParams& layout) {
  if (k < 1 || k > registry.k) {
    throw std::invalid_argument("evaluate: k=" + std::to_string(k) + " but the registry holds " +
                                std::to_string(registry.k) + " examples per novel class");
  }
  const std::vector<int> all = split.all();
  std::vector<SyntheticScene> scenes;
  Rng scene_rng(spec.scene_seed);
  for (int i = 0; i < spec.images; ++i) scenes.push_back(generate_scene(scene_rng, all, layout));

  EvalReport report;
  report.k = k;
  report.support_seeds = spec.support_seeds;
  report.base_classes = split.base;
  report.novel_classes = split.novel;
  std::vector<double> base_maps, novel_maps;
  for (std::uint64_t s : spec.support_seeds) {
    Rng rng(s * 0x2545F4914F6CDD1DULL + 99);
    std::map<int, std::vector<SupportCrop>> support;
    for (int cls : split.base) support[cls] = sample_support(rng, cls, all, k, layout);
    for (int cls : split.novel) {
      const auto& crops = registry.crops.at(cls);
      support[cls].assign(crops.begin(), crops.begin() + k);
    }
    std::vector<ClassSupports> encoded;
    {
      NoGradScope no_grad;
      encoded = detector.encode_support(support);
    }
    ClassResults r;
    collect(detector, scenes, encoded, r);
    std::map<int, double> ap;
    for (int cls : all) {
      ap[cls] = class_ap(r, cls);
      report.class_ap[cls] += ap[cls] / static_cast<double>(spec.support_seeds.size());
    }
    base_maps.push_back(mean_of_classes(ap, split.base));
    novel_maps.push_back(mean_of_classes(ap, split.novel));
  }
  report.base_map = mean_of_classes(report.class_ap, split.base);
  report.novel_map = mean_of_classes(report.class_ap, split.novel);
  report.base_map_std = spread(base_maps);
  report.novel_map_std = spread(novel_maps);
  return report;
}

namespace {

struct PhaseRunner {
  const Detector& detector;
  const ClassSplit& split;
  const Schedule& schedule;
  const NovelRegistry& registry;
  int k;
  std::uint64_t seed;
  Sgd& optimizer;
  std::vector<LogRow>& log;
  const std::function<void(const LogRow&)>& on_row;

  // Runs batches of one episode; stops early once `budget` updates are used.
  double run_episode(Rng& rng, Episode& ep, double lr, int* budget) {
    // Interleave classes so every batch mixes them.
    for (std::size_t i = ep.queries.size(); i > 1; --i)
      std::swap(ep.queries[i - 1], ep.queries[rng.index(i)]);
    const auto batch = static_cast<std::size_t>(schedule.batch_size);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < ep.queries.size(); start += batch) {
      if (budget && *budget <= 0) break;
      // Base-class support is redrawn for every update; novel support stays fixed.
      if (start > 0) {
        for (int cls : ep.classes) {
          if (!split.is_novel(cls)) {
            ep.support[cls] = sample_support(rng, cls, split.base,
                                             static_cast<int>(ep.support[cls].size()),
                                             schedule.layout);
          }
        }
      }
      const std::size_t end = std::min(ep.queries.size(), start + batch);
      try {
        sum += train_step(detector, optimizer,
                          std::span(ep.queries).subspan(start, end - start), ep.support, lr);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(ep.phase == Phase::Base ? "base" : "finetune") +
                              " phase, batch starting at query " + std::to_string(start) + ": " +
                              e.what());
      }
      ++batches;
      if (budget) --*budget;
    }
    return batches ? sum / batches : 0.0;
  }

  void emit(int episode, const char* phase, double loss, bool eval_now) {
    LogRow row{episode, phase, loss, false, 0.0, 0.0, k, seed};
    if (eval_now) {
      const EvalReport r = evaluate(detector, split, registry, k, schedule.eval, schedule.layout);
      row.evaluated = true;
      row.base_map = r.base_map;
      row.novel_map = r.novel_map;
    }
    log.push_back(row);
    if (on_row) on_row(row);
  }
};

}  // namespace

namespace {

void check_run(const Schedule& schedule, int k) {
  if (k < 1) throw std::invalid_argument("train: k must be at least 1");
  if (schedule.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
}

}  // namespace

// Streams split off Rng(seed), in order: init, base, finetune.
TrainResult train_base(const DetectorConfig& config, const ClassSplit& split,
                       const Schedule& schedule, int k, std::uint64_t seed,
                       const std::function<void(const LogRow&)>& on_row) {
  check_run(schedule, k);
  Rng rng(seed);
  Rng init_rng = rng.split();
  TrainResult result{Detector::init(config, init_rng),
                     NovelRegistry::build(seed, split, k, schedule.layout), {}};
  Sgd optimizer(schedule.momentum);
  PhaseRunner runner{result.detector, split, schedule, result.registry, k, seed,
                     optimizer, result.log, on_row};

  Rng base_rng = rng.split();
  const EpisodeSpec base_spec{schedule.n_way, schedule.base_shots, schedule.queries_per_class};
  for (int e = 1; e <= schedule.base_episodes; ++e) {
    Episode ep = sample_episode(base_rng, split, Phase::Base, base_spec, nullptr, schedule.layout);
    const double loss = runner.run_episode(base_rng, ep, schedule.base_lr, nullptr);
    runner.emit(e, "base", loss, schedule.eval_every > 0 && e % schedule.eval_every == 0);
  }
  return result;
}

TrainResult finetune(const TrainResult& base, const ClassSplit& split, const Schedule& schedule,
                     int k, std::uint64_t seed,
                     const std::function<void(const LogRow&)>& on_row) {
  check_run(schedule, k);
  Rng rng(seed);
  rng.split();
  rng.split();
  Rng ft_rng = rng.split();
  TrainResult result{base.detector.clone(),
                     NovelRegistry::build(seed, split, k, schedule.layout), base.log};
  Sgd optimizer(schedule.momentum);
  PhaseRunner runner{result.detector, split, schedule, result.registry, k, seed,
                     optimizer, result.log, on_row};

  // The fine-tuning query set per class matches the k available novel images.
  const EpisodeSpec ft_spec{schedule.n_way, k, k};
  int budget = schedule.finetune_updates;
  for (int e = 1; budget > 0; ++e) {
    Episode ep = sample_episode(ft_rng, split, Phase::Finetune, ft_spec, &result.registry,
                                schedule.layout);
    const double loss = runner.run_episode(ft_rng, ep, schedule.finetune_lr, &budget);
    runner.emit(e, "finetune", loss, schedule.eval_every > 0 && e % schedule.eval_every == 0);
  }
  return result;
}

TrainResult train(const DetectorConfig& config, const ClassSplit& split, const Schedule& schedule,
                  int k, std::uint64_t seed, const std::function<void(const LogRow&)>& on_row) {
  return finetune(train_base(config, split, schedule, k, seed, on_row), split, schedule, k, seed,
                  on_row);
}

}  // namespace aaf::fsod
