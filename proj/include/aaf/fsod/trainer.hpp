#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "aaf/fsod/detector.hpp"
#include "aaf/fsod/report.hpp"

namespace aaf::fsod {

/// A non-finite loss stopped training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalSpec {
  int images = 100;
  /// The evaluation scenes depend only on this, so runs with different
  /// training seeds or k are scored on the same images.
  std::uint64_t scene_seed = 424242;
  std::vector<std::uint64_t> support_seeds = {0};
};

struct Schedule {
  int base_episodes = 300;
  int queries_per_class = 10;
  int n_way = 5;
  int base_shots = 1;
  /// Query images per update.
  int batch_size = 8;
  double base_lr = 1e-2;
  double finetune_lr = 1e-3;
  double momentum = 0.9;
  /// Weight updates in the fine-tuning phase, the same for every k.
  int finetune_updates = 100;
  /// Evaluate every this many episodes of each phase; 0 disables.
  int eval_every = 0;
  EvalSpec eval;
  LayoutParams layout;
};

/// SGD with optional heavy-ball momentum.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  /// Uses and then clears the parameters' grads. Parameters without a grad
  /// (not reached by the loss) are left alone.
  void step(std::span<Tensor> params, double lr);

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// One update on a batch of query scenes. Returns the batch-mean loss.
double train_step(const Detector& detector, Sgd& optimizer, std::span<const SyntheticScene> queries,
                  const std::map<int, std::vector<SupportCrop>>& support, double lr);

/// Loss of one query image over the support classes (records on the active tape).
Tensor image_loss(const Detector& detector, const SyntheticScene& query,
                  const std::vector<ClassSupports>& support);

/// mAP@0.5 over the support classes on a fixed set of scenes.
double episode_map(const Detector& detector, std::span<const SyntheticScene> scenes,
                   const std::map<int, std::vector<SupportCrop>>& support);

EvalReport evaluate(const Detector& detector, const ClassSplit& split,
                    const NovelRegistry& registry, int k, const EvalSpec& spec,
                    const LayoutParams& layout = {});

struct TrainResult {
  Detector detector;
  NovelRegistry registry;
  std::vector<LogRow> log;
};

/// Base training on base classes, then fine-tuning with the k-shot novel
/// registry. Deterministic for a given (config, schedule, k, seed).
/// Equivalent to finetune(train_base(...), ...).
TrainResult train(const DetectorConfig& config, const ClassSplit& split, const Schedule& schedule,
                  int k, std::uint64_t seed,
                  const std::function<void(const LogRow&)>& on_row = {});

/// The base phase alone. Its parameters do not depend on k; k only picks the
/// novel support used by periodic evaluation rows.
TrainResult train_base(const DetectorConfig& config, const ClassSplit& split,
                       const Schedule& schedule, int k, std::uint64_t seed,
                       const std::function<void(const LogRow&)>& on_row = {});

/// Fine-tunes a copy of `base`, which must come from train_base with the same
/// split, schedule and seed. The base log rows are carried over.
TrainResult finetune(const TrainResult& base, const ClassSplit& split, const Schedule& schedule,
                     int k, std::uint64_t seed,
                     const std::function<void(const LogRow&)>& on_row = {});

}  // namespace aaf::fsod
