#include "aaf/fsod/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace aaf::fsod {

namespace {

std::vector<std::size_t> by_score(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

double average_precision(std::span<const Detection> preds, std::span<const GroundTruth> gts,
                         double iou_thresh) {
  if (preds.empty() || gts.empty()) return 0.0;
  std::vector<bool> taken(gts.size(), false);
  std::vector<double> precision, recall;
  precision.reserve(preds.size());
  recall.reserve(preds.size());
  std::size_t tp = 0, seen = 0;
  for (std::size_t idx : by_score(preds)) {
    const Detection& d = preds[idx];
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image != d.image) continue;
      const double iou = compute_iou(d.box, gts[g].box);
      if (iou >= iou_thresh && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    ++seen;
    if (best_gt < gts.size()) {
      taken[best_gt] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  // Precision envelope, then area over the recall steps.
  for (std::size_t i = precision.size() - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  std::vector<Detection> kept;
  for (std::size_t idx : by_score(dets)) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.image == d.image && compute_iou(k.box, d.box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace aaf::fsod
