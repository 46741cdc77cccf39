#pragma once

#include <span>
#include <vector>

#include "aaf/fsod/geometry.hpp"

namespace aaf::fsod {

struct Detection {
  int image = 0;
  BoundingBox box;
  double score = 0.0;
};

struct GroundTruth {
  int image = 0;
  BoundingBox box;
};

/// AP for one class. Predictions are visited by descending score (ties keep
/// input order); each takes the unmatched ground truth of its image with the
/// highest IoU, provided that IoU reaches iou_thresh, and is a false positive
/// otherwise. The area under the all-point interpolated precision/recall
/// curve is returned; 0 when either list is empty.
double average_precision(std::span<const Detection> preds, std::span<const GroundTruth> gts,
                         double iou_thresh = 0.5);

/// Greedy suppression by descending score. Boxes overlapping a kept box with
/// IoU above iou_thresh (within the same image) are dropped.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.5);

}  // namespace aaf::fsod
