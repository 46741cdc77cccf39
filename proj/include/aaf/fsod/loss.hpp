#pragma once

#include <map>
#include <span>
#include <vector>

#include "aaf/fsod/head.hpp"

namespace aaf::fsod {

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

struct CellTarget {
  bool positive = false;
  BoundingBox box;  // meaningful for positive cells
};

/// A cell is positive when its center lies strictly inside a box; the
/// smallest such box becomes its regression target.
std::vector<CellTarget> assign_targets(std::span<const BoundingBox> boxes, const Grid& grid);

/// Sum over cells of the sigmoid focal loss on the logit column of raw [cells x 5].
Tensor focal_loss_sum(const Tensor& raw, std::span<const CellTarget> targets);

/// Sum over positive cells of -log IoU(predicted box, target box).
Tensor iou_loss_sum(const Tensor& raw, std::span<const CellTarget> targets, const Grid& grid);

struct DetectionLoss {
  Tensor total;  // scalar
  std::size_t positives = 0;
};

/// Focal plus IoU terms over every class, divided by max(1, positive cells).
DetectionLoss detection_loss(const std::map<int, Tensor>& raw,
                             const std::map<int, std::vector<CellTarget>>& targets,
                             const Grid& grid);

}  // namespace aaf::fsod
