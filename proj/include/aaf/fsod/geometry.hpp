#pragma once

namespace aaf::fsod {

/// Axis-aligned box in pixel coordinates, x to the right, y down.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool contains(double x, double y) const {
    return x > x_min && x < x_max && y > y_min && y < y_max;
  }
  bool operator==(const BoundingBox&) const = default;
};

/// Intersection over union; 0 for disjoint or degenerate boxes.
double compute_iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace aaf::fsod
