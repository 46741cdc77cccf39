#pragma once

#include <span>
#include <string>
#include <vector>

#include "aaf/fsod/geometry.hpp"
#include "aaf/random.hpp"
#include "aaf/tensor.hpp"

namespace aaf::fsod {

enum class ShapeKind { Square, Disk, Triangle, Cross, Ring };
enum class ColorKind { Red, Blue };

inline constexpr int kNumClasses = 10;

/// Class ids enumerate shape x color: id = 2 * shape + color.
inline int class_id(ShapeKind s, ColorKind c) { return 2 * static_cast<int>(s) + static_cast<int>(c); }
inline ShapeKind shape_of(int cls) { return static_cast<ShapeKind>(cls / 2); }
inline ColorKind color_of(int cls) { return static_cast<ColorKind>(cls % 2); }
std::string class_name(int cls);

struct ClassSplit {
  std::vector<int> base;
  std::vector<int> novel;

  /// 7 base / 3 novel; every novel class shares its shape with a base class.
  static ClassSplit standard();
  bool is_novel(int cls) const;
  std::vector<int> all() const;
};

struct LayoutParams {
  int size = 64;
  int min_objects = 1;
  int max_objects = 4;
  int min_extent = 12;
  int max_extent = 24;
  double color_jitter = 0.12;
  double noise = 0.08;
};

struct SceneObject {
  int cls = 0;
  BoundingBox box;
};

struct SyntheticScene {
  Tensor image;  // size x size x 3, values in [0, 1]
  std::vector<SceneObject> objects;
};

/// 1 to 4 disjoint objects with classes drawn uniformly from `classes`.
SyntheticScene generate_scene(Rng& rng, std::span<const int> classes,
                              const LayoutParams& layout = {});
/// Same, but the first object is of class `required`.
SyntheticScene generate_scene_with(Rng& rng, int required, std::span<const int> classes,
                                   const LayoutParams& layout = {});

/// Bilinear resample of the box region to out x out x 3.
Tensor crop_resize(const Tensor& image, const BoundingBox& box, int out = 32);

}  // namespace aaf::fsod
