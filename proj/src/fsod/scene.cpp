#include "aaf/fsod/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aaf::fsod {

std::string class_name(int cls) {
  static const char* shapes[] = {"square", "disk", "triangle", "cross", "ring"};
  static const char* colors[] = {"red", "blue"};
  if (cls < 0 || cls >= kNumClasses) return "class" + std::to_string(cls);
  return std::string(colors[cls % 2]) + "_" + shapes[cls / 2];
}

ClassSplit ClassSplit::standard() {
  // blue disk, red cross and blue ring are held out; their shapes stay
  // visible in base training through the other color.
  return {{0, 1, 2, 4, 5, 7, 8}, {3, 6, 9}};
}

bool ClassSplit::is_novel(int cls) const {
  return std::find(novel.begin(), novel.end(), cls) != novel.end();
}

std::vector<int> ClassSplit::all() const {
  std::vector<int> out = base;
  out.insert(out.end(), novel.begin(), novel.end());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Inside test in box-normalized coordinates u, v in [0, 1].
bool covers(ShapeKind shape, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  switch (shape) {
    case ShapeKind::Square: return true;
    case ShapeKind::Disk: return du * du + dv * dv <= 0.25;
    case ShapeKind::Triangle: return std::abs(du) <= 0.5 * v;
    case ShapeKind::Cross: return std::abs(du) <= 1.0 / 6.0 || std::abs(dv) <= 1.0 / 6.0;
    case ShapeKind::Ring: {
      const double r2 = du * du + dv * dv;
      return r2 <= 0.25 && r2 >= 0.25 * 0.3;
    }
  }
  return false;
}

void paint_background(Rng& rng, std::vector<double>& px, const LayoutParams& layout) {
  const int n = layout.size;
  const double base = rng.uniform(0.35, 0.65);
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.03, 0.03);
  // Coarse 8x8 texture cells on top of a gradient, plus pixel noise.
  std::vector<double> coarse(static_cast<std::size_t>((n / 8 + 1) * (n / 8 + 1)));
  for (double& c : coarse) c = rng.uniform(-1.0, 1.0) * layout.noise;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double g = base + gx * (x / double(n) - 0.5) + gy * (y / double(n) - 0.5) +
                       coarse[static_cast<std::size_t>((y / 8) * (n / 8 + 1) + x / 8)];
      for (int c = 0; c < 3; ++c) {
        const double v = g + tint[c] + layout.noise * 0.5 * rng.uniform(-1.0, 1.0);
        px[static_cast<std::size_t>((y * n + x) * 3 + c)] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

void paint_object(Rng& rng, std::vector<double>& px, const SceneObject& obj,
                  const LayoutParams& layout) {
  static const double palette[2][3] = {{0.85, 0.15, 0.15}, {0.15, 0.25, 0.85}};
  double color[3];
  for (int c = 0; c < 3; ++c) {
    color[c] = std::clamp(
        palette[static_cast<int>(color_of(obj.cls))][c] +
            rng.uniform(-layout.color_jitter, layout.color_jitter), 0.0, 1.0);
  }
  const ShapeKind shape = shape_of(obj.cls);
  const int n = layout.size;
  const BoundingBox& b = obj.box;
  for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y) {
    for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x) {
      const double u = (x + 0.5 - b.x_min) / b.width();
      const double v = (y + 0.5 - b.y_min) / b.height();
      if (!covers(shape, u, v)) continue;
      for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>((y * n + x) * 3 + c)] = color[c];
    }
  }
}

bool overlaps(const BoundingBox& a, const BoundingBox& b) {
  // One pixel of clearance keeps the objects visually separate.
  return a.x_min < b.x_max + 1 && b.x_min < a.x_max + 1 && a.y_min < b.y_max + 1 &&
         b.y_min < a.y_max + 1;
}

SyntheticScene generate(Rng& rng, const int* required, std::span<const int> classes,
                        const LayoutParams& layout) {
  if (classes.empty()) throw std::invalid_argument("generate_scene: empty class set");
  if (layout.max_extent >= layout.size || layout.min_extent < 2 ||
      layout.min_extent > layout.max_extent || layout.min_objects < 1 ||
      layout.min_objects > layout.max_objects) {
    throw std::invalid_argument("generate_scene: inconsistent layout parameters");
  }
  SyntheticScene scene;
  const int count = layout.min_objects +
                    static_cast<int>(rng.index(static_cast<std::size_t>(
                        layout.max_objects - layout.min_objects + 1)));
  for (int i = 0; i < count; ++i) {
    const int cls = (i == 0 && required) ? *required : classes[rng.index(classes.size())];
    // Boxes stay inside [0, size - 1] so every coordinate is below size.
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto span = static_cast<std::size_t>(layout.max_extent - layout.min_extent + 1);
      const int w = layout.min_extent + static_cast<int>(rng.index(span));
      const int h = layout.min_extent + static_cast<int>(rng.index(span));
      const int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(layout.size - w)));
      const int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(layout.size - h)));
      const BoundingBox box{double(x0), double(y0), double(x0 + w), double(y0 + h)};
      const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const SceneObject& o) { return overlaps(o.box, box); });
      if (!clash) {
        scene.objects.push_back({cls, box});
        break;
      }
    }
  }
  const auto n = static_cast<std::size_t>(layout.size);
  std::vector<double> px(n * n * 3);
  paint_background(rng, px, layout);
  for (const SceneObject& obj : scene.objects) paint_object(rng, px, obj, layout);
  scene.image = Tensor::from({n, n, 3}, std::move(px));
  return scene;
}

}  // namespace

SyntheticScene generate_scene(Rng& rng, std::span<const int> classes, const LayoutParams& layout) {
  return generate(rng, nullptr, classes, layout);
}

SyntheticScene generate_scene_with(Rng& rng, int required, std::span<const int> classes,
                                   const LayoutParams& layout) {
  return generate(rng, &required, classes, layout);
}

Tensor crop_resize(const Tensor& image, const BoundingBox& box, int out) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("crop_resize: expected an HxWx3 image, got " + shape_str(image.shape()));
  }
  if (!box.valid() || out <= 0) throw std::invalid_argument("crop_resize: degenerate box");
  const auto h = static_cast<long>(image.dim(0)), w = static_cast<long>(image.dim(1));
  const auto src = image.data();
  auto at = [&](long y, long x, int c) {
    y = std::clamp(y, 0L, h - 1);
    x = std::clamp(x, 0L, w - 1);
    return src[static_cast<std::size_t>((y * w + x) * 3 + c)];
  };
  const auto o = static_cast<std::size_t>(out);
  std::vector<double> px(o * o * 3);
  for (int oy = 0; oy < out; ++oy) {
    // Pixel centers map to pixel centers.
    const double sy = box.y_min + (oy + 0.5) * box.height() / out - 0.5;
    const long y0 = static_cast<long>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    for (int ox = 0; ox < out; ++ox) {
      const double sx = box.x_min + (ox + 0.5) * box.width() / out - 0.5;
      const long x0 = static_cast<long>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - fx) * at(y0, x0, c) + fx * at(y0, x0 + 1, c);
        const double bottom = (1 - fx) * at(y0 + 1, x0, c) + fx * at(y0 + 1, x0 + 1, c);
        px[static_cast<std::size_t>((oy * out + ox) * 3 + c)] = (1 - fy) * top + fy * bottom;
      }
    }
  }
  return Tensor::from({o, o, 3}, std::move(px));
}

}  // namespace aaf::fsod
