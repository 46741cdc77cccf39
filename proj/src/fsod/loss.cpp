#include "aaf/fsod/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace aaf::fsod {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require_raw(const Tensor& raw, std::size_t cells, const char* op) {
  if (raw.rank() != 2 || raw.dim(1) != kHeadColumns || raw.dim(0) != cells) {
    throw ShapeError(std::string(op) + ": head output " + shape_str(raw.shape()) + " but " +
                     std::to_string(cells) + " targets");
  }
}

}  // namespace

std::vector<CellTarget> assign_targets(std::span<const BoundingBox> boxes, const Grid& grid) {
  std::vector<CellTarget> out(grid.cells());
  for (std::size_t p = 0; p < grid.cells(); ++p) {
    const double cx = grid.center_x(p), cy = grid.center_y(p);
    double best = INFINITY;
    for (const BoundingBox& b : boxes) {
      if (b.contains(cx, cy) && b.area() < best) {
        best = b.area();
        out[p] = {true, b};
      }
    }
  }
  return out;
}

Tensor focal_loss_sum(const Tensor& raw, std::span<const CellTarget> targets) {
  require_raw(raw, targets.size(), "focal_loss");
  const double a = kFocalAlpha, g = kFocalGamma;
  const auto x = raw.data();
  std::vector<double> dx(targets.size());
  double total = 0.0;
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const double z = x[p * kHeadColumns + kLogit];
    const double prob = 1.0 / (1.0 + std::exp(-z));
    const double log_p = -softplus(-z), log_q = -softplus(z);  // log p, log(1 - p)
    if (targets[p].positive) {
      const double w = std::pow(1.0 - prob, g);
      total += -a * w * log_p;
      dx[p] = a * w * (g * prob * log_p - (1.0 - prob));
    } else {
      const double w = std::pow(prob, g);
      total += -(1.0 - a) * w * log_q;
      dx[p] = (1.0 - a) * w * (prob - g * (1.0 - prob) * log_q);
    }
  }
  return make_result("focal_loss", {}, {total}, {raw},
                     [raw, dx = std::move(dx)](std::span<const double> go) {
                       auto gr = accumulate_grad(raw);
                       if (gr.empty()) return;
                       for (std::size_t p = 0; p < dx.size(); ++p)
                         gr[p * kHeadColumns + kLogit] += go[0] * dx[p];
                     });
}

Tensor iou_loss_sum(const Tensor& raw, std::span<const CellTarget> targets, const Grid& grid) {
  require_raw(raw, targets.size(), "iou_loss");
  const auto x = raw.data();
  std::vector<double> dx(raw.size(), 0.0);
  double total = 0.0;
  for (std::size_t p = 0; p < targets.size(); ++p) {
    if (!targets[p].positive) continue;
    const double* r = &x[p * kHeadColumns];
    const double cx = grid.center_x(p), cy = grid.center_y(p);
    const BoundingBox& t = targets[p].box;
    // Distances from the cell center to the four sides.
    const double pl = grid.stride * std::exp(r[kLeft]), pt = grid.stride * std::exp(r[kTop]);
    const double pr = grid.stride * std::exp(r[kRight]), pb = grid.stride * std::exp(r[kBottom]);
    const double tl = cx - t.x_min, tt = cy - t.y_min, tr = t.x_max - cx, tb = t.y_max - cy;
    const double iw = std::min(pl, tl) + std::min(pr, tr);
    const double ih = std::min(pt, tt) + std::min(pb, tb);
    const double inter = iw * ih;
    const double pred_area = (pl + pr) * (pt + pb);
    const double uni = pred_area + (tl + tr) * (tt + tb) - inter;
    total += std::log(uni) - std::log(inter);
    // d/dside of (log U - log I); the min() picks the prediction side when it is smaller.
    auto side = [&](double pred, double target, double inter_span, double pred_span) {
      const double d_inter = pred < target ? inter_span : 0.0;
      return (pred_span - d_inter) / uni - d_inter / inter;
    };
    double* d = &dx[p * kHeadColumns];
    d[kLeft] = side(pl, tl, ih, pt + pb) * pl;
    d[kRight] = side(pr, tr, ih, pt + pb) * pr;
    d[kTop] = side(pt, tt, iw, pl + pr) * pt;
    d[kBottom] = side(pb, tb, iw, pl + pr) * pb;
  }
  return make_result("iou_loss", {}, {total}, {raw},
                     [raw, dx = std::move(dx)](std::span<const double> go) {
                       auto gr = accumulate_grad(raw);
                       if (gr.empty()) return;
                       for (std::size_t i = 0; i < dx.size(); ++i) gr[i] += go[0] * dx[i];
                     });
}

DetectionLoss detection_loss(const std::map<int, Tensor>& raw,
                             const std::map<int, std::vector<CellTarget>>& targets,
                             const Grid& grid) {
  DetectionLoss out;
  std::vector<Tensor> terms;
  for (const auto& [cls, r] : raw) {
    const auto it = targets.find(cls);
    if (it == targets.end()) {
      throw std::invalid_argument("detection_loss: no targets for class " + std::to_string(cls));
    }
    const std::size_t pos = static_cast<std::size_t>(
        std::count_if(it->second.begin(), it->second.end(), [](const CellTarget& t) { return t.positive; }));
    out.positives += pos;
    terms.push_back(focal_loss_sum(r, it->second));
    if (pos > 0) terms.push_back(iou_loss_sum(r, it->second, grid));
  }
  Tensor total = Tensor::scalar(0.0);
  for (const Tensor& t : terms) total = add(total, t);
  out.total = scale(total, 1.0 / static_cast<double>(std::max<std::size_t>(1, out.positives)));
  return out;
}

}  // namespace aaf::fsod
