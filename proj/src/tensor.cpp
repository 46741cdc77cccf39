#include "aaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aaf/kernels.hpp"

namespace aaf {

namespace kn = kernels::parallel;
using kernels::Trans;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

namespace {

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const TensorNode& checked(const std::shared_ptr<TensorNode>& node) {
  if (!node) throw std::logic_error("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

Tensor Tensor::row(std::initializer_list<double> values) {
  return make_tensor({1, values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return make_tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> values(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) values[i * n + i] = 1.0;
  return make_tensor({n, n}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values), true);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= dim(0) || j >= dim(1)) {
    throw ShapeError("at(" + std::to_string(i) + "," + std::to_string(j) + ") on " +
                     shape_str(shape()));
  }
  return data()[i * dim(1) + j];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(node_);
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad;
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  const TensorNode& n = checked(node_);
  return make_tensor(n.shape, n.data);
}

Tensor Tensor::reshaped(Shape shape) const { return reshape(*this, std::move(shape)); }

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

// ---------------------------------------------------------------------------
// Ops

namespace {

std::size_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("expected a tensor with a channel axis, got a scalar");
  return t.shape().back();
}

std::size_t row_count(const Tensor& t) { return t.size() / last_dim(t); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

bool is_channel_vector(const Tensor& b, const Tensor& a) {
  if (b.rank() == 0 || a.rank() == 0) return false;
  if (b.shape().back() != a.shape().back() || b.size() != a.shape().back()) return false;
  return b.rank() <= a.rank();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kn::gemm(Trans::No, Trans::No, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [a, b, m, n, k](std::span<const double> g) {
                       if (auto ga = accumulate_grad(a); !ga.empty()) {
                         kn::gemm(Trans::No, Trans::Yes, m, k, n, g.data(), b.data().data(),
                                  ga.data(), true);
                       }
                       if (auto gb = accumulate_grad(b); !gb.empty()) {
                         kn::gemm(Trans::Yes, Trans::No, k, n, m, a.data().data(), g.data(),
                                  gb.data(), true);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a},
                     [a, m, n](std::span<const double> g) {
                       auto ga = accumulate_grad(a);
                       if (ga.empty()) return;
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(t.shape()));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto x = t.data();
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(x[base + l * inner] - mx);
        y[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) y[base + l * inner] /= total;
    }
  }
  std::vector<double> saved = y;
  return make_result(
      "softmax", s, std::move(y), {t},
      [t, saved = std::move(saved), outer, inner, len](std::span<const double> g) {
        auto gt = accumulate_grad(t);
        if (gt.empty()) return;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double dot = 0.0;
            for (std::size_t l = 0; l < len; ++l)
              dot += g[base + l * inner] * saved[base + l * inner];
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t idx = base + l * inner;
              gt[idx] += saved[idx] * (g[idx] - dot);
            }
          }
        }
      });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !is_channel_vector(b, a)) {
    throw ShapeError("elementwise: cannot combine " + shape_str(a.shape()) + " with " +
                     shape_str(b.shape()));
  }
  const auto x = a.data();
  const auto y = b.data();
  const std::size_t channels = same ? a.size() : y.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yv = y[same ? i : i % channels];
    switch (op) {
      case ElementwiseOp::Add: out[i] = x[i] + yv; break;
      case ElementwiseOp::Sub: out[i] = x[i] - yv; break;
      case ElementwiseOp::Mul: out[i] = x[i] * yv; break;
    }
  }
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  return make_result(kNames[static_cast<int>(op)], a.shape(), std::move(out), {a, b},
                     [a, b, op, same, channels](std::span<const double> g) {
                       const auto x = a.data();
                       const auto y = b.data();
                       if (auto ga = accumulate_grad(a); !ga.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[i] += op == ElementwiseOp::Mul ? g[i] * y[same ? i : i % channels]
                                                              : g[i];
                         }
                       }
                       if (auto gb = accumulate_grad(b); !gb.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const std::size_t j = same ? i : i % channels;
                           switch (op) {
                             case ElementwiseOp::Add: gb[j] += g[i]; break;
                             case ElementwiseOp::Sub: gb[j] -= g[i]; break;
                             case ElementwiseOp::Mul: gb[j] += g[i] * x[i]; break;
                           }
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Mul, a, b); }

Tensor scale(const Tensor& t, double factor) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v *= factor;
  return make_result("scale", t.shape(), std::move(out), {t},
                     [t, factor](std::span<const double> g) {
                       auto gt = accumulate_grad(t);
                       for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += factor * g[i];
                     });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  if (parts.size() == 1) return parts[0];
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) throw ShapeError("concat_channels: scalar part");
    const std::size_t w = pl.back();
    pl.pop_back();
    if (pl != lead) {
      throw ShapeError("concat_channels: spatial extents differ: " +
                       shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", shape, std::move(out), inputs,
                     [inputs, widths, rows, total](std::span<const double> g) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         if (auto gp = accumulate_grad(inputs[k]); !gp.empty()) {
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               gp[r * widths[k] + c] += g[r * total + offset + c];
                         }
                         offset += widths[k];
                       }
                     });
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> widths) {
  const std::size_t total = last_dim(t);
  if (std::accumulate(widths.begin(), widths.end(), std::size_t{0}) != total) {
    throw ShapeError("split_channels: widths do not sum to the channel count of " +
                     shape_str(t.shape()));
  }
  const std::size_t rows = row_count(t);
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("split_channels: zero width");
    std::vector<double> values(rows * w);
    const auto src = t.data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.begin() + r * total + offset, w, values.begin() + r * w);
    Shape shape = t.shape();
    shape.back() = w;
    out.push_back(make_result("split", shape, std::move(values), {t},
                              [t, rows, total, offset, w](std::span<const double> g) {
                                auto gt = accumulate_grad(t);
                                if (gt.empty()) return;
                                for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < w; ++c)
                                    gt[r * total + offset + c] += g[r * w + c];
                              }));
    offset += w;
  }
  return out;
}

Tensor global_pool(const Tensor& t, PoolMode mode) {
  const std::size_t d = last_dim(t);
  const std::size_t rows = row_count(t);
  const auto x = t.data();
  std::vector<double> out(d);
  std::vector<std::size_t> arg(d, 0);
  for (std::size_t c = 0; c < d; ++c) {
    if (mode == PoolMode::Max) {
      double best = x[c];
      for (std::size_t r = 1; r < rows; ++r) {
        if (x[r * d + c] > best) {
          best = x[r * d + c];
          arg[c] = r;
        }
      }
      out[c] = best;
    } else {
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) total += x[r * d + c];
      out[c] = total / static_cast<double>(rows);
    }
  }
  return make_result(mode == PoolMode::Max ? "global_max_pool" : "global_avg_pool", {1, d},
                     std::move(out), {t},
                     [t, mode, arg = std::move(arg), rows, d](std::span<const double> g) {
                       auto gt = accumulate_grad(t);
                       if (gt.empty()) return;
                       for (std::size_t c = 0; c < d; ++c) {
                         if (mode == PoolMode::Max) {
                           gt[arg[c] * d + c] += g[c];
                         } else {
                           const double share = g[c] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r) gt[r * d + c] += share;
                         }
                       }
                     });
}

Tensor broadcast_rows(const Tensor& t, std::size_t rows) {
  if (t.rank() != 2 || t.dim(0) != 1) {
    throw ShapeError("broadcast_rows: expected [1xd], got " + shape_str(t.shape()));
  }
  if (rows == 0) throw ShapeError("broadcast_rows: zero rows");
  const std::size_t d = t.dim(1);
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) std::ranges::copy(t.data(), out.begin() + r * d);
  return make_result("broadcast_rows", {rows, d}, std::move(out), {t},
                     [t, rows, d](std::span<const double> g) {
                       auto gt = accumulate_grad(t);
                       if (gt.empty()) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < d; ++c) gt[c] += g[r * d + c];
                     });
}

Tensor pointwise_linear(const Tensor& t, const Tensor& weight, const Tensor& bias) {
  require_rank2(weight, "pointwise_linear");
  const std::size_t d_in = last_dim(t);
  const std::size_t d_out = weight.dim(1);
  if (weight.dim(0) != d_in) {
    throw ShapeError("pointwise_linear: input channels " + shape_str(t.shape()) +
                     " do not match weight " + shape_str(weight.shape()));
  }
  if (bias.size() != d_out) {
    throw ShapeError("pointwise_linear: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t rows = row_count(t);
  std::vector<double> out(rows * d_out);
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) std::ranges::copy(bv, out.begin() + r * d_out);
  kn::gemm(Trans::No, Trans::No, rows, d_out, d_in, t.data().data(), weight.data().data(),
           out.data(), true);
  Shape shape = t.shape();
  shape.back() = d_out;
  return make_result(
      "pointwise_linear", shape, std::move(out), {t, weight, bias},
      [t, weight, bias, rows, d_in, d_out](std::span<const double> g) {
        if (auto gt = accumulate_grad(t); !gt.empty()) {
          kn::gemm(Trans::No, Trans::Yes, rows, d_in, d_out, g.data(), weight.data().data(),
                   gt.data(), true);
        }
        if (auto gw = accumulate_grad(weight); !gw.empty()) {
          const double fault = testing::adjoint_fault();
          if (fault == 0.0) {
            kn::gemm(Trans::Yes, Trans::No, d_in, d_out, rows, t.data().data(), g.data(),
                     gw.data(), true);
          } else {
            std::vector<double> tmp(d_in * d_out);
            kn::gemm(Trans::Yes, Trans::No, d_in, d_out, rows, t.data().data(), g.data(),
                     tmp.data(), false);
            for (std::size_t i = 0; i < tmp.size(); ++i) gw[i] += (1.0 + fault) * tmp[i];
          }
        }
        if (auto gb = accumulate_grad(bias); !gb.empty()) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d_out; ++c) gb[c] += g[r * d_out + c];
        }
      });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.data().begin(), t.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result("relu", t.shape(), std::move(out), {t}, [t](std::span<const double> g) {
    auto gt = accumulate_grad(t);
    if (gt.empty()) return;
    const auto x = t.data();
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (x[i] > 0.0) gt[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& t) {
  std::vector<double> out(t.size());
  const auto x = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Branches keep exp() arguments non-positive.
    out[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  std::vector<double> saved = out;
  return make_result("sigmoid", t.shape(), std::move(out), {t},
                     [t, saved = std::move(saved)](std::span<const double> g) {
                       auto gt = accumulate_grad(t);
                       for (std::size_t i = 0; i < gt.size(); ++i)
                         gt[i] += g[i] * saved[i] * (1.0 - saved[i]);
                     });
}

Tensor sum(const Tensor& t) {
  double total = 0.0;
  for (double v : t.data()) total += v;
  return make_result("sum", {}, {total}, {t}, [t](std::span<const double> g) {
    auto gt = accumulate_grad(t);
    for (double& v : gt) v += g[0];
  });
}

Tensor mean_of(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("mean_of: no tensors");
  const bool all_same = std::ranges::all_of(
      items, [&](const Tensor& t) { return t.id() == items[0].id(); });
  if (all_same) return items[0];
  const Shape& shape = items[0].shape();
  std::vector<double> out(items[0].size(), 0.0);
  for (const Tensor& t : items) {
    if (t.shape() != shape) {
      throw ShapeError("mean_of: shapes differ: " + shape_str(shape) + " vs " +
                       shape_str(t.shape()));
    }
    const auto x = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  const double inv = 1.0 / static_cast<double>(items.size());
  for (double& v : out) v *= inv;
  std::vector<Tensor> inputs(items.begin(), items.end());
  return make_result("mean_of", shape, std::move(out), inputs,
                     [inputs, inv](std::span<const double> g) {
                       for (const Tensor& t : inputs) {
                         auto gt = accumulate_grad(t);
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += inv * g[i];
                       }
                     });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.size()) {
    throw ShapeError("reshape: " + shape_str(t.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {t},
                     [t](std::span<const double> g) {
                       auto gt = accumulate_grad(t);
                       for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                     });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride, std::size_t pad) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d: expected an HxWxC input, got " + shape_str(input.shape()));
  }
  kernels::ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), kernel, stride, pad};
  require_rank2(weight, "conv2d");
  if (weight.dim(0) != geo.patch_size()) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not fit a " +
                     std::to_string(kernel) + "x" + std::to_string(kernel) + " kernel over " +
                     shape_str(input.shape()));
  }
  if (geo.height + 2 * pad < kernel || geo.width + 2 * pad < kernel || stride == 0) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  }
  const std::size_t c_out = weight.dim(1);
  if (bias.size() != c_out) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t positions = oh * ow, patch = geo.patch_size();
  std::vector<double> cols(positions * patch);
  kn::im2col(geo, input.data().data(), cols.data());
  std::vector<double> out(positions * c_out);
  const auto bv = bias.data();
  for (std::size_t p = 0; p < positions; ++p) std::ranges::copy(bv, out.begin() + p * c_out);
  kn::gemm(Trans::No, Trans::No, positions, c_out, patch, cols.data(), weight.data().data(),
           out.data(), true);
  return make_result(
      "conv2d", {oh, ow, c_out}, std::move(out), {input, weight, bias},
      [input, weight, bias, geo, cols = std::move(cols), positions, patch,
       c_out](std::span<const double> g) {
        if (auto gw = accumulate_grad(weight); !gw.empty()) {
          kn::gemm(Trans::Yes, Trans::No, patch, c_out, positions, cols.data(), g.data(),
                   gw.data(), true);
        }
        if (auto gb = accumulate_grad(bias); !gb.empty()) {
          for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t c = 0; c < c_out; ++c) gb[c] += g[p * c_out + c];
        }
        if (auto gi = accumulate_grad(input); !gi.empty()) {
          std::vector<double> dcols(positions * patch);
          kn::gemm(Trans::No, Trans::Yes, positions, patch, c_out, g.data(),
                   weight.data().data(), dcols.data(), false);
          kn::col2im(geo, dcols.data(), gi.data());
        }
      });
}

}  // namespace aaf
