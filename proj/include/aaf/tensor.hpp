#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aaf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand extents are incompatible. The message names the shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the gradient machinery (no tape, non-scalar loss, missing grad).
class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense row-major array of doubles. Copies share storage; ops never mutate
/// their operands, they always produce fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor row(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  /// Trainable leaf: requires_grad is set.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  /// Direct write access; only for leaves that are not part of a live tape
  /// (parameter updates, initialization, finite differences).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void clear_grad();

  /// Same values, fresh storage, no gradient tracking.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;

  const TensorNode* id() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

bool same_values(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Reverse-mode tape

/// Ordered record of executed ops. Recording happens only while a tape is
/// active on the current thread (see TapeScope) and some operand requires
/// grad. backward() replays entries in reverse and then clears the tape.
class GradTape {
 public:
  struct Entry {
    const char* op;
    std::shared_ptr<TensorNode> output;
    std::function<void()> adjoint;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void reset() { entries_.clear(); }

  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
};

/// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Suspends recording on the current thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

/// Backpropagates a scalar loss through the active tape.
void backward(const Tensor& loss);

/// Building block for ops (including fused ops outside this module): wraps
/// `values` as a new tensor and, when recording, registers `adjoint`. The
/// adjoint receives the output gradient and must accumulate into the
/// operands' grads through accumulate_grad().
using Adjoint = std::function<void(std::span<const double> out_grad)>;
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, Adjoint adjoint);
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, Adjoint adjoint);

/// Grad buffer of `t` for accumulation, or an empty span when `t` does not
/// take gradients.
std::span<double> accumulate_grad(const Tensor& t);

// ---------------------------------------------------------------------------
// Ops

enum class ElementwiseOp { Add, Sub, Mul };
enum class PoolMode { Max, Avg };

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& t, std::size_t axis);

/// `b` either matches `a`'s shape or holds one value per channel (all
/// leading extents 1, last extent equal to a's last extent).
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);

Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> widths);

/// Pools over every axis but the last: [.. x d] -> [1 x d]. Max routes the
/// gradient to the first maximal position in row-major order.
Tensor global_pool(const Tensor& t, PoolMode mode);
/// [1 x d] -> [rows x d].
Tensor broadcast_rows(const Tensor& t, std::size_t rows);
/// Per-position affine map: [m x d_in] * [d_in x d_out] + [1 x d_out].
Tensor pointwise_linear(const Tensor& t, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor sum(const Tensor& t);
Tensor mean_of(std::span<const Tensor> items);
Tensor reshape(const Tensor& t, Shape shape);

/// 2-D convolution over an H x W x C_in tensor. weight is
/// (kernel * kernel * C_in) x C_out in (ky, kx, c) patch order; bias 1 x C_out.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t kernel, std::size_t stride, std::size_t pad);

// ---------------------------------------------------------------------------
// Verification and optimization

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for scalar-valued f at x.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double eps = 1e-5);

struct NamedParam {
  std::string name;
  Tensor value;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// gradcheck over the named parameters of a scalar loss closure. At most
/// `max_coords` coordinates per parameter are probed (evenly strided) so
/// large weight tensors stay affordable.
GradcheckReport gradcheck_params(const std::function<Tensor()>& loss,
                                 std::span<NamedParam> params, double eps = 1e-5,
                                 std::size_t max_coords = 64);

/// p <- p - lr * grad(p), then clears the grads.
void sgd_step(std::span<Tensor> params, double lr);

namespace testing {
/// Scales the pointwise_linear weight adjoint by (1 + factor). Zero disables.
/// Exists so gradient checkers can prove they catch a broken adjoint.
void set_adjoint_fault(double factor);
double adjoint_fault();
}  // namespace testing

}  // namespace aaf
