#include <algorithm>
#include <atomic>
#include <cmath>

#include "aaf/tensor.hpp"

namespace aaf {

namespace {

thread_local GradTape* t_active_tape = nullptr;
std::atomic<double> g_adjoint_fault{0.0};

}  // namespace

GradTape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

std::span<double> accumulate_grad(const Tensor& t) {
  TensorNode& node = *t.node();
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, Adjoint adjoint) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  GradTape* tape = t_active_tape;
  if (tape == nullptr) return out;
  const bool tracked =
      std::ranges::any_of(inputs, [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  out.set_requires_grad(true);
  TensorNode* raw = out.node().get();
  tape->record({op, out.node(), [raw, adjoint = std::move(adjoint)] { adjoint(raw->grad); }});
  return out;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, Adjoint adjoint) {
  return make_result(op, std::move(shape), std::move(values), std::vector<Tensor>(inputs),
                     std::move(adjoint));
}

void GradTape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw AutogradError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                               [&](const Entry& e) { return e.output.get() == loss.id(); });
  if (it == entries_.rend()) {
    throw AutogradError("backward: loss was not produced under the active tape");
  }
  loss.node()->grad.assign(1, 1.0);
  for (auto e = it; e != entries_.rend(); ++e) {
    if (!e->output->grad.empty()) e->adjoint();
  }
  // Intermediate grads die with their nodes once the tape releases them.
  entries_.clear();
}

void backward(const Tensor& loss) {
  GradTape* tape = active_tape();
  if (tape == nullptr) throw AutogradError("backward: no active tape");
  tape->backward(loss);
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor probe = Tensor::parameter(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  NamedParam param{"x", probe};
  return gradcheck_params([&] { return f(probe); }, std::span<NamedParam>(&param, 1), eps,
                          probe.size())
      .max_rel_error;
}

GradcheckReport gradcheck_params(const std::function<Tensor()>& loss,
                                 std::span<NamedParam> params, double eps,
                                 std::size_t max_coords) {
  for (NamedParam& p : params) p.value.clear_grad();
  {
    GradTape tape;
    TapeScope scope(tape);
    backward(loss());
  }
  std::vector<std::vector<double>> analytic;
  for (NamedParam& p : params) {
    analytic.emplace_back(p.value.has_grad()
                              ? std::vector<double>(p.value.grad().begin(), p.value.grad().end())
                              : std::vector<double>(p.value.size(), 0.0));
    p.value.clear_grad();
  }

  GradcheckReport report;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].value;
    const std::size_t n = value.size();
    const std::size_t stride = max_coords == 0 || n <= max_coords ? 1 : n / max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      auto data = value.mutable_data();
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = loss().item();
      data[i] = saved - eps;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coords_checked;
      if (!(err <= report.max_rel_error)) {
        report.max_rel_error = std::isnan(err) ? INFINITY : err;
        report.worst_param = params[k].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (Tensor& p : params) {
    if (!p.has_grad()) {
      throw AutogradError("sgd_step: parameter of shape " + shape_str(p.shape()) +
                          " has no gradient");
    }
  }
  for (Tensor& p : params) {
    auto data = p.mutable_data();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    p.clear_grad();
  }
}

namespace testing {
void set_adjoint_fault(double factor) { g_adjoint_fault.store(factor); }
double adjoint_fault() { return g_adjoint_fault.load(std::memory_order_relaxed); }
}  // namespace testing

}  // namespace aaf
