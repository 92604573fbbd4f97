#include "colorbridge/autograd.hpp"

#include <algorithm>

namespace colorbridge::inline COLORBRIDGE_ABI {

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local BranchTrace* g_active_trace = nullptr;
}

Tensor& detail::Node::grad_buffer() {
  if (grad.numel() != value.numel() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  }
  return grad;
}

Variable Variable::leaf(Tensor value, bool trainable) {
  Variable v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  v.node_->grad = Tensor(v.node_->value.shape());
  v.node_->leaf = true;
  v.node_->trainable = trainable;
  return v;
}

void Variable::zero_grad() { node_->grad_buffer().fill(Scalar{0}); }

void Tape::record(std::shared_ptr<detail::Node> output, BackwardFn fn) {
  entries_.push_back({std::move(output), std::move(fn)});
}

void Tape::backward(const Variable& loss) {
  if (!loss.defined() || loss.value().numel() != 1 || loss.value().rank() != 1) {
    throw ShapeError("backward() needs a scalar loss of shape [1], got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (entries_.empty()) throw Error("backward() called on an empty tape");
  loss.node_->grad_buffer().fill(Scalar{1});
  visit_order_.clear();
  visit_order_.reserve(entries_.size());
  for (std::size_t i = entries_.size(); i-- > 0;) {
    auto& entry = entries_[i];
    visit_order_.push_back(i);
    // Entries whose output never received a gradient contribute nothing.
    if (entry.output->grad.numel() == 0) continue;
    entry.fn(entry.output->grad);
  }
  entries_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

BranchTrace::BranchTrace() : previous_(g_active_trace) { g_active_trace = this; }
BranchTrace::~BranchTrace() { g_active_trace = previous_; }
BranchTrace* active_branch_trace() { return g_active_trace; }

Variable record_op(Tensor value, std::vector<Variable> inputs,
                   std::function<void(const Tensor& out_grad)> backward) {
  Variable out;
  out.node_ = std::make_shared<detail::Node>();
  out.node_->value = std::move(value);
  out.node_->leaf = false;
  Tape* tape = active_tape();
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Variable& v) { return v.requires_grad(); });
  out.node_->requires_grad = tape != nullptr && needs;
  if (out.node_->requires_grad) tape->record(out.node_, std::move(backward));
  return out;
}

void accumulate_grad(const Variable& cv, const Tensor& delta) {
  Variable v = cv;  // handles alias the same node
  if (!v.requires_grad()) return;
  Tensor& g = v.mutable_grad();
  if (g.shape() != delta.shape()) {
    throw ShapeError("gradient shape " + to_string(delta.shape()) + " does not match " +
                     to_string(g.shape()));
  }
  Scalar* gp = g.ptr();
  const Scalar* dp = delta.ptr();
  for (std::size_t i = 0, n = g.numel(); i < n; ++i) gp[i] += dp[i];
}

}  // namespace colorbridge
