#pragma once

#include "colorbridge/abi.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "colorbridge/tensor.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation for non-leaf nodes
  bool leaf = true;
  bool trainable = false;
  bool requires_grad = false;  // only meaningful for non-leaf nodes

  bool needs_grad() const { return leaf ? trainable : requires_grad; }
  Tensor& grad_buffer();
};

}  // namespace detail

/// Shared handle to a value that can take part in reverse-mode
/// differentiation. Copies alias the same storage.
class Variable {
 public:
  Variable() = default;

  /// Leaf variable. Trainable leaves receive gradients; frozen ones do not.
  static Variable leaf(Tensor value, bool trainable);
  static Variable constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  /// Gradient buffer with the same shape as value().
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  bool trainable() const { return node_->trainable; }
  void set_trainable(bool trainable) { node_->trainable = trainable; }
  bool requires_grad() const { return node_ && node_->needs_grad(); }
  bool is_leaf() const { return node_->leaf; }

  bool same_as(const Variable& other) const { return node_ == other.node_; }
  const detail::Node* node_ptr() const { return node_.get(); }

 private:
  friend class Tape;
  friend Variable record_op(Tensor, std::vector<Variable>,
                            std::function<void(const Tensor&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations. backward() replays the
/// entries in exact reverse order, each one once, then clears the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node> output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must have shape [1].
  void backward(const Variable& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Entry indices visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  std::vector<std::size_t> visit_order_;
};

/// Activates a tape for the current thread for the lifetime of the scope.
/// Operations executed without an active tape are not recorded.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Running hash of the discrete choices made by piecewise operations (ReLU
/// sign, max-pool argmax, max-with side) while the trace is active on this
/// thread. Two evaluations with equal signatures ran on the same smooth piece.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  void mix(std::uint64_t choice) { hash_ = (hash_ ^ choice) * 0x100000001B3ULL; }
  std::uint64_t signature() const { return hash_; }

 private:
  BranchTrace* previous_;
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

BranchTrace* active_branch_trace();

/// Creates the output variable of an operation and, when a tape is active
/// and any input needs a gradient, records `backward` on it.
Variable record_op(Tensor value, std::vector<Variable> inputs,
                   std::function<void(const Tensor& out_grad)> backward);

/// Adds `delta` into the gradient of `v` if it needs one.
void accumulate_grad(const Variable& v, const Tensor& delta);

}  // namespace colorbridge
