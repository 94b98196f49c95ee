#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "epicast/rng.hpp"

namespace epicast {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense float64 tensor with value semantics. Storage is shared and treated
/// as immutable once wrapped, so copies are cheap and a tensor captured by a
/// backward closure cannot be invalidated later. Rank 1 is a vector, rank 2
/// a row-major matrix; nothing in the library needs more.
class Tensor {
 public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

  static Tensor wrap(Shape shape, std::vector<double> values) {
    if (shape_size(shape) != values.size())
      throw std::invalid_argument("tensor data does not match shape " + shape_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return wrap(std::move(shape), std::move(v));
  }

  static Tensor full(Shape shape, double value) {
    std::vector<double> v(shape_size(shape), value);
    return wrap(std::move(shape), std::move(v));
  }

  static Tensor scalar(double value) { return wrap({1}, {value}); }

  static Tensor vector(std::vector<double> values) {
    Shape s{values.size()};
    return wrap(std::move(s), std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return wrap({rows, cols}, std::move(values));
  }

  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return wrap(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }

  std::size_t rows() const {
    require_rank(2, "rows()");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2, "cols()");
    return shape_[1];
  }

  const std::vector<double>& values() const { return *data_; }

  double at(std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const {
    require_rank(2, "at(i,j)");
    return (*data_)[i * shape_[1] + j];
  }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of size " + std::to_string(size()));
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  /// Marks this tensor as a trainable leaf. Returns a copy sharing storage;
  /// the flag, not the data, is what distinguishes it.
  Tensor with_grad() const {
    Tensor t = *this;
    t.requires_grad_ = true;
    return t;
  }

  /// Copy that no tape will follow past.
  Tensor detached() const {
    Tensor t = *this;
    t.requires_grad_ = false;
    t.tape_serial_ = 0;
    t.node_ = 0;
    return t;
  }

  /// Same values, new shape.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw std::invalid_argument("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  /// Identity of the underlying buffer. Leaves are recognised across tapes
  /// by this pointer, so two tensors sharing storage are the same leaf.
  const double* storage_id() const { return data_->data(); }

 private:
  void require_rank(std::size_t r, const char* what) const {
    if (shape_.size() != r)
      throw std::invalid_argument(std::string(what) + " on tensor of shape " + shape_string(shape_));
  }

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
  std::uint64_t tape_serial_ = 0;
  std::size_t node_ = 0;

  friend class Tape;
};

/// Reverse-mode tape. Forward operations append nodes in execution order,
/// so node ids are already a topological order and the backward sweep is a
/// single reverse pass that touches each reachable node exactly once.
class Tape {
 public:
  using GradSlots = std::vector<std::vector<double>*>;
  using PullFn = std::function<void(const std::vector<double>& gout, const GradSlots& gin)>;

  Tape() : serial_(next_serial()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_tape(); }

  /// Registers `out` as the result of `op` over `inputs`. `pull` receives the
  /// output gradient and one accumulation slot per input (null for inputs
  /// that do not track gradients). Skipped entirely when no input tracks
  /// gradients, so inference builds no graph.
  void record(Tensor& out, std::string op, std::initializer_list<const Tensor*> inputs, PullFn pull) {
    record_many(out, std::move(op), std::vector<const Tensor*>(inputs), std::move(pull));
  }

  void record_many(Tensor& out, std::string op, const std::vector<const Tensor*>& inputs, PullFn pull) {
    std::vector<std::ptrdiff_t> ids;
    ids.reserve(inputs.size());
    bool any = false;
    for (const Tensor* in : inputs) {
      if (in->requires_grad_) {
        ids.push_back(static_cast<std::ptrdiff_t>(node_for(*in)));
        any = true;
      } else {
        ids.push_back(-1);
      }
    }
    if (!any) return;
    nodes_.push_back(Node{std::move(op), std::move(ids), out.size(), std::move(pull)});
    out.requires_grad_ = true;
    out.tape_serial_ = serial_;
    out.node_ = nodes_.size() - 1;
  }

  /// Runs the reverse sweep from a scalar loss. May be called once per tape.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward() expects a scalar loss");
    if (!loss.requires_grad_) throw std::invalid_argument("backward() on a tensor with no gradient path");
    if (swept_) throw std::logic_error("backward() called twice on one tape");
    swept_ = true;
    grads_.assign(nodes_.size(), {});
    const std::size_t root = node_of(loss, "backward()");
    grads_[root] = {1.0};
    for (std::size_t id = root + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (grads_[id].empty() || !node.pull) continue;
      GradSlots gin(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::ptrdiff_t iid = node.inputs[k];
        if (iid < 0) continue;
        auto& slot = grads_[static_cast<std::size_t>(iid)];
        if (slot.empty()) slot.assign(nodes_[static_cast<std::size_t>(iid)].value_size, 0.0);
        gin[k] = &slot;
      }
      node.pull(grads_[id], gin);
    }
  }

  /// Gradient of the swept loss with respect to `t`. A leaf the loss never
  /// touched yields zeros; asking for a tensor that was never marked as
  /// requiring gradients is a caller error.
  Tensor grad(const Tensor& t) const {
    if (!t.requires_grad_)
      throw std::invalid_argument("grad() on a tensor that does not require gradients");
    if (!swept_) throw std::logic_error("grad() before backward()");
    std::size_t id;
    if (t.tape_serial_ == serial_) {
      id = t.node_;
    } else {
      auto it = leaves_.find(t.storage_id());
      if (it == leaves_.end()) return Tensor::zeros(t.shape());
      id = it->second;
    }
    if (grads_[id].empty()) return Tensor::zeros(t.shape());
    return Tensor::wrap(t.shape(), grads_[id]);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    std::vector<std::ptrdiff_t> inputs;
    std::size_t value_size;
    PullFn pull;
  };

  std::size_t node_for(const Tensor& t) {
    if (t.tape_serial_ == serial_) return t.node_;
    auto it = leaves_.find(t.storage_id());
    if (it != leaves_.end()) return it->second;
    nodes_.push_back(Node{"leaf", {}, t.size(), nullptr});
    const std::size_t id = nodes_.size() - 1;
    leaves_.emplace(t.storage_id(), id);
    return id;
  }

  std::size_t node_of(const Tensor& t, const char* what) const {
    if (t.tape_serial_ == serial_) return t.node_;
    auto it = leaves_.find(t.storage_id());
    if (it == leaves_.end()) throw std::invalid_argument(std::string(what) + " on a tensor foreign to this tape");
    return it->second;
  }

  static std::uint64_t& next_serial() {
    static std::uint64_t serial = 1;
    return serial;
  }
  static Tape*& active_tape() {
    thread_local Tape* active = nullptr;
    return active;
  }

  std::uint64_t serial_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const double*, std::size_t> leaves_;
  bool swept_ = false;

  friend class TapeScope;
};

/// Installs a tape as the thread's active one for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active_tape()) { Tape::active_tape() = &tape; }
  ~TapeScope() { Tape::active_tape() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace epicast
