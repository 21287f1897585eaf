#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "mmt/param_tree.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Reverse-mode tape. Ops append one node per primitive application in
// execution order, which is a topological order by construction; backward
// walks the list once in reverse. One logical writer per tape.
template <typename Real>
class Tape {
 public:
  explicit Tape(bool active = true) : active_(active) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool active() const { return active_; }

  // Registers a leaf. The returned handle shares storage with the input.
  Tensor<Real> watch(Tensor<Real> t) {
    t.requires_grad = true;
    t.node = active_ ? new_node() : -1;
    return t;
  }

  void watch_all(ParamTree<Real>& params) {
    for (auto& [path, t] : params) {
      t.requires_grad = true;
      t.node = active_ ? new_node() : -1;
    }
  }

  using BackwardFn = std::function<void(Tape&, const Tensor<Real>&)>;

  int record(BackwardFn fn) {
    const int id = new_node();
    nodes_[id].backward = std::move(fn);
    return id;
  }

  // Adds g into the gradient slot of `node`. Slots alias their first
  // contribution and only copy when a second contribution arrives.
  void accumulate(int node, const Tensor<Real>& g) {
    auto& slot = grads_[node];
    if (!slot.g.defined()) {
      slot.g = g;
      slot.owned = false;
      return;
    }
    if (slot.g.size() != g.size())
      throw shape_error("gradient shape mismatch: " + shape_str(slot.g.shape()) +
                        " vs " + shape_str(g.shape()));
    if (!slot.owned) {
      slot.g = slot.g.clone();
      slot.owned = true;
    }
    Real* dst = slot.g.data();
    const Real* src = g.data();
    for (std::int64_t i = 0, n = g.size(); i < n; ++i) dst[i] += src[i];
  }

  // Backpropagates from a scalar loss. The node list is released afterward;
  // a second backward on the same tape is a contract violation.
  void backward(const Tensor<Real>& loss) {
    if (consumed_)
      throw std::runtime_error("backward called twice on one tape");
    if (loss.size() != 1)
      throw shape_error("backward requires a scalar loss, got " +
                        shape_str(loss.shape()));
    if (loss.node < 0)
      throw std::runtime_error("loss is not connected to this tape");
    consumed_ = true;
    accumulate(loss.node, Tensor<Real>::scalar(Real(1)));
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (!nodes_[id].backward) continue;  // leaf
      const auto& slot = grads_[id];
      if (!slot.g.defined()) continue;  // no path to the loss
      nodes_[id].backward(*this, slot.g);
      nodes_[id].backward = nullptr;
    }
    nodes_.clear();
  }

  // Gradient of `loss` w.r.t. every requires_grad leaf in `watched`;
  // untouched leaves get zeros of matching shape.
  ParamTree<Real> gradients(const Tensor<Real>& loss,
                            const ParamTree<Real>& watched) {
    if (!consumed_) backward(loss);
    ParamTree<Real> out;
    for (const auto& [path, t] : watched) {
      if (!t.requires_grad) continue;
      if (t.node >= 0 && grads_[t.node].g.defined())
        out.insert(path, grads_[t.node].g.reshaped(t.shape()));
      else
        out.insert(path, Tensor<Real>(t.shape()));
    }
    return out;
  }

  const Tensor<Real>* grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
    return grads_[node].g.defined() ? &grads_[node].g : nullptr;
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
    consumed_ = false;
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    BackwardFn backward;  // empty for leaves
  };
  struct GradSlot {
    Tensor<Real> g;
    bool owned = false;
  };

  int new_node() {
    nodes_.emplace_back();
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<GradSlot> grads_;
  bool active_;
  bool consumed_ = false;
};

}  // namespace mmt
