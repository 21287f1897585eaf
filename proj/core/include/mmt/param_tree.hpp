#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "mmt/tensor.hpp"

namespace mmt {

// Named parameter hierarchy. Paths are "/"-joined strings; iteration is
// lexicographic, which fixes update and serialization order.
template <typename Real>
class ParamTree {
 public:
  using Map = std::map<std::string, Tensor<Real>>;

  void insert(const std::string& path, Tensor<Real> t) {
    if (params_.count(path))
      throw std::runtime_error("duplicate parameter path: " + path);
    params_.emplace(path, std::move(t));
  }

  bool contains(const std::string& path) const { return params_.count(path); }

  Tensor<Real>& at(const std::string& path) {
    auto it = params_.find(path);
    if (it == params_.end())
      throw std::runtime_error("unknown parameter path: " + path);
    return it->second;
  }
  const Tensor<Real>& at(const std::string& path) const {
    return const_cast<ParamTree*>(this)->at(path);
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [path, t] : params_) n += t.size();
    return n;
  }

  // Drops tape node ids, e.g. after the step's tape is cleared.
  void detach() {
    for (auto& [path, t] : params_) t.node = -1;
  }

  template <typename Other>
  ParamTree<Other> cast() const {
    ParamTree<Other> out;
    for (const auto& [path, t] : params_) {
      auto c = t.template cast<Other>();
      c.requires_grad = t.requires_grad;
      out.insert(path, std::move(c));
    }
    return out;
  }

  // Same paths, zero tensors of matching shapes (for optimizer moments).
  ParamTree zeros_like() const {
    ParamTree out;
    for (const auto& [path, t] : params_) out.insert(path, Tensor<Real>(t.shape()));
    return out;
  }

 private:
  Map params_;
};

}  // namespace mmt
