#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lcfed/tensor.hpp"

namespace lcfed {

/// Ownership class of a parameter. The base body is aggregated by the
/// server, heads stay with their site, and the channel-selection generator
/// is aggregated unless it is configured as personal.
enum class Group { body, pcs, head };

inline std::string_view group_name(Group g) {
  switch (g) {
    case Group::body: return "body";
    case Group::pcs: return "pcs";
    case Group::head: return "head";
  }
  return "?";
}

inline Group parse_group(std::string_view s) {
  if (s == "body") return Group::body;
  if (s == "pcs") return Group::pcs;
  if (s == "head") return Group::head;
  throw std::invalid_argument("unknown parameter group '" + std::string(s) + "'");
}

template <typename T>
struct NamedParam {
  std::string name;
  Group group;
  Tensor<T> value;
};

/// Ordered, uniquely named parameter collection. Copies share tensors;
/// use clone() for an independent copy.
template <typename T>
class ParamSet {
 public:
  Tensor<T>& add(std::string name, Group group, Tensor<T> value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    params_.push_back({std::move(name), group, std::move(value)});
    return params_.back().value;
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  const NamedParam<T>& operator[](std::size_t i) const { return params_[i]; }
  NamedParam<T>& operator[](std::size_t i) { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const NamedParam<T>* find(std::string_view name) const {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
    return it == params_.end() ? nullptr : &*it;
  }
  const Tensor<T>& at(std::string_view name) const {
    const auto* p = find(name);
    if (!p) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return p->value;
  }

  /// Shares the tensors whose group satisfies `keep`.
  ParamSet subset(const std::function<bool(Group)>& keep) const {
    ParamSet out;
    for (const auto& p : params_)
      if (keep(p.group)) out.params_.push_back(p);
    return out;
  }

  ParamSet clone() const {
    ParamSet out;
    for (const auto& p : params_) out.params_.push_back({p.name, p.group, p.value.clone()});
    return out;
  }

  /// Overwrites values of same-named parameters; every entry of `src` must exist here.
  void assign_from(const ParamSet& src) {
    for (const auto& s : src.params_) {
      auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == s.name; });
      if (it == params_.end()) throw std::out_of_range("no parameter named '" + s.name + "'");
      if (it->value.shape() != s.value.shape()) {
        throw ShapeError("parameter '" + s.name + "' shape " + shape_str(s.value.shape()) + " does not match " +
                         shape_str(it->value.shape()));
      }
      std::copy(s.value.values().begin(), s.value.values().end(), it->value.data().begin());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

 private:
  std::vector<NamedParam<T>> params_;
};

/// Same names, groups and shapes in the same order.
template <typename T>
bool aligned(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].group != b[i].group || a[i].value.shape() != b[i].value.shape())
      return false;
  return true;
}

}  // namespace lcfed
