#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lcfed/params.hpp"

namespace lcfed {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are aligned with the order of
/// the ParamSet passed to step(). A parameter that has never received a
/// gradient is left untouched.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opts) : opts_(opts) {}

  void step(ParamSet<T>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.numel(), T(0));
        v_.emplace_back(p.value.numel(), T(0));
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("Adam state does not match parameter set");
    ++t_;
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T c1 = T(1) - static_cast<T>(std::pow(opts_.beta1, static_cast<double>(t_)));
    const T c2 = T(1) - static_cast<T>(std::pow(opts_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(opts_.lr), eps = static_cast<T>(opts_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].value;
      if (!p.has_grad()) continue;
      auto w = p.data();
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  std::uint64_t steps() const { return t_; }
  bool initialized() const { return !m_.empty(); }

  // Raw state access for checkpointing.
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamOptions opts_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace lcfed
