#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "lcfed/ops.hpp"

namespace lcfed {

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kDefaultLambda = 0.1;

/// Soft Dice loss 1 - (2|S*G| + eps) / (|S| + |G| + eps), computed per
/// (sample, class) over the spatial plane and averaged.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& s, const Tensor<T>& g, double smooth = kDiceSmooth) {
  detail::require_rank(s.shape(), 4, "dice_loss");
  if (s.shape() != g.shape()) {
    throw ShapeError("dice_loss shapes differ: " + shape_str(s.shape()) + " vs " + shape_str(g.shape()));
  }
  const T eps = static_cast<T>(smooth);
  auto inter = sum_spatial(mul(s, g));
  auto denom = add(sum_spatial(s), sum_spatial(g));
  auto dice = div(add_scalar(scale(inter, T(2)), eps), add_scalar(denom, eps));
  return add_scalar(neg(mean(dice)), T(1));
}

template <typename T>
struct LossBreakdown {
  Tensor<T> coarse;
  Tensor<T> calib;
  Tensor<T> con;
  Tensor<T> joint;
  double lambda = kDefaultLambda;
};

/// joint = coarse + calib + lambda * con. Throws on any non-finite term so
/// that a diverged step never reaches the optimizer.
template <typename T>
LossBreakdown<T> joint_loss(const Tensor<T>& coarse, const Tensor<T>& calib, const Tensor<T>& con,
                            double lambda = kDefaultLambda) {
  for (const auto* t : {&coarse, &calib, &con}) {
    if (t->numel() != 1) throw ShapeError("loss terms must be scalars, got " + shape_str(t->shape()));
    if (!std::isfinite(static_cast<double>(t->item()))) {
      throw std::runtime_error("non-finite loss term: coarse=" + std::to_string(coarse.item()) +
                               " calib=" + std::to_string(calib.item()) + " con=" + std::to_string(con.item()));
    }
  }
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  auto joint = add(add(coarse, calib), scale(con, static_cast<T>(lambda)));
  return {coarse, calib, con, joint, lambda};
}

}  // namespace lcfed
