#pragma once

// Spatial layers: cross-correlation, 2x max-pool, 2x nearest upsample,
// per-pixel linear maps and instance normalization.

#include <algorithm>
#include <cmath>
#include <utility>
#include <limits>
#include <memory>
#include <vector>

#include "lcfed/ops.hpp"

namespace lcfed {

namespace detail {

// Fixed left-to-right order; Eigen's vectorized sum depends on buffer alignment.
template <typename T>
T row_sum(const T* p, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

// Output columns ox with 0 <= ox*stride + j - pad < W.
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t j, std::size_t stride, std::size_t pad,
                                                      std::size_t W, std::size_t Wo) {
  std::size_t lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
  std::size_t hi = (W + pad > j) ? (W + pad - j - 1) / stride + 1 : 0;
  lo = std::min(lo, Wo);
  hi = std::clamp(hi, lo, Wo);
  return {lo, hi};
}

// cols[(c*k + i)*k + j][oy*Wo + ox] = x[c][oy*s - p + i][ox*s - p + j] (0 outside).
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t Ho, std::size_t Wo, T* cols) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        T* row = cols + ((c * k + i) * k + j) * Ho * Wo;
        const auto [lo, hi] = valid_cols(j, stride, pad, W, Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          T* dst = row + oy * Wo;
          if (y < 0 || y >= static_cast<long>(H)) {
            std::fill_n(dst, Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(y)) * W + j - pad;
          std::fill(dst, dst + lo, T(0));
          if (stride == 1)
            std::copy(src + lo, src + hi, dst + lo);
          else
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          std::fill(dst + hi, dst + Wo, T(0));
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t Ho, std::size_t Wo, T* dx) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const T* row = cols + ((c * k + i) * k + j) * Ho * Wo;
        const auto [lo, hi] = valid_cols(j, stride, pad, W, Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
          if (y < 0 || y >= static_cast<long>(H)) continue;
          T* dst = dx + (c * H + static_cast<std::size_t>(y)) * W + j - pad;
          const T* src = row + oy * Wo;
          if (stride == 1)
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          else
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip).
/// x:[B,Cin,H,W], kernels:[Cout,Cin,k,k], bias:[Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias = {},
                 std::size_t stride = 1, std::size_t pad = std::numeric_limits<std::size_t>::max()) {
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(kernels.shape(), 4, "conv2d kernels");
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != Cin) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", kernels " +
                     shape_str(kernels.shape()));
  }
  if (kernels.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d needs square odd kernels, got " + shape_str(kernels.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  if (pad == std::numeric_limits<std::size_t>::max()) pad = k / 2;
  if (H + 2 * pad < k || W + 2 * pad < k) throw ShapeError("conv2d kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " does not match " + std::to_string(Cout) +
                     " output channels");
  }
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t rows = Cin * k * k, hw = Ho * Wo;

  Tensor<T> out({B, Cout, Ho, Wo});
  const bool track = detail::any_requires_grad<T>({&x, &kernels, &bias});
  // Columns are kept for the weight gradient.
  std::shared_ptr<T[]> cols(std::make_unique_for_overwrite<T[]>(B * rows * hw));
  using detail::ConstMatMap;
  using detail::MatMap;
  ConstMatMap<T> wmat(kernels.values().data(), Cout, rows);
  for (std::size_t b = 0; b < B; ++b) {
    T* cb = cols.get() + b * rows * hw;
    detail::im2col(x.values().data() + b * Cin * H * W, Cin, H, W, k, stride, pad, Ho, Wo, cb);
    MatMap<T> ob(out.data().data() + b * Cout * hw, Cout, hw);
    ob.noalias() = wmat * ConstMatMap<T>(cb, rows, hw);
    if (bias.defined())
      for (std::size_t o = 0; o < Cout; ++o) ob.row(o).array() += bias.values()[o];
  }
  if (track) {
    auto xi = x.impl(), wi = kernels.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    detail::attach(out, {&x, &kernels, &bias},
                   [xi, wi, bi, cols, B, Cin, H, W, Cout, k, stride, pad, Ho, Wo, rows,
                    hw](const TensorImpl<T>& o) {
                     ConstMatMap<T> wm(wi->data.data(), Cout, rows);
                     std::unique_ptr<T[]> dcols;
                     if (xi->requires_grad) dcols = std::make_unique_for_overwrite<T[]>(rows * hw);
                     for (std::size_t b = 0; b < B; ++b) {
                       ConstMatMap<T> g(o.grad.data() + b * Cout * hw, Cout, hw);
                       if (wi->requires_grad)
                         MatMap<T>(wi->grad.data(), Cout, rows).noalias() +=
                             g * ConstMatMap<T>(cols.get() + b * rows * hw, rows, hw).transpose();
                       if (bi && bi->requires_grad)
                         for (std::size_t c = 0; c < Cout; ++c) bi->grad[c] += detail::row_sum(g.data() + c * hw, hw);
                       if (xi->requires_grad) {
                         MatMap<T>(dcols.get(), rows, hw).noalias() = wm.transpose() * g;
                         detail::col2im(dcols.get(), Cin, H, W, k, stride, pad, Ho, Wo,
                                        xi->grad.data() + b * Cin * H * W);
                       }
                     }
                   });
  }
  return out;
}

/// 2x2 max-pool, stride 2. Ties route the gradient to the first maximum.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "max_pool2");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("max_pool2 needs even spatial size, got " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({B, C, Ho, Wo});
  std::vector<std::size_t> arg(out.numel());
  const auto& xv = x.values();
  auto ov = out.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t base = bc * H * W + 2 * oy * W + 2 * ox;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + W, base + W + 1})
          if (xv[cand] > xv[best]) best = cand;
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        ov[o] = xv[best];
        arg[o] = best;
      }
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    detail::attach(out, {&x}, [xi, arg = std::move(arg)](const TensorImpl<T>& o) {
      for (std::size_t i = 0; i < arg.size(); ++i) xi->grad[arg[i]] += o.grad[i];
    });
  }
  return out;
}

/// 2x nearest-neighbour upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample2");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  Tensor<T> out({B, C, Ho, Wo});
  const auto& xv = x.values();
  auto ov = out.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) ov[(bc * Ho + y) * Wo + xx] = xv[(bc * H + y / 2) * W + xx / 2];
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    detail::attach(out, {&x}, [xi, B, C, H, W, Ho, Wo](const TensorImpl<T>& o) {
      for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t xx = 0; xx < Wo; ++xx)
            xi->grad[(bc * H + y / 2) * W + xx / 2] += o.grad[(bc * Ho + y) * Wo + xx];
    });
  }
  return out;
}

/// Applies the same linear map to every pixel's channel vector.
/// x:[B,C,H,W], W:[C,N], bias:[N] -> [B,N,H,W]. Equivalent to a 1x1 conv.
template <typename T>
Tensor<T> per_pixel_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_rank(x.shape(), 4, "per_pixel_linear input");
  detail::require_rank(w.shape(), 2, "per_pixel_linear weight");
  const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3), N = w.dim(1);
  if (w.dim(0) != C || bias.rank() != 1 || bias.dim(0) != N) {
    throw ShapeError("per_pixel_linear mismatch: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(w.shape()) + ", bias " + shape_str(bias.shape()));
  }
  using detail::ConstMatMap;
  using detail::MatMap;
  Tensor<T> out({B, N, x.dim(2), x.dim(3)});
  ConstMatMap<T> wm(w.values().data(), C, N);
  for (std::size_t b = 0; b < B; ++b) {
    MatMap<T> ob(out.data().data() + b * N * hw, N, hw);
    ob.noalias() = wm.transpose() * ConstMatMap<T>(x.values().data() + b * C * hw, C, hw);
    for (std::size_t n = 0; n < N; ++n) ob.row(n).array() += bias.values()[n];
  }
  if (detail::any_requires_grad<T>({&x, &w, &bias})) {
    auto xi = x.impl(), wi = w.impl(), bi = bias.impl();
    detail::attach(out, {&x, &w, &bias}, [xi, wi, bi, B, C, hw, N](const TensorImpl<T>& o) {
      for (std::size_t b = 0; b < B; ++b) {
        ConstMatMap<T> g(o.grad.data() + b * N * hw, N, hw);
        if (wi->requires_grad)
          MatMap<T>(wi->grad.data(), C, N).noalias() +=
              ConstMatMap<T>(xi->data.data() + b * C * hw, C, hw) * g.transpose();
        if (bi->requires_grad)
          for (std::size_t n = 0; n < N; ++n) bi->grad[n] += detail::row_sum(g.data() + n * hw, hw);
        if (xi->requires_grad)
          MatMap<T>(xi->grad.data() + b * C * hw, C, hw).noalias() += ConstMatMap<T>(wi->data.data(), C, N) * g;
      }
    });
  }
  return out;
}

/// Instance normalization with per-channel affine (gamma, beta).
///
/// Rank 2 input [B,C]: each sample is normalized over its C entries.
/// Rank 4 input [B,C,H,W]: each (sample, channel) plane is normalized over H*W.
/// Variance is the biased (1/n) estimate. A group of one element has no
/// defined variance and is rejected.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("instance_norm expects [B,C] or [B,C,H,W], got " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1);
  const bool vec = x.rank() == 2;
  const std::size_t groups = vec ? B : B * C;
  const std::size_t n = vec ? C : x.dim(2) * x.dim(3);
  if (n < 2) throw ShapeError("instance_norm group of size 1 in " + shape_str(x.shape()) + ": variance undefined");
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("instance_norm affine parameters must have " + std::to_string(C) + " entries");
  }
  // Affine parameters of group g start at goff(g) and advance by cstep per element.
  const std::size_t cstep = vec ? 1 : 0;
  auto goff = [vec, C](std::size_t g) { return vec ? std::size_t{0} : g % C; };

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel()), inv_std(groups);
  const T* xv = x.values().data();
  const T* gv = gamma.values().data();
  const T* bv = beta.values().data();
  T* ov = out.data().data();
  for (std::size_t g = 0; g < groups; ++g) {
    const T* px = xv + g * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += px[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (px[j] - mu) * (px[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[g] = is;
    T* xh = xhat.data() + g * n;
    T* po = ov + g * n;
    const T* ga = gv + goff(g);
    const T* be = bv + goff(g);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (px[j] - mu) * is;
      po[j] = xh[j] * ga[j * cstep] + be[j * cstep];
    }
  }
  if (detail::any_requires_grad<T>({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    detail::attach(out, {&x, &gamma, &beta},
                   [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), groups, n, cstep,
                    goff](const TensorImpl<T>& o) {
                     std::vector<T> dxhat(n);
                     for (std::size_t g = 0; g < groups; ++g) {
                       const T* go = o.grad.data() + g * n;
                       const T* xh = xhat.data() + g * n;
                       const T* ga = gi->data.data() + goff(g);
                       if (gi->requires_grad) {
                         T* dg = gi->grad.data() + goff(g);
                         if (cstep)
                           for (std::size_t j = 0; j < n; ++j) dg[j] += go[j] * xh[j];
                         else {
                           T acc = T(0);
                           for (std::size_t j = 0; j < n; ++j) acc += go[j] * xh[j];
                           *dg += acc;
                         }
                       }
                       if (bi->requires_grad) {
                         T* db = bi->grad.data() + goff(g);
                         if (cstep)
                           for (std::size_t j = 0; j < n; ++j) db[j] += go[j];
                         else {
                           T acc = T(0);
                           for (std::size_t j = 0; j < n; ++j) acc += go[j];
                           *db += acc;
                         }
                       }
                       if (!xi->requires_grad) continue;
                       T mean_d = T(0), mean_dx = T(0);
                       for (std::size_t j = 0; j < n; ++j) {
                         dxhat[j] = go[j] * ga[j * cstep];
                         mean_d += dxhat[j];
                         mean_dx += dxhat[j] * xh[j];
                       }
                       mean_d /= static_cast<T>(n);
                       mean_dx /= static_cast<T>(n);
                       T* dx = xi->grad.data() + g * n;
                       const T is = inv_std[g];
                       for (std::size_t j = 0; j < n; ++j) dx[j] += is * (dxhat[j] - mean_d - xh[j] * mean_dx);
                     }
                   });
  }
  return out;
}

}  // namespace lcfed
