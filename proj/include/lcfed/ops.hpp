#pragma once

// Differentiable tensor operations.
//
// Broadcasting is left-aligned: the lower-rank operand is padded with
// trailing 1s, then each dimension must match or be 1. This covers the
// cases the model needs: scalars, [B,C] against [B,C,H,W], [B,1,H,W]
// against [B,C,H,W] and [1,C] against [B,C].

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "lcfed/tensor.hpp"

namespace lcfed {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[i] : 1;
    const std::size_t db = i < b.size() ? b[i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `s` viewed inside `out`; broadcast dimensions get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = s[i] == 1 ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

template <typename F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t inner = out[r - 1];
  const std::size_t total = lcfed::numel(out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  while (o < total) {
    for (std::size_t j = 0; j < inner; ++j) f(o++, ia + j * sa[r - 1], ib + j * sb[r - 1]);
    std::size_t d = r - 1;
    while (d-- > 0) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

template <BinaryKind K, typename T>
inline T apply_binary(T x, T y) {
  if constexpr (K == BinaryKind::add) return x + y;
  else if constexpr (K == BinaryKind::sub) return x - y;
  else if constexpr (K == BinaryKind::mul) return x * y;
  else return x / y;
}

// Accumulates the gradients of out[k] = a[i] (op) b[j] for one element.
template <BinaryKind K, typename T>
inline void binary_grad(T g, T av, T bv, T* da, T* db) {
  if constexpr (K == BinaryKind::add) {
    if (da) *da += g;
    if (db) *db += g;
  } else if constexpr (K == BinaryKind::sub) {
    if (da) *da += g;
    if (db) *db -= g;
  } else if constexpr (K == BinaryKind::mul) {
    if (da) *da += g * bv;
    if (db) *db += g * av;
  } else {
    const T inv = T(1) / bv;
    if (da) *da += g * inv;
    if (db) *db -= g * av * inv * inv;
  }
}

template <BinaryKind K, typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.data().data();
  const bool same = a.shape() == b.shape();

  if (same) {
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = apply_binary<K>(av[i], bv[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    broadcast_loop(out_shape, sa, sb,
                   [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = apply_binary<K>(av[i], bv[j]); });
  }

  if (any_requires_grad<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    attach(out, {&a, &b}, [ai, bi, out_shape, same](const TensorImpl<T>& o) {
      const T* g = o.grad.data();
      const T* ad = ai->data.data();
      const T* bd = bi->data.data();
      T* ga = ai->requires_grad ? ai->grad.data() : nullptr;
      T* gb = bi->requires_grad ? bi->grad.data() : nullptr;
      if (same) {
        const std::size_t n = o.grad.size();
        if constexpr (K == BinaryKind::add || K == BinaryKind::sub) {
          const T sign = K == BinaryKind::add ? T(1) : T(-1);
          if (ga)
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          if (gb)
            for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
        } else if constexpr (K == BinaryKind::mul) {
          if (ga)
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bd[i];
          if (gb)
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ad[i];
        } else {
          for (std::size_t i = 0; i < n; ++i)
            binary_grad<K>(g[i], ad[i], bd[i], ga ? ga + i : nullptr, gb ? gb + i : nullptr);
        }
        return;
      }
      auto sa = broadcast_strides(ai->shape, out_shape);
      auto sb = broadcast_strides(bi->shape, out_shape);
      broadcast_loop(out_shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) {
        binary_grad<K>(g[k], ad[i], bd[j], ga ? ga + i : nullptr, gb ? gb + j : nullptr);
      });
    });
  }
  return out;
}

/// Elementwise unary op with derivative expressed through (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const auto& av = a.values();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  if (any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    attach(out, {&a}, [ai, deriv](const TensorImpl<T>& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        ai->grad[i] += o.grad[i] * deriv(ai->data[i], o.data[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<detail::BinaryKind::add>(a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<detail::BinaryKind::sub>(a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<detail::BinaryKind::mul>(a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<detail::BinaryKind::div>(a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Logistic function clamped to the open interval (0,1) so that saturated
/// inputs never produce an exact 0 or 1.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a,
      [](T x) {
        constexpr T lo = std::numeric_limits<T>::min();
        constexpr T hi = T(1) - std::numeric_limits<T>::epsilon();
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        return std::clamp(s, lo, hi);
      },
      [](T, T s) { return s * (T(1) - s); });
}

/// Square root whose derivative at exactly 0 is taken as 0.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Same values, no gradient path back into `a`.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return a.detach();
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    detail::attach(out, {&a}, [ai](const TensorImpl<T>& o) {
      for (auto& g : ai->grad) g += o.grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Expands `a` to `shape` under the broadcasting rule above.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape) {
  if (detail::broadcast_shape(a.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return add(Tensor<T>::zeros(shape), a);
}

namespace detail {
inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(r) + " tensor, got " +
                     shape_str(s));
  }
}
}  // namespace detail

/// [B,C,H,W] -> [B,C], summing each channel plane.
template <typename T>
Tensor<T> sum_spatial(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "sum_spatial");
  const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  const auto& xv = x.values();
  auto ov = out.data();
  for (std::size_t i = 0; i < bc; ++i) {
    T acc = T(0);
    for (std::size_t p = 0; p < hw; ++p) acc += xv[i * hw + p];
    ov[i] = acc;
  }
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    detail::attach(out, {&x}, [xi, bc, hw](const TensorImpl<T>& o) {
      for (std::size_t i = 0; i < bc; ++i)
        for (std::size_t p = 0; p < hw; ++p) xi->grad[i * hw + p] += o.grad[i];
    });
  }
  return out;
}

/// Per-channel spatial mean: [B,C,H,W] -> [B,C].
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "global_average_pool");
  return scale(sum_spatial(x), T(1) / static_cast<T>(x.dim(2) * x.dim(3)));
}

/// Mean over the channel axis: [B,C,H,W] -> [B,1,H,W].
template <typename T>
Tensor<T> mean_channels(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "mean_channels");
  const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({B, 1, x.dim(2), x.dim(3)});
  const auto& xv = x.values();
  auto ov = out.data();
  const T inv = T(1) / static_cast<T>(C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      T acc = T(0);
      for (std::size_t c = 0; c < C; ++c) acc += xv[(b * C + c) * hw + p];
      ov[b * hw + p] = acc * inv;
    }
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    detail::attach(out, {&x}, [xi, B, C, hw, inv](const TensorImpl<T>& o) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < hw; ++p) xi->grad[(b * C + c) * hw + p] += o.grad[b * hw + p] * inv;
    });
  }
  return out;
}

/// Concatenates along axis 1; all other dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw ShapeError("concat needs rank >= 2, got " + shape_str(s0));
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size() && s[0] == s0[0];
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == s0[d];
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(s0) + " vs " + shape_str(s));
    channels += s[1];
  }
  Shape out_shape = s0;
  out_shape[1] = channels;
  const std::size_t outer = s0[0];
  const std::size_t inner = lcfed::numel(s0) / (s0[0] * s0[1]);
  Tensor<T> out(out_shape);
  auto ov = out.data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(1) * inner;
    const auto& pv = p.values();
    for (std::size_t b = 0; b < outer; ++b)
      std::copy_n(pv.begin() + b * chunk, chunk, ov.begin() + b * channels * inner + off * inner);
    off += p.dim(1);
  }
  if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); })) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    detail::attach_many<T>(out, parts, [impls, offsets, outer, channels, inner](const TensorImpl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto& pi = *impls[k];
        if (!pi.requires_grad) continue;
        const std::size_t chunk = pi.shape[1] * inner;
        for (std::size_t b = 0; b < outer; ++b)
          for (std::size_t j = 0; j < chunk; ++j)
            pi.grad[b * chunk + j] += o.grad[b * channels * inner + offsets[k] * inner + j];
      }
    });
  }
  return out;
}

/// [M,K] x [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  using detail::ConstMatMap;
  using detail::MatMap;
  Tensor<T> out({M, N});
  MatMap<T>(out.data().data(), M, N).noalias() =
      ConstMatMap<T>(a.values().data(), M, K) * ConstMatMap<T>(b.values().data(), K, N);
  if (detail::any_requires_grad<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    detail::attach(out, {&a, &b}, [ai, bi, M, K, N](const TensorImpl<T>& o) {
      ConstMatMap<T> g(o.grad.data(), M, N);
      if (ai->requires_grad)
        MatMap<T>(ai->grad.data(), M, K).noalias() += g * ConstMatMap<T>(bi->data.data(), K, N).transpose();
      if (bi->requires_grad)
        MatMap<T>(bi->grad.data(), K, N).noalias() += ConstMatMap<T>(ai->data.data(), M, K).transpose() * g;
    });
  }
  return out;
}

/// Same data, new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (lcfed::numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.values());
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    detail::attach(out, {&a}, [ai](const TensorImpl<T>& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
    });
  }
  return out;
}

/// y = x W + bias for x:[B,Cin], W:[Cin,Cout], bias:[Cout].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_rank(bias.shape(), 1, "fully_connected bias");
  if (w.rank() != 2 || bias.dim(0) != w.dim(1)) {
    throw ShapeError("fully_connected bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  return add(matmul(x, w), reshape(bias, {1, bias.dim(0)}));
}

}  // namespace lcfed
