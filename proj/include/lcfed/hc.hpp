#pragma once

// Disagreement-aware head calibration.
//
// Every site's coarse head is evaluated on the local decoder feature. The
// spread of those maps around the local map (a per-class standard
// deviation over sites) is sharpened by window non-maximum suppression,
// widened by a peak-normalized Gaussian, averaged over classes and used as
// a residual spatial gate on the feature before the calibrated head.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lcfed/nn.hpp"

namespace lcfed {

template <typename T>
struct HeadParams {
  Tensor<T> weight;  // [C,N]
  Tensor<T> bias;    // [N]
};

/// Coarse heads of all K sites as relayed by the server, stamped with the
/// round after which they were collected.
template <typename T>
struct HeadCollection {
  std::vector<HeadParams<T>> heads;
  std::size_t round_stamp = 0;

  std::size_t size() const { return heads.size(); }

  void validate() const {
    for (const auto& h : heads) {
      if (h.weight.shape() != heads.front().weight.shape() || h.bias.shape() != heads.front().bias.shape()) {
        throw ShapeError("head collection mixes head shapes " + shape_str(h.weight.shape()) + " and " +
                         shape_str(heads.front().weight.shape()));
      }
    }
  }
};

template <typename T>
Tensor<T> apply_head(const Tensor<T>& f_hat, const HeadParams<T>& head) {
  return sigmoid(per_pixel_linear(f_hat, head.weight, head.bias));
}

/// One probability map per head, in collection order.
template <typename T>
std::vector<Tensor<T>> evaluate_heads(const Tensor<T>& f_hat, const HeadCollection<T>& heads) {
  heads.validate();
  std::vector<Tensor<T>> maps;
  maps.reserve(heads.size());
  for (const auto& h : heads.heads) maps.push_back(apply_head(f_hat, h));
  return maps;
}

/// U = sqrt( 1/(K-1) * sum_i (S_k - S_i)^2 ), elementwise over [B,N,H,W].
/// The i = k term contributes zero. Fewer than two maps give U = 0.
template <typename T>
Tensor<T> disagreement_map(const std::vector<Tensor<T>>& maps, std::size_t k) {
  if (k >= maps.size()) throw std::invalid_argument("local site index out of range for disagreement map");
  const auto& local = maps[k];
  if (maps.size() < 2) return Tensor<T>::zeros(local.shape());
  Tensor<T> acc;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].shape() != local.shape()) {
      throw ShapeError("segmentation maps differ in shape: " + shape_str(maps[i].shape()) + " vs " +
                       shape_str(local.shape()));
    }
    auto d = square(sub(local, maps[i]));
    acc = acc.defined() ? add(acc, d) : d;
  }
  return lcfed::sqrt(scale(acc, T(1) / static_cast<T>(maps.size() - 1)));
}

namespace detail {

// Max over a clipped window of half-width r along one axis of each row.
template <typename T>
void window_max_rows(const T* in, T* out, std::size_t rows, std::size_t len, std::size_t stride_elem,
                     std::size_t stride_row, std::size_t r) {
  for (std::size_t row = 0; row < rows; ++row)
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t lo = i >= r ? i - r : 0, hi = std::min(len - 1, i + r);
      T m = in[row * stride_row + lo * stride_elem];
      for (std::size_t j = lo + 1; j <= hi; ++j) m = std::max(m, in[row * stride_row + j * stride_elem]);
      out[row * stride_row + i * stride_elem] = m;
    }
}

inline void check_window(std::size_t size, const char* what) {
  if (size == 0 || size % 2 == 0) {
    throw std::invalid_argument(std::string(what) + " must be a positive odd number, got " + std::to_string(size));
  }
}

}  // namespace detail

/// 1 where the element is >= every value in its delta x delta window
/// (clipped at the borders), else 0. Each [H,W] plane is independent.
template <typename T>
std::vector<T> nms_mask(std::span<const T> values, const Shape& shape, std::size_t delta) {
  detail::check_window(delta, "NMS window");
  detail::require_rank(shape, 4, "nms");
  const std::size_t planes = shape[0] * shape[1], H = shape[2], W = shape[3], r = delta / 2;
  std::vector<T> rowmax(values.size()), winmax(values.size()), mask(values.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = values.data() + p * H * W;
    detail::window_max_rows(in, rowmax.data() + p * H * W, H, W, 1, W, r);
    detail::window_max_rows(rowmax.data() + p * H * W, winmax.data() + p * H * W, W, H, W, 1, r);
  }
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] >= winmax[i] ? T(1) : T(0);
  return mask;
}

/// Keeps window maxima (ties survive) and zeroes everything else.
/// Survivors pass their gradient through unchanged.
template <typename T>
Tensor<T> nms2d(const Tensor<T>& u, std::size_t delta) {
  Tensor<T> mask(u.shape(), nms_mask<T>(u.values(), u.shape(), delta));
  return mul(u, mask);
}

/// Peak-normalized 1-D Gaussian taps exp(-d^2 / (2 sigma^2)), d = -size/2..size/2.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  detail::check_window(size, "Gaussian size");
  if (!(sigma > 0.0)) throw std::invalid_argument("Gaussian sigma must be positive");
  const long r = static_cast<long>(size / 2);
  std::vector<double> taps;
  for (long d = -r; d <= r; ++d) taps.push_back(std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma)));
  return taps;
}

namespace detail {

// Zero-padded separable correlation of each [H,W] plane with taps x taps.
template <typename T>
void gaussian_planes(const T* in, T* out, std::size_t planes, std::size_t H, std::size_t W,
                     const std::vector<T>& taps) {
  const long r = static_cast<long>(taps.size() / 2);
  std::vector<T> tmp(H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in + p * H * W;
    T* dst = out + p * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        T acc = T(0);
        for (long d = -r; d <= r; ++d) {
          const long xx = static_cast<long>(x) + d;
          if (xx >= 0 && xx < static_cast<long>(W)) acc += taps[d + r] * src[y * W + xx];
        }
        tmp[y * W + x] = acc;
      }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        T acc = T(0);
        for (long d = -r; d <= r; ++d) {
          const long yy = static_cast<long>(y) + d;
          if (yy >= 0 && yy < static_cast<long>(H)) acc += taps[d + r] * tmp[yy * W + x];
        }
        dst[y * W + x] = acc;
      }
  }
}

}  // namespace detail

/// Correlates each plane with the peak-normalized 2-D Gaussian
/// g(dx,dy) = exp(-(dx^2+dy^2)/(2 sigma^2)), zero padding at the borders.
template <typename T>
Tensor<T> gaussian_spread(const Tensor<T>& u, std::size_t size, double sigma) {
  detail::require_rank(u.shape(), 4, "gaussian_spread");
  std::vector<T> taps;
  for (double t : gaussian_taps(size, sigma)) taps.push_back(static_cast<T>(t));
  const std::size_t planes = u.dim(0) * u.dim(1), H = u.dim(2), W = u.dim(3);
  Tensor<T> out(u.shape());
  detail::gaussian_planes(u.values().data(), out.data().data(), planes, H, W, taps);
  if (detail::any_requires_grad<T>({&u})) {
    auto ui = u.impl();
    // The kernel is symmetric, so the adjoint is the same correlation.
    detail::attach(out, {&u}, [ui, taps, planes, H, W](const TensorImpl<T>& o) {
      std::vector<T> g(o.grad.size());
      detail::gaussian_planes(o.grad.data(), g.data(), planes, H, W, taps);
      for (std::size_t i = 0; i < g.size(); ++i) ui->grad[i] += g[i];
    });
  }
  return out;
}

/// f* = f + a * f, where a is the attention map averaged over classes and
/// broadcast over feature channels.
template <typename T>
Tensor<T> calibrate(const Tensor<T>& f_hat, const Tensor<T>& attention) {
  detail::require_rank(f_hat.shape(), 4, "calibrate feature");
  detail::require_rank(attention.shape(), 4, "calibrate attention");
  if (attention.dim(0) != f_hat.dim(0) || attention.dim(2) != f_hat.dim(2) || attention.dim(3) != f_hat.dim(3)) {
    throw ShapeError("attention " + shape_str(attention.shape()) + " does not spatially match feature " +
                     shape_str(f_hat.shape()));
  }
  return add(f_hat, mul(f_hat, mean_channels(attention)));
}

}  // namespace lcfed
