#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcfed/data.hpp"

namespace lcfed {

namespace detail {
inline void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": mask sizes differ (" + std::to_string(a) + " vs " +
                                          std::to_string(b) + ")");
}
}  // namespace detail

/// |pred & gt| / |pred | gt|; two empty masks score 1.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  detail::check_same_size(pred.size(), gt.size(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += (pred[i] && gt[i]) ? 1 : 0;
    uni += (pred[i] || gt[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Foreground pixels with at least one 4-neighbour in the background.
/// Pixels outside the image count as background.
inline std::vector<std::uint8_t> boundary(std::span<const std::uint8_t> mask, std::size_t H, std::size_t W) {
  detail::check_same_size(mask.size(), H * W, "boundary");
  std::vector<std::uint8_t> b(H * W, 0);
  auto fg = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(H) && x < static_cast<long>(W) && mask[y * W + x];
  };
  for (long y = 0; y < static_cast<long>(H); ++y)
    for (long x = 0; x < static_cast<long>(W); ++x)
      if (fg(y, x) && !(fg(y - 1, x) && fg(y + 1, x) && fg(y, x - 1) && fg(y, x + 1))) b[y * W + x] = 1;
  return b;
}

namespace detail {

// 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[0]] == inf) {
      v[0] = q;
      continue;
    }
    double s;
    for (;;) {
      const double p = static_cast<double>(v[k]);
      const double qq = static_cast<double>(q);
      s = ((f[q] + qq * qq) - (f[v[k]] + p * p)) / (2.0 * qq - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (f[v[0]] == inf) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// of `sites` (separable lower-envelope transform). Infinity if none is set.
inline std::vector<double> squared_distance_transform(std::span<const std::uint8_t> sites, std::size_t H,
                                                      std::size_t W) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(H * W);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = sites[i] ? 0.0 : inf;
  const std::size_t n = std::max(H, W);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) f[y] = g[y * W + x];
    detail::edt_1d(f.data(), H, d.data(), v, z);
    for (std::size_t y = 0; y < H; ++y) g[y * W + x] = d[y];
  }
  for (std::size_t y = 0; y < H; ++y) {
    detail::edt_1d(g.data() + y * W, W, d.data(), v, z);
    std::copy_n(d.data(), W, g.data() + y * W);
  }
  return g;
}

/// Average symmetric surface distance in pixels between the 4-connected
/// boundaries of two masks. One empty mask against a non-empty one scores
/// the image diagonal; two empty masks score 0.
inline double assd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t H,
                   std::size_t W) {
  detail::check_same_size(pred.size(), gt.size(), "assd");
  detail::check_same_size(pred.size(), H * W, "assd");
  const auto bp = boundary(pred, H, W);
  const auto bg = boundary(gt, H, W);
  const bool ep = std::none_of(bp.begin(), bp.end(), [](auto v) { return v; });
  const bool eg = std::none_of(bg.begin(), bg.end(), [](auto v) { return v; });
  if (ep && eg) return 0.0;
  if (ep || eg) return std::hypot(static_cast<double>(H), static_cast<double>(W));
  auto mean_to = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
    const auto dt = squared_distance_transform(to, H, W);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from[i]) {
        acc += std::sqrt(dt[i]);
        ++n;
      }
    return acc / static_cast<double>(n);
  };
  return 0.5 * (mean_to(bp, bg) + mean_to(bg, bp));
}

struct SiteReport {
  std::vector<double> iou;   // per class
  std::vector<double> assd;  // per class, pixels
  std::size_t samples = 0;

  double mean_iou() const { return iou.empty() ? 0.0 : std::accumulate(iou.begin(), iou.end(), 0.0) / iou.size(); }
  double mean_assd() const {
    return assd.empty() ? 0.0 : std::accumulate(assd.begin(), assd.end(), 0.0) / assd.size();
  }
};

/// Probability maps [N*H*W] for each sample of a batch.
using Predictor = std::function<std::vector<std::vector<double>>(std::span<const Sample>)>;

/// Thresholds predictions (p >= threshold is foreground) and averages the
/// per-sample metrics per class.
inline SiteReport evaluate_site(const Predictor& predict, std::span<const Sample> test, double threshold = 0.5,
                                std::size_t batch = 6) {
  if (test.empty()) throw std::invalid_argument("evaluate_site: empty test set");
  const std::size_t N = test.front().classes, H = test.front().height, W = test.front().width, hw = H * W;
  SiteReport r;
  r.iou.assign(N, 0.0);
  r.assd.assign(N, 0.0);
  std::vector<std::uint8_t> pred(hw);
  for (std::size_t start = 0; start < test.size(); start += batch) {
    const auto chunk = test.subspan(start, std::min(batch, test.size() - start));
    const auto probs = predict(chunk);
    if (probs.size() != chunk.size()) throw std::runtime_error("predictor returned wrong batch size");
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& s = chunk[i];
      if (probs[i].size() != N * hw) throw std::runtime_error("predictor returned wrong map size");
      for (std::size_t c = 0; c < N; ++c) {
        for (std::size_t p = 0; p < hw; ++p) pred[p] = probs[i][c * hw + p] >= threshold ? 1 : 0;
        const std::span<const std::uint8_t> gt(s.mask.data() + c * hw, hw);
        r.iou[c] += iou(pred, gt);
        r.assd[c] += assd(pred, gt, H, W);
      }
    }
  }
  r.samples = test.size();
  for (std::size_t c = 0; c < N; ++c) {
    r.iou[c] /= static_cast<double>(r.samples);
    r.assd[c] /= static_cast<double>(r.samples);
  }
  return r;
}

}  // namespace lcfed
