#pragma once

// Reference implementations used only by tests. Each one is deliberately
// naive so that it can be checked by reading it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lcfed/metrics.hpp"
#include "lcfed/nn.hpp"
#include "lcfed/random.hpp"

namespace lcfed::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-5;
// Denominator floor for the relative error, so that gradients near zero are
// compared on an absolute scale instead of amplifying rounding noise.
inline constexpr double kFdFloor = 1e-4;
// A point is treated as a kink when its one-sided slopes disagree by more than this.
inline constexpr double kKinkTolerance = 1e-3;

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double max_error = 0.0;
  std::string worst;

  bool ok(std::size_t min_points) const { return checked >= min_points && max_error < kFdTolerance; }
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Central-difference check of d f / d inputs at `points` random entries of
/// every input (all entries when an input is smaller).
inline GradCheckReport gradcheck(const ScalarFn& f, std::vector<Tensor<double>> inputs, std::size_t points = 10,
                                 std::uint64_t seed = 1) {
  for (auto& t : inputs) {
    t = t.clone();
    t.set_requires_grad(true);
  }
  {
    auto loss = f(inputs);
    loss.backward();
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs)
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));

  GradCheckReport rep;
  Rng rng(seed);
  auto eval = [&] {
    NoGradGuard guard;
    return f(inputs).item();
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> order(inputs[i].numel());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t accepted = 0;
    for (std::size_t idx : order) {
      if (accepted == points) break;
      double& v = inputs[i].data()[idx];
      const double orig = v;
      v = orig + kFdStep;
      const double fp = eval();
      v = orig - kFdStep;
      const double fm = eval();
      v = orig;
      const double f0 = eval();
      const double central = (fp - fm) / (2.0 * kFdStep);
      const double fwd = (fp - f0) / kFdStep, bwd = (f0 - fm) / kFdStep;
      if (std::abs(fwd - bwd) > kKinkTolerance * std::max(1.0, std::abs(central))) {
        ++rep.kinks;
        continue;
      }
      const double a = analytic[i][idx];
      const double err = std::abs(a - central) / std::max({std::abs(a), std::abs(central), kFdFloor});
      if (err > rep.max_error || rep.checked == 0) {
        rep.max_error = std::max(rep.max_error, err);
        if (err >= rep.max_error)
          rep.worst = "input " + std::to_string(i) + "[" + std::to_string(idx) + "] analytic " + std::to_string(a) +
                      " numeric " + std::to_string(central);
      }
      ++rep.checked;
      ++accepted;
    }
  }
  return rep;
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Weighted sum <out, w> with fixed random weights, a generic scalar probe.
inline Tensor<double> probe(const Tensor<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = normal_tensor<double>(out.shape(), rng);
  return sum(mul(out, w));
}

/// Direct 7-loop cross-correlation.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, std::size_t B, std::size_t Cin, std::size_t H,
                                        std::size_t W, const std::vector<double>& w, std::size_t Cout, std::size_t k,
                                        const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                        std::size_t& Ho, std::size_t& Wo) {
  Ho = (H + 2 * pad - k) / stride + 1;
  Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(B * Cout * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                const long xx = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += w[((o * Cin + c) * k + i) * k + j] * x[((b * Cin + c) * H + y) * W + xx];
              }
          out[((b * Cout + o) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

/// Keeps v[y][x] iff no value in its clipped delta x delta window exceeds it.
inline std::vector<double> brute_nms(const std::vector<double>& v, std::size_t H, std::size_t W, std::size_t delta) {
  const long r = static_cast<long>(delta / 2);
  std::vector<double> out(v.size(), 0.0);
  for (long y = 0; y < static_cast<long>(H); ++y)
    for (long x = 0; x < static_cast<long>(W); ++x) {
      bool keep = true;
      for (long dy = -r; dy <= r && keep; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
          if (v[yy * W + xx] > v[y * W + x]) {
            keep = false;
            break;
          }
        }
      if (keep) out[y * W + x] = v[y * W + x];
    }
  return out;
}

/// O(B^2) ASSD: every boundary pixel against every boundary pixel of the other mask.
inline double brute_assd(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, std::size_t H,
                         std::size_t W) {
  const auto ba = boundary(a, H, W), bb = boundary(b, H, W);
  std::vector<std::pair<double, double>> pa, pb;
  for (std::size_t i = 0; i < H * W; ++i) {
    if (ba[i]) pa.emplace_back(static_cast<double>(i / W), static_cast<double>(i % W));
    if (bb[i]) pb.emplace_back(static_cast<double>(i / W), static_cast<double>(i % W));
  }
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::hypot(static_cast<double>(H), static_cast<double>(W));
  auto directed = [](const auto& from, const auto& to) {
    double acc = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  return 0.5 * (directed(pa, pb) + directed(pb, pa));
}

/// Random blob-ish binary mask: union of a few random discs.
inline std::vector<std::uint8_t> random_mask(std::size_t H, std::size_t W, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> m(H * W, 0);
  const int discs = 1 + static_cast<int>(u(rng) * 3);
  for (int d = 0; d < discs; ++d) {
    const double cy = u(rng) * H, cx = u(rng) * W, r = 1.0 + u(rng) * H / 4.0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (std::hypot(y - cy, x - cx) <= r) m[y * W + x] = 1;
  }
  return m;
}

}  // namespace lcfed::testing
