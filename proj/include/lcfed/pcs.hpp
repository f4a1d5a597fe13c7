#pragma once

// Personalized channel selection.
//
// A fixed one-hot site code is extended to the channel width (FC, instance
// norm, ReLU, FC), fused with the global-average channel descriptor of the
// deepest encoder feature (concat, FC, sigmoid), and the resulting gate
// re-weights that feature residually: f' = f + f * gate.

#include <cmath>
#include <string>
#include <vector>

#include "lcfed/nn.hpp"
#include "lcfed/params.hpp"
#include "lcfed/random.hpp"

namespace lcfed {

/// One-hot site code of length K. Never trained.
struct SiteEmbedding {
  std::size_t site = 0;
  std::size_t num_sites = 1;

  static SiteEmbedding make(std::size_t site, std::size_t num_sites) {
    if (num_sites == 0 || site >= num_sites) {
      throw std::invalid_argument("site index " + std::to_string(site) + " out of range for " +
                                  std::to_string(num_sites) + " sites");
    }
    return {site, num_sites};
  }

  std::vector<double> raw() const {
    std::vector<double> v(num_sites, 0.0);
    v[site] = 1.0;
    return v;
  }

  template <typename T>
  Tensor<T> tensor() const {
    Tensor<T> t({1, num_sites});
    t.data()[site] = T(1);
    return t;
  }
};

template <typename T>
struct PCSGenerator {
  std::size_t num_sites = 0;
  std::size_t channels = 0;
  Tensor<T> ext1_w, ext1_b, ext_gamma, ext_beta, ext2_w, ext2_b;
  Tensor<T> fuse_w, fuse_b;

  /// Registers freshly initialized generator weights in `params` under "pcs.*".
  static void register_params(ParamSet<T>& params, std::size_t num_sites, std::size_t channels, Rng& rng) {
    const double kb = 1.0 / std::sqrt(static_cast<double>(num_sites));
    const double cb = 1.0 / std::sqrt(static_cast<double>(channels));
    const double fb = 1.0 / std::sqrt(static_cast<double>(2 * channels));
    params.add("pcs.ext1.weight", Group::pcs, uniform_tensor<T>({num_sites, channels}, kb, rng));
    params.add("pcs.ext1.bias", Group::pcs, Tensor<T>::zeros({channels}));
    params.add("pcs.ext_norm.gamma", Group::pcs, Tensor<T>::ones({channels}));
    params.add("pcs.ext_norm.beta", Group::pcs, Tensor<T>::zeros({channels}));
    params.add("pcs.ext2.weight", Group::pcs, uniform_tensor<T>({channels, channels}, cb, rng));
    params.add("pcs.ext2.bias", Group::pcs, Tensor<T>::zeros({channels}));
    params.add("pcs.fuse.weight", Group::pcs, uniform_tensor<T>({2 * channels, channels}, fb, rng));
    params.add("pcs.fuse.bias", Group::pcs, Tensor<T>::zeros({channels}));
  }

  static PCSGenerator bind(const ParamSet<T>& params) {
    PCSGenerator g;
    g.ext1_w = params.at("pcs.ext1.weight");
    g.ext1_b = params.at("pcs.ext1.bias");
    g.ext_gamma = params.at("pcs.ext_norm.gamma");
    g.ext_beta = params.at("pcs.ext_norm.beta");
    g.ext2_w = params.at("pcs.ext2.weight");
    g.ext2_b = params.at("pcs.ext2.bias");
    g.fuse_w = params.at("pcs.fuse.weight");
    g.fuse_b = params.at("pcs.fuse.bias");
    g.num_sites = g.ext1_w.dim(0);
    g.channels = g.ext1_w.dim(1);
    return g;
  }

  /// Site code extended to the channel width: [1,C].
  Tensor<T> extend(const SiteEmbedding& xi) const {
    if (xi.num_sites != num_sites) {
      throw ShapeError("site embedding has length " + std::to_string(xi.num_sites) + ", generator expects " +
                       std::to_string(num_sites));
    }
    auto h = fully_connected(xi.tensor<T>(), ext1_w, ext1_b);
    h = relu(instance_norm(h, ext_gamma, ext_beta));
    return fully_connected(h, ext2_w, ext2_b);
  }
};

/// Gate in (0,1)^[B,C] from the site code and the feature's channel descriptor.
template <typename T>
Tensor<T> augment_embedding(const PCSGenerator<T>& gen, const SiteEmbedding& xi, const Tensor<T>& f) {
  detail::require_rank(f.shape(), 4, "augment_embedding feature");
  if (f.dim(1) != gen.channels) {
    throw ShapeError("feature has " + std::to_string(f.dim(1)) + " channels, generator expects " +
                     std::to_string(gen.channels));
  }
  const std::size_t B = f.dim(0);
  auto code = broadcast_to(gen.extend(xi), {B, gen.channels});
  auto descriptor = global_average_pool(f);
  return sigmoid(fully_connected(concat<T>({descriptor, code}), gen.fuse_w, gen.fuse_b));
}

/// f' = f + f * gate, gate broadcast over the spatial dimensions.
template <typename T>
Tensor<T> select_channels(const Tensor<T>& f, const Tensor<T>& gate) {
  detail::require_rank(f.shape(), 4, "select_channels feature");
  if (gate.shape() != Shape{f.dim(0), f.dim(1)}) {
    throw ShapeError("channel gate " + shape_str(gate.shape()) + " does not match feature " + shape_str(f.shape()));
  }
  return add(f, mul(f, gate));
}

/// -(1/(K-1)) * sum over foreign sites of mean|own - stop_gradient(foreign)|.
/// The mean runs over batch and channels, i.e. per-sample channel means
/// averaged over the batch. Fewer than two sites gives a constant 0.
template <typename T>
Tensor<T> site_contrast_loss(const Tensor<T>& own, const std::vector<Tensor<T>>& foreign) {
  if (foreign.empty()) return Tensor<T>::scalar(T(0));
  Tensor<T> acc;
  for (const auto& other : foreign) {
    if (other.shape() != own.shape()) {
      throw ShapeError("augmented embeddings differ in shape: " + shape_str(own.shape()) + " vs " +
                       shape_str(other.shape()));
    }
    auto d = mean(abs(sub(own, stop_gradient(other))));
    acc = acc.defined() ? add(acc, d) : d;
  }
  return scale(acc, T(-1) / static_cast<T>(foreign.size()));
}

/// Couples `f` with every site code and contrasts site k against the rest.
template <typename T>
Tensor<T> site_contrast_loss(const PCSGenerator<T>& gen, const Tensor<T>& f,
                             const std::vector<SiteEmbedding>& embeddings, std::size_t k) {
  if (k >= embeddings.size()) throw std::invalid_argument("site index out of range for contrast loss");
  if (embeddings.size() < 2) return Tensor<T>::scalar(T(0));
  std::vector<Tensor<T>> foreign;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (i == k) continue;
    foreign.push_back(augment_embedding(gen, embeddings[i], f));
  }
  return site_contrast_loss(augment_embedding(gen, embeddings[k], f), foreign);
}

}  // namespace lcfed
