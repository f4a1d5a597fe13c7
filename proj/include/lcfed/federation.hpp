#pragma once

// Round-based federated training.
//
// Each round the server broadcasts the aggregated parameters and the coarse
// heads collected after the previous round; every site trains locally on
// its own data, and the server averages the shared groups. Parameters that
// are not shared, and every site's Adam moments, never leave the site.

#include <algorithm>
#include <cstring>
#include <exception>
#include <functional>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "lcfed/data.hpp"
#include "lcfed/metrics.hpp"
#include "lcfed/model.hpp"
#include "lcfed/optim.hpp"

namespace lcfed {

/// Which parameter groups the server averages.
struct SharingPolicy {
  bool body = true;
  bool pcs = true;
  bool heads = false;

  bool shares(Group g) const {
    switch (g) {
      case Group::body: return body;
      case Group::pcs: return pcs;
      case Group::head: return heads;
    }
    return false;
  }
  bool any() const { return body || pcs || heads; }
};

struct TrainOptions {
  std::size_t local_epochs = 1;
  std::size_t batch_size = 6;
  double lr = 1e-4;
  double lambda = kDefaultLambda;
  CalibrationOptions calibration;
};

struct FederationConfig {
  ModelConfig model;
  TrainOptions train;
  SharingPolicy sharing;
  std::uint64_t master_seed = 1;
  /// Clients trained concurrently; results do not depend on it.
  std::size_t workers = 1;
};

template <typename T>
struct SiteState {
  ParamSet<T> params;
  Adam<T> optimizer;

  SiteState clone() const { return {params.clone(), optimizer}; }
};

template <typename T>
struct FederationState {
  std::size_t round = 0;
  ParamSet<T> global;  // shared groups only; empty when nothing is shared
  std::vector<SiteState<T>> sites;
  HeadCollection<T> heads;
};

struct TrainStats {
  double joint = 0.0;
  double coarse = 0.0;
  double calib = 0.0;
  double con = 0.0;
  std::size_t steps = 0;
};

template <typename T>
struct ClientUpdate {
  std::size_t site = 0;
  ParamSet<T> theta;  // shared groups
  ParamSet<T> beta;   // site-local groups
  Adam<T> optimizer;
  TrainStats stats;
};

template <typename T>
HeadCollection<T> collect_heads(const std::vector<SiteState<T>>& sites, std::size_t stamp) {
  HeadCollection<T> hc;
  hc.round_stamp = stamp;
  for (const auto& s : sites)
    hc.heads.push_back({s.params.at("head.coarse.weight").clone(), s.params.at("head.coarse.bias").clone()});
  return hc;
}

template <typename T>
FederationState<T> init_federation(const FederationConfig& cfg) {
  FederationState<T> st;
  const auto init = SegModel<T>::init_params(cfg.model, derive_seed(cfg.master_seed, {0x1417}));
  for (std::size_t k = 0; k < cfg.model.sites; ++k)
    st.sites.push_back({init.clone(), Adam<T>(AdamOptions{.lr = cfg.train.lr})});
  st.global = init.subset([&](Group g) { return cfg.sharing.shares(g); }).clone();
  st.heads = collect_heads(st.sites, 0);
  return st;
}

/// Stacks samples into an image batch [B,1,H,W] and a target batch [B,N,H,W].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(std::span<const Sample> samples, std::span<const std::size_t> idx) {
  const Sample& s0 = samples[idx.front()];
  const std::size_t B = idx.size(), H = s0.height, W = s0.width, N = s0.classes, hw = H * W;
  Tensor<T> x({B, 1, H, W}), g({B, N, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    const Sample& s = samples[idx[b]];
    if (s.height != H || s.width != W || s.classes != N)
      throw ShapeError("samples in a batch differ in size or class count");
    for (std::size_t p = 0; p < hw; ++p) x.data()[b * hw + p] = static_cast<T>(s.image[p]);
    for (std::size_t p = 0; p < N * hw; ++p) g.data()[b * N * hw + p] = static_cast<T>(s.mask[p]);
  }
  return {x, g};
}

/// One optimizer step on one batch; returns the loss breakdown values.
template <typename T>
TrainStats train_step(const SegModel<T>& model, ParamSet<T>& params, Adam<T>& opt, const Tensor<T>& x,
                      const Tensor<T>& g, std::size_t site, const HeadCollection<T>* heads, const TrainOptions& o) {
  params.zero_grad();
  auto out = model.forward(x, site, o.calibration, heads);
  auto loss = joint_loss(dice_loss(out.coarse, g), dice_loss(out.calibrated, g), out.contrast, o.lambda);
  loss.joint.backward();
  opt.step(params);
  return {static_cast<double>(loss.joint.item()), static_cast<double>(loss.coarse.item()),
          static_cast<double>(loss.calib.item()), static_cast<double>(loss.con.item()), 1};
}

/// Local training of site `site` starting from the broadcast parameters.
/// Runs `local_epochs` passes of shuffled minibatches; the shuffle stream is
/// derived from (master seed, site, round).
template <typename T>
ClientUpdate<T> local_update(std::size_t site, const SiteState<T>& current, const ParamSet<T>& theta_in,
                             const HeadCollection<T>& heads, std::span<const Sample> data,
                             const FederationConfig& cfg, std::size_t round) {
  if (data.empty()) throw std::invalid_argument("site " + std::to_string(site) + " has no training samples");
  SiteState<T> s = current.clone();
  s.params.assign_from(theta_in);
  s.optimizer.set_lr(cfg.train.lr);
  SegModel<T> model(cfg.model, s.params);

  Rng rng(derive_seed(cfg.master_seed, {0x5e1ec7, site, round}));
  std::vector<std::size_t> order(data.size());
  TrainStats acc;
  const std::size_t bs = std::max<std::size_t>(1, cfg.train.batch_size);
  for (std::size_t e = 0; e < cfg.train.local_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      auto [x, g] = make_batch<T>(data, idx);
      const auto st = train_step(model, s.params, s.optimizer, x, g, site, &heads, cfg.train);
      acc.joint += st.joint;
      acc.coarse += st.coarse;
      acc.calib += st.calib;
      acc.con += st.con;
      ++acc.steps;
    }
  }
  if (acc.steps) {
    const double n = static_cast<double>(acc.steps);
    acc.joint /= n;
    acc.coarse /= n;
    acc.calib /= n;
    acc.con /= n;
  }
  s.params.zero_grad();
  ClientUpdate<T> u;
  u.site = site;
  u.theta = s.params.subset([&](Group g) { return cfg.sharing.shares(g); });
  u.beta = s.params.subset([&](Group g) { return !cfg.sharing.shares(g); });
  u.optimizer = std::move(s.optimizer);
  u.stats = acc;
  return u;
}

/// Unweighted elementwise mean of aligned parameter sets, computed as
/// x0 + sum(x_i - x0) / K so that identical inputs come back unchanged.
template <typename T>
ParamSet<T> fedavg(const std::vector<ParamSet<T>>& sets) {
  if (sets.empty()) throw std::invalid_argument("fedavg over zero parameter sets");
  for (const auto& s : sets)
    if (!aligned(s, sets.front())) throw ShapeError("fedavg inputs are not aligned parameter sets");
  ParamSet<T> out = sets.front().clone();
  const T n = static_cast<T>(sets.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    auto dst = out[p].value.data();
    const auto& base = sets.front()[p].value.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      T acc = T(0);
      for (std::size_t k = 1; k < sets.size(); ++k) acc += sets[k][p].value.values()[i] - base[i];
      dst[i] = base[i] + acc / n;
    }
  }
  return out;
}

template <typename T>
ParamSet<T> fedavg(const std::vector<ClientUpdate<T>>& updates) {
  std::vector<ParamSet<T>> sets;
  for (const auto& u : updates) sets.push_back(u.theta);
  return fedavg(sets);
}

/// Runs `fn(k)` for k in [0,n) on up to `workers` threads. The first
/// exception (by index) is rethrown after all tasks finish.
template <typename Fn>
void parallel_for_sites(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::function<void(std::size_t)> guarded = [&](std::size_t k) {
    try {
      fn(k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (workers <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) guarded(k);
  } else {
    for (std::size_t start = 0; start < n; start += workers) {
      std::vector<std::thread> pool;
      for (std::size_t k = start; k < std::min(n, start + workers); ++k) pool.emplace_back([&guarded, k] { guarded(k); });
      for (auto& t : pool) t.join();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
struct RoundResult {
  FederationState<T> state;
  std::vector<TrainStats> stats;
};

/// One federated round. The input state is never modified: a failing
/// client aborts the round and leaves the caller's state as it was.
template <typename T>
RoundResult<T> run_round(const FederationState<T>& state, const std::vector<SiteData>& data,
                         const FederationConfig& cfg) {
  const std::size_t K = state.sites.size();
  if (data.size() != K) {
    throw std::invalid_argument("have data for " + std::to_string(data.size()) + " sites, state has " +
                                std::to_string(K));
  }
  const std::size_t round = state.round + 1;
  std::vector<ClientUpdate<T>> updates(K);
  parallel_for_sites(K, cfg.workers, [&](std::size_t k) {
    const ParamSet<T>& theta_in = cfg.sharing.any() ? state.global : ParamSet<T>{};
    updates[k] = local_update<T>(k, state.sites[k], theta_in, state.heads, data[k].train, cfg, round);
  });

  RoundResult<T> res;
  auto& next = res.state;
  next.round = round;
  if (cfg.sharing.any()) next.global = fedavg(updates);
  for (auto& u : updates) {
    SiteState<T> s{ParamSet<T>{}, std::move(u.optimizer)};
    // Rebuild the full set in the canonical order of the previous state.
    for (const auto& p : state.sites[u.site].params) {
      const auto* src = u.theta.find(p.name);
      if (!src) src = u.beta.find(p.name);
      s.params.add(p.name, p.group, src->value.clone());
    }
    if (cfg.sharing.any()) s.params.assign_from(next.global);
    next.sites.push_back(std::move(s));
    res.stats.push_back(u.stats);
  }
  next.heads = collect_heads(next.sites, round);
  return res;
}

/// Calibrated probability maps for a batch of samples on site `site`.
template <typename T>
std::vector<std::vector<double>> predict(const FederationState<T>& state, const FederationConfig& cfg,
                                         std::size_t site, std::span<const Sample> samples) {
  NoGradGuard guard;
  SegModel<T> model(cfg.model, state.sites.at(site).params);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto [x, g] = make_batch<T>(samples, idx);
  auto out = model.forward(x, site, cfg.train.calibration, &state.heads);
  const std::size_t per = out.calibrated.numel() / samples.size();
  std::vector<std::vector<double>> maps(samples.size());
  for (std::size_t b = 0; b < samples.size(); ++b)
    maps[b].assign(out.calibrated.values().begin() + b * per, out.calibrated.values().begin() + (b + 1) * per);
  return maps;
}

template <typename T>
std::vector<SiteReport> evaluate_federation(const FederationState<T>& state, const std::vector<SiteData>& data,
                                            const FederationConfig& cfg, double threshold = 0.5) {
  std::vector<SiteReport> reports(state.sites.size());
  parallel_for_sites(state.sites.size(), cfg.workers, [&](std::size_t k) {
    Predictor p = [&](std::span<const Sample> batch) { return predict(state, cfg, k, batch); };
    reports[k] = evaluate_site(p, data.at(k).test, threshold, std::max<std::size_t>(1, cfg.train.batch_size));
  });
  return reports;
}

/// FNV-1a over the round counter, every parameter, optimizer state and the
/// head collection, with values widened to double.
template <typename T>
std::uint64_t state_digest(const FederationState<T>& st) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  auto mix_values = [&](std::span<const T> v) {
    for (T x : v) {
      const double d = static_cast<double>(x);
      mix(&d, sizeof d);
    }
  };
  const std::uint64_t r = st.round;
  mix(&r, sizeof r);
  for (const auto& p : st.global) mix_values(p.value.values());
  for (const auto& s : st.sites) {
    for (const auto& p : s.params) mix_values(p.value.values());
    const std::uint64_t t = s.optimizer.steps();
    mix(&t, sizeof t);
    for (const auto& m : s.optimizer.first_moments()) mix_values(m);
    for (const auto& v : s.optimizer.second_moments()) mix_values(v);
  }
  for (const auto& hd : st.heads.heads) {
    mix_values(hd.weight.values());
    mix_values(hd.bias.values());
  }
  return h;
}

}  // namespace lcfed
