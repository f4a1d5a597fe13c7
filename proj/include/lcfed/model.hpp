#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lcfed/hc.hpp"
#include "lcfed/losses.hpp"
#include "lcfed/pcs.hpp"

namespace lcfed {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t classes = 1;
  std::size_t sites = 4;
  /// Encoder widths, one per stage; the last is the channel-selection width.
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t convs_per_stage = 1;
  std::size_t image_size = 64;
  double norm_eps = 1e-5;

  std::size_t stages() const { return channels.size(); }

  void validate() const {
    if (channels.empty()) throw std::invalid_argument("model needs at least one stage");
    if (classes == 0 || in_channels == 0 || sites == 0 || convs_per_stage == 0)
      throw std::invalid_argument("model dimensions must be positive");
    const std::size_t div = std::size_t{1} << stages();
    if (image_size % div != 0 || image_size / div < 1) {
      throw std::invalid_argument("image size " + std::to_string(image_size) + " must be divisible by " +
                                  std::to_string(div) + " for " + std::to_string(stages()) + " stages");
    }
  }
};

/// Switches for the two calibration mechanisms.
struct CalibrationOptions {
  bool pcs = true;
  bool hc = true;
  std::size_t nms_delta = 11;
  std::size_t gauss_size = 11;
  double gauss_sigma = 3.0;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> coarse;      // S,  [B,N,H,W]
  Tensor<T> calibrated;  // S*, [B,N,H,W]
  Tensor<T> contrast;    // L_con, scalar; 0 when PCS is off or K < 2
  Tensor<T> gate;        // channel gate [B,C], undefined when PCS is off
  Tensor<T> attention;   // Gaussian-spread NMS map [B,N,H,W], undefined when HC is off
};

/// U-shape segmentation network with optional channel selection after the
/// deepest encoder stage and a coarse/calibrated head pair.
///
/// The model does not own its weights: it binds tensor handles from a
/// ParamSet, so any number of models can view the same parameters.
template <typename T>
class SegModel {
 public:
  struct ConvBlock {
    Tensor<T> weight, gamma, beta;
  };

  static ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamSet<T> p;
    auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout) {
      const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
      p.add(prefix + ".weight", Group::body, uniform_tensor<T>({cout, cin, 3, 3}, bound, rng));
      p.add(prefix + ".norm.gamma", Group::body, Tensor<T>::ones({cout}));
      p.add(prefix + ".norm.beta", Group::body, Tensor<T>::zeros({cout}));
    };
    const auto& ch = cfg.channels;
    for (std::size_t l = 0; l < cfg.stages(); ++l)
      for (std::size_t j = 0; j < cfg.convs_per_stage; ++j)
        conv(block_name("enc", l, j), j == 0 ? (l == 0 ? cfg.in_channels : ch[l - 1]) : ch[l], ch[l]);
    for (std::size_t l = cfg.stages(); l-- > 0;)
      for (std::size_t j = 0; j < cfg.convs_per_stage; ++j)
        conv(block_name("dec", l, j), j == 0 ? 2 * ch[l] : decoder_width(cfg, l), decoder_width(cfg, l));
    PCSGenerator<T>::register_params(p, cfg.sites, ch.back(), rng);
    const double hb = 1.0 / std::sqrt(static_cast<double>(ch.front()));
    for (const char* h : {"coarse", "calib"}) {
      p.add(std::string("head.") + h + ".weight", Group::head, uniform_tensor<T>({ch.front(), cfg.classes}, hb, rng));
      p.add(std::string("head.") + h + ".bias", Group::head, Tensor<T>::zeros({cfg.classes}));
    }
    return p;
  }

  SegModel(ModelConfig cfg, const ParamSet<T>& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto bind = [&](const std::string& prefix) {
      return ConvBlock{params.at(prefix + ".weight"), params.at(prefix + ".norm.gamma"),
                       params.at(prefix + ".norm.beta")};
    };
    enc_.resize(cfg_.stages());
    dec_.resize(cfg_.stages());
    for (std::size_t l = 0; l < cfg_.stages(); ++l)
      for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) {
        enc_[l].push_back(bind(block_name("enc", l, j)));
        dec_[l].push_back(bind(block_name("dec", l, j)));
      }
    pcs_ = PCSGenerator<T>::bind(params);
    coarse_ = {params.at("head.coarse.weight"), params.at("head.coarse.bias")};
    calib_ = {params.at("head.calib.weight"), params.at("head.calib.bias")};
  }

  const ModelConfig& config() const { return cfg_; }
  const PCSGenerator<T>& generator() const { return pcs_; }
  const HeadParams<T>& coarse_head() const { return coarse_; }
  const HeadParams<T>& calibrated_head() const { return calib_; }

  /// Deepest encoder feature (before channel selection) and the skip features.
  struct Encoded {
    Tensor<T> deepest;
    std::vector<Tensor<T>> skips;
  };

  Encoded encode(const Tensor<T>& x) const {
    detail::require_rank(x.shape(), 4, "model input");
    if (x.dim(1) != cfg_.in_channels || x.dim(2) % (std::size_t{1} << cfg_.stages()) ||
        x.dim(3) % (std::size_t{1} << cfg_.stages())) {
      throw ShapeError("model input " + shape_str(x.shape()) + " incompatible with " +
                       std::to_string(cfg_.stages()) + "-stage model");
    }
    Encoded e;
    Tensor<T> h = x;
    for (const auto& stage : enc_) {
      for (const auto& blk : stage) h = apply(blk, h);
      e.skips.push_back(h);
      h = max_pool2(h);
    }
    e.deepest = h;
    return e;
  }

  Tensor<T> decode(const Tensor<T>& deepest, const std::vector<Tensor<T>>& skips) const {
    Tensor<T> h = deepest;
    for (std::size_t l = cfg_.stages(); l-- > 0;) {
      h = concat<T>({upsample2(h), skips[l]});
      for (const auto& blk : dec_[l]) h = apply(blk, h);
    }
    return h;
  }

  /// Full forward for site `site`. `heads` supplies the other sites' coarse
  /// heads (the entry at `site` is ignored in favour of this model's own
  /// head); foreign maps are constants.
  ForwardOutput<T> forward(const Tensor<T>& x, std::size_t site, const CalibrationOptions& opts,
                           const HeadCollection<T>* heads = nullptr) const {
    ForwardOutput<T> out;
    auto enc = encode(x);
    Tensor<T> deepest = enc.deepest;
    out.contrast = Tensor<T>::scalar(T(0));
    if (opts.pcs) {
      auto own = SiteEmbedding::make(site, cfg_.sites);
      out.gate = augment_embedding(pcs_, own, deepest);
      if (cfg_.sites >= 2 && grad_enabled()) {
        std::vector<Tensor<T>> foreign;
        {
          NoGradGuard guard;
          for (std::size_t i = 0; i < cfg_.sites; ++i)
            if (i != site) foreign.push_back(augment_embedding(pcs_, SiteEmbedding::make(i, cfg_.sites), deepest));
        }
        out.contrast = site_contrast_loss(out.gate, foreign);
      }
      deepest = select_channels(deepest, out.gate);
    }
    auto f_hat = decode(deepest, enc.skips);
    out.coarse = apply_head(f_hat, coarse_);

    Tensor<T> f_star = f_hat;
    if (opts.hc && heads && heads->size() >= 2) {
      if (heads->size() != cfg_.sites) {
        throw std::invalid_argument("head collection has " + std::to_string(heads->size()) + " heads for " +
                                    std::to_string(cfg_.sites) + " sites");
      }
      std::vector<Tensor<T>> maps(heads->size());
      {
        NoGradGuard guard;
        auto f_const = f_hat.detach();
        for (std::size_t i = 0; i < heads->size(); ++i)
          if (i != site) maps[i] = apply_head(f_const, heads->heads[i]);
      }
      maps[site] = out.coarse;
      auto u = disagreement_map(maps, site);
      out.attention = gaussian_spread(nms2d(u, opts.nms_delta), opts.gauss_size, opts.gauss_sigma);
      f_star = calibrate(f_hat, out.attention);
    }
    out.calibrated = apply_head(f_star, calib_);
    return out;
  }

  static std::size_t decoder_width(const ModelConfig& cfg, std::size_t stage) {
    return stage == 0 ? cfg.channels.front() : cfg.channels[stage - 1];
  }

 private:
  static std::string block_name(const char* part, std::size_t stage, std::size_t conv) {
    return std::string(part) + std::to_string(stage + 1) + ".conv" + std::to_string(conv + 1);
  }

  Tensor<T> apply(const ConvBlock& blk, const Tensor<T>& h) const {
    return relu(instance_norm(conv2d(h, blk.weight), blk.gamma, blk.beta, static_cast<T>(cfg_.norm_eps)));
  }

  ModelConfig cfg_;
  std::vector<std::vector<ConvBlock>> enc_, dec_;
  PCSGenerator<T> pcs_;
  HeadParams<T> coarse_, calib_;
};

}  // namespace lcfed
