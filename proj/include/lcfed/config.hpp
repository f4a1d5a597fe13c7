#pragma once

// Experiment configuration: plain `key = value` text, one entry per line,
// `#` starts a comment. Unknown keys are errors. Run-control keys (output
// directory, checkpoint cadence, worker count, ...) do not enter the digest,
// so the same experiment run with different plumbing stays comparable.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lcfed/federation.hpp"

namespace lcfed {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { local, fedavg, fedrep_head, lcfed, lcfed_pcs_only, lcfed_hc_only };
enum class Precision { f32, f64 };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::local: return "local";
    case Mode::fedavg: return "fedavg";
    case Mode::fedrep_head: return "fedrep-head";
    case Mode::lcfed: return "lcfed";
    case Mode::lcfed_pcs_only: return "lcfed-pcs-only";
    case Mode::lcfed_hc_only: return "lcfed-hc-only";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::local, Mode::fedavg, Mode::fedrep_head, Mode::lcfed, Mode::lcfed_pcs_only,
                 Mode::lcfed_hc_only})
    if (mode_name(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) +
                    "' (expected local, fedavg, fedrep-head, lcfed, lcfed-pcs-only or lcfed-hc-only)");
}

struct ExperimentConfig {
  Mode mode = Mode::lcfed;
  std::size_t sites = 4;
  std::size_t rounds = 30;
  std::size_t local_epochs = 1;
  double lr = 1e-4;
  std::size_t batch_size = 6;
  double lambda = kDefaultLambda;
  bool allow_negative_lambda = false;
  std::size_t nms_delta = 11;
  std::size_t gauss_size = 11;
  double gauss_sigma = 3.0;
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t convs_per_stage = 1;
  std::size_t image_size = 64;
  std::size_t classes = 1;
  std::size_t train_per_site = 120;
  std::size_t test_per_site = 30;
  std::uint64_t benchmark_seed = 7;
  std::uint64_t master_seed = 1;
  Precision precision = Precision::f32;
  bool personalize_pcs = false;
  // Explicit overrides of what the mode implies; unset follows the mode.
  std::optional<bool> pcs, hc, share_heads;
  std::string manifest;  // empty: synthetic benchmark

  // Run controls (not part of the digest).
  std::string out_dir = "runs/default";
  std::size_t checkpoint_every = 5;  // 0 disables periodic checkpoints
  std::size_t eval_every = 1;        // the final round is always evaluated
  std::size_t workers = 1;
  std::size_t stop_after = 0;  // stop (with a checkpoint) after this round; 0 runs to the end

  bool mode_uses_pcs() const {
    return pcs.value_or(mode == Mode::lcfed || mode == Mode::lcfed_pcs_only);
  }
  bool mode_uses_hc() const { return hc.value_or(mode == Mode::lcfed || mode == Mode::lcfed_hc_only); }

  SharingPolicy sharing() const {
    SharingPolicy p;
    if (mode == Mode::local) return {false, false, false};
    p.body = true;
    p.pcs = !personalize_pcs;
    p.heads = share_heads.value_or(mode == Mode::fedavg);
    return p;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.sites = sites;
    m.classes = classes;
    m.channels = channels;
    m.convs_per_stage = convs_per_stage;
    m.image_size = image_size;
    return m;
  }

  FederationConfig federation() const {
    FederationConfig f;
    f.model = model();
    f.train.local_epochs = local_epochs;
    f.train.batch_size = batch_size;
    f.train.lr = lr;
    f.train.lambda = lambda;
    f.train.calibration.pcs = mode_uses_pcs();
    f.train.calibration.hc = mode_uses_hc();
    f.train.calibration.nms_delta = nms_delta;
    f.train.calibration.gauss_size = gauss_size;
    f.train.calibration.gauss_sigma = gauss_sigma;
    f.sharing = sharing();
    f.master_seed = master_seed;
    f.workers = workers;
    return f;
  }

  BenchmarkSpec benchmark() const {
    BenchmarkSpec b;
    b.seed = benchmark_seed;
    b.sites = sites;
    b.train_per_site = train_per_site;
    b.test_per_site = test_per_site;
    b.image_size = image_size;
    b.classes = classes;
    return b;
  }

  void validate() const {
    if (sites == 0) throw ConfigError("sites must be at least 1");
    if (rounds == 0) throw ConfigError("rounds must be at least 1");
    if (local_epochs == 0) throw ConfigError("local_epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
    if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
    if (lambda < 0.0 && !allow_negative_lambda)
      throw ConfigError("lambda < 0 requires allow_negative_lambda = true");
    if (nms_delta == 0 || nms_delta % 2 == 0) throw ConfigError("nms_delta must be odd and >= 1");
    if (gauss_size == 0 || gauss_size % 2 == 0) throw ConfigError("gauss_size must be odd and >= 1");
    if (!(gauss_sigma > 0.0)) throw ConfigError("gauss_sigma must be positive");
    if (manifest.empty() && (train_per_site == 0 || test_per_site == 0))
      throw ConfigError("train_per_site and test_per_site must be positive");
    if (stop_after > rounds) throw ConfigError("stop_after exceeds rounds");
    try {
      model().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v.front() == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::optional<bool> parse_tristate(const std::string& key, const std::string& v) {
  if (v == "auto") return std::nullopt;
  return parse_bool(key, v);
}

inline std::string tristate_str(const std::optional<bool>& v) { return v ? (*v ? "true" : "false") : "auto"; }

struct ConfigKey {
  const char* name;
  bool digest;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename F>
ConfigKey size_key(const char* name, bool digest, F field) {
  return {name, digest, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_u64(name, v); },
          [=](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

template <typename F>
ConfigKey real_key(const char* name, F field) {
  return {name, true, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_double(name, v); },
          [=](const ExperimentConfig& c) { return fmt_double(c.*field); }};
}

template <typename F>
ConfigKey bool_key(const char* name, F field) {
  return {name, true, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
          [=](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

template <typename F>
ConfigKey tristate_key(const char* name, F field) {
  return {name, true, [=](ExperimentConfig& c, const std::string& v) { c.*field = parse_tristate(name, v); },
          [=](const ExperimentConfig& c) { return tristate_str(c.*field); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      {"mode", true, [](C& c, const std::string& v) { c.mode = parse_mode(v); },
       [](const C& c) { return std::string(mode_name(c.mode)); }},
      size_key("sites", true, &C::sites),
      size_key("rounds", true, &C::rounds),
      size_key("local_epochs", true, &C::local_epochs),
      real_key("lr", &C::lr),
      size_key("batch_size", true, &C::batch_size),
      real_key("lambda", &C::lambda),
      bool_key("allow_negative_lambda", &C::allow_negative_lambda),
      size_key("nms_delta", true, &C::nms_delta),
      size_key("gauss_size", true, &C::gauss_size),
      real_key("gauss_sigma", &C::gauss_sigma),
      {"channels", true,
       [](C& c, const std::string& v) {
         std::vector<std::size_t> ch;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) ch.push_back(parse_u64("channels", trim(item)));
         if (ch.empty()) throw ConfigError("channels: expected a comma-separated list");
         c.channels = std::move(ch);
       },
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.channels.size(); ++i) s += (i ? "," : "") + std::to_string(c.channels[i]);
         return s;
       }},
      size_key("convs_per_stage", true, &C::convs_per_stage),
      size_key("image_size", true, &C::image_size),
      size_key("classes", true, &C::classes),
      size_key("train_per_site", true, &C::train_per_site),
      size_key("test_per_site", true, &C::test_per_site),
      size_key("benchmark_seed", true, &C::benchmark_seed),
      size_key("master_seed", true, &C::master_seed),
      {"precision", true,
       [](C& c, const std::string& v) {
         if (v == "f32") c.precision = Precision::f32;
         else if (v == "f64") c.precision = Precision::f64;
         else throw ConfigError("precision: expected f32 or f64, got '" + v + "'");
       },
       [](const C& c) { return std::string(c.precision == Precision::f32 ? "f32" : "f64"); }},
      bool_key("personalize_pcs", &C::personalize_pcs),
      tristate_key("pcs", &C::pcs),
      tristate_key("hc", &C::hc),
      tristate_key("share_heads", &C::share_heads),
      {"manifest", true, [](C& c, const std::string& v) { c.manifest = v; },
       [](const C& c) { return c.manifest; }},
      {"out_dir", false, [](C& c, const std::string& v) { c.out_dir = v; }, [](const C& c) { return c.out_dir; }},
      size_key("checkpoint_every", false, &C::checkpoint_every),
      size_key("eval_every", false, &C::eval_every),
      size_key("workers", false, &C::workers),
      size_key("stop_after", false, &C::stop_after),
  };
  return keys;
}

}  // namespace detail

/// Applies one `key=value` (or `key = value`) assignment.
inline void apply_setting(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  for (const auto& k : detail::config_keys())
    if (key == k.name) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig cfg = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    try {
      apply_setting(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  ExperimentConfig cfg;
  try {
    cfg = parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  for (const auto& o : overrides) apply_setting(cfg, o);
  cfg.validate();
  return cfg;
}

/// Canonical text: every key in schema order. `digest_only` drops run controls.
inline std::string serialize_config(const ExperimentConfig& cfg, bool digest_only = false) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    if (digest_only && !k.digest) continue;
    out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Identifies the experiment (not its plumbing) in every artifact.
inline std::string config_digest(const ExperimentConfig& cfg) { return hex64(fnv1a(serialize_config(cfg, true))); }

}  // namespace lcfed
