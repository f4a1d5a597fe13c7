#pragma once

// Experiment driver: runs, resumes and reports on a run directory.
//
// Run directory layout:
//   config.txt            effective configuration
//   metrics.csv           one row per (round, site): metrics and loss terms
//   final_report.csv      per-site results after the last round
//   checkpoints/round_NNNN.ckpt
//   summary.txt, curves.csv   written by emit_report()

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lcfed/checkpoint.hpp"
#include "lcfed/config.hpp"

namespace lcfed {

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kMetricsMagic = "# lcfed-metrics v1 config_digest=";
inline constexpr const char* kMetricsColumns = "round,site,iou,assd,joint_loss,coarse_loss,calib_loss,con_loss";

struct ExperimentResult {
  std::string config_digest;
  std::size_t last_round = 0;
  bool completed = false;
  std::vector<SiteReport> final_reports;  // empty unless completed
  std::uint64_t state_digest = 0;
  std::filesystem::path last_checkpoint;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t round) {
  std::ostringstream name;
  name << "round_" << std::setw(4) << std::setfill('0') << round << ".ckpt";
  return dir / "checkpoints" / name.str();
}

inline std::vector<SiteData> load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.manifest.empty()) return generate_benchmark(cfg.benchmark());
  auto data = split_by_site(load_directory(cfg.manifest));
  if (data.size() != cfg.sites)
    throw RunError("manifest has " + std::to_string(data.size()) + " sites, config says " + std::to_string(cfg.sites));
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k].train.empty() || data[k].test.empty())
      throw RunError("site " + std::to_string(k) + " needs both train and test samples");
    for (const auto* split : {&data[k].train, &data[k].test})
      for (const auto& s : *split)
        if (s.height != cfg.image_size || s.width != cfg.image_size || s.classes != cfg.classes)
          throw RunError("manifest sample of site " + std::to_string(k) + " is " + std::to_string(s.height) + "x" +
                         std::to_string(s.width) + " with " + std::to_string(s.classes) +
                         " classes; config expects " + std::to_string(cfg.image_size) + " square, " +
                         std::to_string(cfg.classes) + " classes");
  }
  return data;
}

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string metrics_row(std::size_t round, std::size_t site, const SiteReport* rep, const TrainStats& st) {
  std::string row = std::to_string(round) + "," + std::to_string(site) + ",";
  row += rep ? num(rep->mean_iou()) + "," + num(rep->mean_assd()) : std::string(",");
  row += "," + num(st.joint) + "," + num(st.coarse) + "," + num(st.calib) + "," + num(st.con);
  return row;
}

inline std::string read_digest_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(kMetricsMagic, 0) != 0)
    throw RunError(what + ": missing '" + std::string(kMetricsMagic) + "' header");
  return line.substr(std::string(kMetricsMagic).size());
}

inline void write_final_report(const std::filesystem::path& path, const std::string& digest,
                               const std::vector<SiteReport>& reps) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw RunError("cannot write " + path.string());
  f << kMetricsMagic << digest << "\n";
  const std::size_t N = reps.empty() ? 0 : reps.front().iou.size();
  f << "site,mean_iou,mean_assd";
  for (std::size_t c = 0; c < N; ++c) f << ",iou_c" << c << ",assd_c" << c;
  f << "\n";
  for (std::size_t k = 0; k < reps.size(); ++k) {
    f << k << "," << num(reps[k].mean_iou()) << "," << num(reps[k].mean_assd());
    for (std::size_t c = 0; c < N; ++c) f << "," << num(reps[k].iou[c]) << "," << num(reps[k].assd[c]);
    f << "\n";
  }
}

// Keeps the header and rows with round <= keep; returns the number of rows kept.
inline std::size_t truncate_metrics(const std::filesystem::path& path, const std::string& digest, std::size_t keep) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read " + path.string());
  const auto d = read_digest_line(in, path.string());
  if (d != digest) throw RunError(path.string() + " belongs to config " + d + ", checkpoint is " + digest);
  std::string text = std::string(kMetricsMagic) + digest + "\n", line;
  if (!std::getline(in, line) || line != kMetricsColumns) throw RunError(path.string() + ": bad column header");
  text += line + "\n";
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > keep) continue;
    text += line + "\n";
    ++rows;
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << text;
  return rows;
}

template <typename T>
ExperimentResult run_rounds(const ExperimentConfig& cfg, FederationState<T> state, const std::vector<SiteData>& data,
                            std::ostream* log) {
  const std::filesystem::path dir = cfg.out_dir;
  const auto fcfg = cfg.federation();
  ExperimentResult res;
  res.config_digest = config_digest(cfg);
  std::ofstream metrics(dir / "metrics.csv", std::ios::app);
  if (!metrics) throw RunError("cannot append to " + (dir / "metrics.csv").string());
  const std::size_t stop = cfg.stop_after ? cfg.stop_after : cfg.rounds;
  std::vector<SiteReport> reports;
  while (state.round < stop) {
    auto rr = run_round(state, data, fcfg);
    state = std::move(rr.state);
    const std::size_t r = state.round;
    const bool eval = r == cfg.rounds || (cfg.eval_every && r % cfg.eval_every == 0);
    reports.clear();
    if (eval) reports = evaluate_federation(state, data, fcfg);
    for (std::size_t k = 0; k < state.sites.size(); ++k)
      metrics << metrics_row(r, k, eval ? &reports[k] : nullptr, rr.stats[k]) << "\n";
    metrics.flush();
    if (log) {
      *log << "round " << r << "/" << cfg.rounds << " loss";
      for (const auto& s : rr.stats) *log << " " << std::fixed << std::setprecision(4) << s.joint;
      if (eval) {
        double m = 0;
        for (const auto& rep : reports) m += rep.mean_iou();
        *log << "  avg IoU " << m / static_cast<double>(reports.size());
      }
      *log << std::defaultfloat << "\n";
    }
    const bool ckpt = r == stop || r == cfg.rounds || (cfg.checkpoint_every && r % cfg.checkpoint_every == 0);
    if (ckpt) {
      res.last_checkpoint = checkpoint_path(dir, r);
      save_checkpoint(res.last_checkpoint, cfg, state);
    }
  }
  res.last_round = state.round;
  res.state_digest = state_digest(state);
  if (state.round == cfg.rounds) {
    res.completed = true;
    res.final_reports = reports.empty() ? evaluate_federation(state, data, fcfg) : reports;
    write_final_report(dir / "final_report.csv", res.config_digest, res.final_reports);
  }
  return res;
}

}  // namespace detail

/// Fresh run into cfg.out_dir, which must not already hold a run.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const std::filesystem::path dir = cfg.out_dir;
  if (std::filesystem::exists(dir / "metrics.csv"))
    throw RunError("'" + dir.string() + "' already holds a run; choose another out_dir");
  // Load before touching the output directory so a bad dataset leaves nothing behind.
  const auto data = load_experiment_data(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw RunError("cannot create output directory '" + dir.string() + "'");
  {
    std::ofstream f(dir / "config.txt", std::ios::trunc);
    if (!f) throw RunError("output directory '" + dir.string() + "' is not writable");
    f << serialize_config(cfg);
    std::ofstream m(dir / "metrics.csv", std::ios::trunc);
    m << kMetricsMagic << config_digest(cfg) << "\n" << kMetricsColumns << "\n";
  }
  if (cfg.precision == Precision::f64)
    return detail::run_rounds(cfg, init_federation<double>(cfg.federation()), data, log);
  return detail::run_rounds(cfg, init_federation<float>(cfg.federation()), data, log);
}

/// Continues the run a checkpoint belongs to. `overrides` may change run
/// controls only (out_dir, workers, stop_after, ...); anything that alters
/// the digest is rejected. Metric rows after the checkpoint round are dropped.
inline ExperimentResult resume_experiment(const std::filesystem::path& checkpoint,
                                          const std::vector<std::string>& overrides = {},
                                          std::ostream* log = nullptr) {
  const auto file = CheckpointFile::read(checkpoint);
  const auto& h = file.header();
  ExperimentConfig cfg = parse_config(h.config_text);
  if (config_digest(cfg) != h.config_digest)
    throw CheckpointError(checkpoint.string() + ": embedded config does not match its digest");
  cfg.stop_after = 0;
  for (const auto& o : overrides) apply_setting(cfg, o);
  cfg.validate();
  if (config_digest(cfg) != h.config_digest)
    throw RunError("resume overrides may only change run controls (out_dir, checkpoint_every, eval_every, workers, "
                   "stop_after)");
  if (h.round > cfg.rounds) throw RunError("checkpoint round exceeds configured rounds");
  const auto data = load_experiment_data(cfg);

  const std::filesystem::path dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  const auto metrics = dir / "metrics.csv";
  if (std::filesystem::exists(metrics)) {
    detail::truncate_metrics(metrics, h.config_digest, h.round);
  } else {
    std::ofstream m(metrics, std::ios::trunc);
    if (!m) throw RunError("cannot write " + metrics.string());
    m << kMetricsMagic << h.config_digest << "\n" << kMetricsColumns << "\n";
  }
  {
    std::ofstream f(dir / "config.txt", std::ios::trunc);
    f << serialize_config(cfg);
  }
  std::filesystem::remove(dir / "final_report.csv");
  if (cfg.precision == Precision::f64) return detail::run_rounds(cfg, load_checkpoint<double>(file, cfg), data, log);
  return detail::run_rounds(cfg, load_checkpoint<float>(file, cfg), data, log);
}

struct MetricsRow {
  std::size_t round = 0, site = 0;
  bool evaluated = false;
  double iou = 0, assd = 0, joint = 0, coarse = 0, calib = 0, con = 0;
};

struct MetricsTable {
  std::string digest;
  std::vector<MetricsRow> rows;
};

inline MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError("missing metrics file " + path.string());
  MetricsTable t;
  t.digest = detail::read_digest_line(in, path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsColumns) throw RunError(path.string() + ": bad column header");
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw RunError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    MetricsRow r;
    r.round = std::stoull(f[0]);
    r.site = std::stoull(f[1]);
    r.evaluated = !f[2].empty();
    if (r.evaluated) {
      r.iou = std::stod(f[2]);
      r.assd = std::stod(f[3]);
    }
    r.joint = std::stod(f[4]);
    r.coarse = std::stod(f[5]);
    r.calib = std::stod(f[6]);
    r.con = std::stod(f[7]);
    t.rows.push_back(r);
  }
  return t;
}

/// Writes summary.txt (sites as columns, average last) and curves.csv
/// (per-round IoU/ASSD per site and averaged) from the run directory.
/// Output is a pure function of metrics.csv and config.txt.
inline void emit_report(const std::filesystem::path& dir) {
  const auto table = read_metrics(dir / "metrics.csv");
  std::ifstream cf(dir / "config.txt");
  if (!cf) throw RunError("missing " + (dir / "config.txt").string());
  std::stringstream cs;
  cs << cf.rdbuf();
  const auto cfg = parse_config(cs.str());
  if (config_digest(cfg) != table.digest)
    throw RunError("metrics.csv (" + table.digest + ") and config.txt (" + config_digest(cfg) +
                   ") come from different experiments");
  if (std::filesystem::exists(dir / "final_report.csv")) {
    std::ifstream fr(dir / "final_report.csv");
    const auto d = detail::read_digest_line(fr, "final_report.csv");
    if (d != table.digest) throw RunError("final_report.csv belongs to config " + d + ", metrics.csv to " + table.digest);
  }

  const std::size_t K = cfg.sites;
  std::size_t last_eval = 0;
  for (const auto& r : table.rows) {
    if (r.site >= K) throw RunError("metrics.csv mentions site " + std::to_string(r.site) + " but K=" + std::to_string(K));
    if (r.evaluated) last_eval = std::max(last_eval, r.round);
  }
  if (last_eval == 0) throw RunError("metrics.csv has no evaluated round");

  auto fixed = [](double v, int p) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(p) << v;
    return os.str();
  };
  std::vector<double> iou(K, 0.0), assd(K, 0.0);
  std::vector<bool> seen(K, false);
  for (const auto& r : table.rows)
    if (r.evaluated && r.round == last_eval) {
      iou[r.site] = r.iou;
      assd[r.site] = r.assd;
      seen[r.site] = true;
    }
  for (std::size_t k = 0; k < K; ++k)
    if (!seen[k]) throw RunError("round " + std::to_string(last_eval) + " lacks metrics for site " + std::to_string(k));
  const double iou_avg = std::accumulate(iou.begin(), iou.end(), 0.0) / static_cast<double>(K);
  const double assd_avg = std::accumulate(assd.begin(), assd.end(), 0.0) / static_cast<double>(K);

  std::ostringstream s;
  s << "mode " << mode_name(cfg.mode) << ", round " << last_eval << " of " << cfg.rounds << ", config "
    << table.digest << "\n\n";
  s << std::left << std::setw(10) << "metric";
  for (std::size_t k = 0; k < K; ++k) s << std::right << std::setw(10) << ("site" + std::to_string(k));
  s << std::right << std::setw(10) << "avg" << "\n";
  s << std::left << std::setw(10) << "IoU(%)";
  for (double v : iou) s << std::right << std::setw(10) << fixed(100.0 * v, 2);
  s << std::right << std::setw(10) << fixed(100.0 * iou_avg, 2) << "\n";
  s << std::left << std::setw(10) << "ASSD(px)";
  for (double v : assd) s << std::right << std::setw(10) << fixed(v, 3);
  s << std::right << std::setw(10) << fixed(assd_avg, 3) << "\n";
  {
    std::ofstream f(dir / "summary.txt", std::ios::trunc);
    if (!f) throw RunError("cannot write summary.txt");
    f << s.str();
  }

  std::ofstream c(dir / "curves.csv", std::ios::trunc);
  c << "round";
  for (std::size_t k = 0; k < K; ++k) c << ",iou_site" << k;
  c << ",iou_avg";
  for (std::size_t k = 0; k < K; ++k) c << ",assd_site" << k;
  c << ",assd_avg\n";
  std::map<std::size_t, std::vector<const MetricsRow*>> by_round;
  for (const auto& r : table.rows)
    if (r.evaluated) {
      auto& v = by_round[r.round];
      v.resize(K, nullptr);
      v[r.site] = &r;
    }
  for (const auto& [round, rows] : by_round) {
    if (std::any_of(rows.begin(), rows.end(), [](const auto* p) { return !p; })) continue;
    double mi = 0, ma = 0;
    c << round;
    for (const auto* r : rows) {
      c << "," << detail::num(r->iou);
      mi += r->iou;
    }
    c << "," << detail::num(mi / static_cast<double>(K));
    for (const auto* r : rows) {
      c << "," << detail::num(r->assd);
      ma += r->assd;
    }
    c << "," << detail::num(ma / static_cast<double>(K)) << "\n";
  }
}

}  // namespace lcfed
