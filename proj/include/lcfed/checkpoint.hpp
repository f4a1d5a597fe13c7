#pragma once

// Checkpoint file: a text header followed by a little-endian binary blob.
//
//   LCFED-CHECKPOINT 1
//   config_digest <hex>
//   round <t>
//   precision f32|f64
//   heads_stamp <s>
//   config <n>            (n lines of the effective config follow)
//   tensors <m>           (m lines: name shape offset nbytes)
//   end-header
//   <blob>
//
// Every value is stored as an IEEE-754 double; float state widens exactly.
// Offsets are relative to the first byte after the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcfed/config.hpp"

namespace lcfed {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

struct CheckpointHeader {
  int version = kCheckpointVersion;
  std::string config_digest;
  std::size_t round = 0;
  std::string precision;
  std::size_t heads_stamp = 0;
  std::string config_text;
  std::vector<CheckpointEntry> entries;
};

namespace detail {

inline void put_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_field(const std::string& f) {
  Shape s;
  std::stringstream ss(f);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  if (s.empty()) throw CheckpointError("bad shape field '" + f + "'");
  return s;
}

// Collects named tensors in a fixed order and emits header + blob.
class CheckpointWriter {
 public:
  template <typename T>
  void add(const std::string& name, const Shape& shape, std::span<const T> values) {
    if (values.size() != numel(shape)) throw CheckpointError("tensor '" + name + "' size does not match shape");
    entries_.push_back({name, shape, blob_.size(), values.size() * 8});
    for (T v : values) put_f64_le(blob_, static_cast<double>(v));
  }

  void write(const std::filesystem::path& path, const CheckpointHeader& h) const {
    std::ostringstream head;
    head << "LCFED-CHECKPOINT " << kCheckpointVersion << "\n";
    head << "config_digest " << h.config_digest << "\n";
    head << "round " << h.round << "\n";
    head << "precision " << h.precision << "\n";
    head << "heads_stamp " << h.heads_stamp << "\n";
    std::size_t lines = 0;
    for (char c : h.config_text) lines += c == '\n';
    head << "config " << lines << "\n" << h.config_text;
    head << "tensors " << entries_.size() << "\n";
    for (const auto& e : entries_)
      head << e.name << " " << shape_field(e.shape) << " " << e.offset << " " << e.nbytes << "\n";
    head << "end-header\n";

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw CheckpointError("cannot write checkpoint '" + tmp + "'");
      const auto hs = head.str();
      f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
      f.write(blob_.data(), static_cast<std::streamsize>(blob_.size()));
      if (!f) throw CheckpointError("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::vector<CheckpointEntry> entries_;
  std::string blob_;
};

}  // namespace detail

/// Parsed checkpoint with its blob in memory.
class CheckpointFile {
 public:
  static CheckpointFile read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    CheckpointFile c;
    auto next = [&](const char* what) {
      std::string line;
      if (!std::getline(f, line)) throw CheckpointError(path.string() + ": truncated header (" + what + ")");
      return line;
    };
    auto field = [&](const char* key) {
      const auto line = next(key);
      const std::string prefix = std::string(key) + " ";
      if (line.rfind(prefix, 0) != 0) throw CheckpointError(path.string() + ": expected '" + key + "', got '" + line + "'");
      return line.substr(prefix.size());
    };
    const auto magic = field("LCFED-CHECKPOINT");
    c.header_.version = std::stoi(magic);
    if (c.header_.version != kCheckpointVersion)
      throw CheckpointError(path.string() + ": unsupported checkpoint version " + magic);
    c.header_.config_digest = field("config_digest");
    c.header_.round = std::stoull(field("round"));
    c.header_.precision = field("precision");
    c.header_.heads_stamp = std::stoull(field("heads_stamp"));
    const std::size_t lines = std::stoull(field("config"));
    for (std::size_t i = 0; i < lines; ++i) c.header_.config_text += next("config") + "\n";
    const std::size_t n = std::stoull(field("tensors"));
    for (std::size_t i = 0; i < n; ++i) {
      std::istringstream ls(next("tensor table"));
      CheckpointEntry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset >> e.nbytes))
        throw CheckpointError(path.string() + ": malformed tensor table entry " + std::to_string(i));
      e.shape = detail::parse_shape_field(shape);
      if (e.nbytes != numel(e.shape) * 8) throw CheckpointError(path.string() + ": byte count mismatch for " + e.name);
      c.index_[e.name] = c.header_.entries.size();
      c.header_.entries.push_back(std::move(e));
    }
    if (next("end") != "end-header") throw CheckpointError(path.string() + ": missing end-header");
    c.blob_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    for (const auto& e : c.header_.entries)
      if (e.offset + e.nbytes > c.blob_.size())
        throw CheckpointError(path.string() + ": tensor '" + e.name + "' extends past end of file");
    return c;
  }

  const CheckpointHeader& header() const { return header_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  template <typename T>
  void load_into(const std::string& name, const Shape& expect, std::span<T> dst) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    const auto& e = header_.entries[it->second];
    if (e.shape != expect)
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(e.shape) + ", expected " + shape_str(expect));
    const auto* p = reinterpret_cast<const unsigned char*>(blob_.data()) + e.offset;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(detail::get_f64_le(p + 8 * i));
  }

 private:
  CheckpointHeader header_;
  std::map<std::string, std::size_t> index_;
  std::string blob_;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const FederationState<T>& st) {
  detail::CheckpointWriter w;
  for (const auto& p : st.global) w.add<T>("global/" + p.name, p.value.shape(), p.value.values());
  for (std::size_t k = 0; k < st.sites.size(); ++k) {
    const auto& s = st.sites[k];
    const std::string pre = "site" + std::to_string(k) + "/";
    for (const auto& p : s.params) w.add<T>(pre + p.name, p.value.shape(), p.value.values());
    const double t = static_cast<double>(s.optimizer.steps());
    w.add<double>(pre + "adam.t", {1}, std::span<const double>(&t, 1));
    if (s.optimizer.initialized()) {
      for (std::size_t i = 0; i < s.params.size(); ++i) {
        w.add<T>(pre + "adam.m/" + s.params[i].name, s.params[i].value.shape(), s.optimizer.first_moments()[i]);
        w.add<T>(pre + "adam.v/" + s.params[i].name, s.params[i].value.shape(), s.optimizer.second_moments()[i]);
      }
    }
  }
  for (std::size_t k = 0; k < st.heads.size(); ++k) {
    const auto& h = st.heads.heads[k];
    w.add<T>("heads/" + std::to_string(k) + "/weight", h.weight.shape(), h.weight.values());
    w.add<T>("heads/" + std::to_string(k) + "/bias", h.bias.shape(), h.bias.values());
  }
  CheckpointHeader h;
  h.config_digest = config_digest(cfg);
  h.round = st.round;
  h.precision = cfg.precision == Precision::f32 ? "f32" : "f64";
  h.heads_stamp = st.heads.round_stamp;
  h.config_text = serialize_config(cfg);
  w.write(path, h);
}

/// Restores a federation state. The layout comes from a fresh initialization
/// of `cfg`, so a checkpoint from a different model profile is rejected by
/// name or shape.
template <typename T>
FederationState<T> load_checkpoint(const CheckpointFile& c, const ExperimentConfig& cfg) {
  const auto& h = c.header();
  if (h.config_digest != config_digest(cfg))
    throw CheckpointError("checkpoint digest " + h.config_digest + " does not match config digest " + config_digest(cfg));
  auto st = init_federation<T>(cfg.federation());
  st.round = h.round;
  for (auto& p : st.global) c.load_into<T>("global/" + p.name, p.value.shape(), p.value.data());
  for (std::size_t k = 0; k < st.sites.size(); ++k) {
    auto& s = st.sites[k];
    const std::string pre = "site" + std::to_string(k) + "/";
    for (auto& p : s.params) c.load_into<T>(pre + p.name, p.value.shape(), p.value.data());
    double t = 0;
    c.load_into<double>(pre + "adam.t", {1}, std::span<double>(&t, 1));
    s.optimizer.set_steps(static_cast<std::uint64_t>(t));
    if (c.has(pre + "adam.m/" + s.params[0].name)) {
      auto& m = s.optimizer.first_moments();
      auto& v = s.optimizer.second_moments();
      m.clear();
      v.clear();
      for (const auto& p : s.params) {
        m.emplace_back(p.value.numel());
        v.emplace_back(p.value.numel());
        c.load_into<T>(pre + "adam.m/" + p.name, p.value.shape(), std::span<T>(m.back()));
        c.load_into<T>(pre + "adam.v/" + p.name, p.value.shape(), std::span<T>(v.back()));
      }
    }
  }
  st.heads.round_stamp = h.heads_stamp;
  for (std::size_t k = 0; k < st.heads.size(); ++k) {
    auto& hd = st.heads.heads[k];
    c.load_into<T>("heads/" + std::to_string(k) + "/weight", hd.weight.shape(), hd.weight.data());
    c.load_into<T>("heads/" + std::to_string(k) + "/bias", hd.bias.shape(), hd.bias.data());
  }
  return st;
}

}  // namespace lcfed
