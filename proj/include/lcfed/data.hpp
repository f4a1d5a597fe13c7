#pragma once

// Synthetic multi-site segmentation benchmark and a PGM/manifest loader.
//
// Each site renders smooth foreground shapes onto a textured background and
// then applies its own acquisition style (brightness offset, contrast gain,
// blur, noise), which produces the inter-site shift federated training has
// to cope with. Images are quantized to 16-bit levels so that a PGM round
// trip is lossless.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcfed/random.hpp"

namespace lcfed {

enum class Split { train, test };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

enum class ShapeFamily { ellipse, blob, polygon };

inline std::string_view family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::blob: return "blob";
    case ShapeFamily::polygon: return "polygon";
  }
  return "?";
}

struct SiteStyle {
  double intensity_offset = 0.0;  // [-0.3, 0.3]
  double contrast_gain = 1.0;     // [0.6, 1.6]
  double noise_std = 0.05;        // [0, 0.15]
  int blur_radius = 0;            // {0,1,2}
  double texture_frequency = 4.0; // cycles per image width
  ShapeFamily family = ShapeFamily::ellipse;
  double min_fraction = 0.06;     // foreground fraction range
  double max_fraction = 0.25;

  void validate() const {
    if (!(min_fraction > 0.0) || !(max_fraction >= min_fraction) || max_fraction >= 1.0) {
      throw std::invalid_argument("degenerate site style: foreground fraction range [" +
                                  std::to_string(min_fraction) + ", " + std::to_string(max_fraction) + "]");
    }
    if (blur_radius < 0 || noise_std < 0.0 || contrast_gain <= 0.0) {
      throw std::invalid_argument("degenerate site style: negative blur/noise or non-positive gain");
    }
  }
};

struct Sample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 1;
  std::vector<double> image;        // [H*W] in [0,1]
  std::vector<std::uint8_t> mask;   // [N*H*W] in {0,1}
  std::size_t site = 0;
  Split split = Split::train;

  bool operator==(const Sample&) const = default;
};

struct SiteData {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Style of site `site`, a pure function of (benchmark seed, site).
/// Brightness offsets follow a golden-ratio sequence over the site index,
/// so sites 0 and 1 always differ by more than 0.3 in offset.
inline SiteStyle make_site_style(std::uint64_t benchmark_seed, std::size_t site) {
  Rng rng(derive_seed(benchmark_seed, {0x5717e, site}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SiteStyle s;
  const double phase = std::fmod(static_cast<double>(site) * 0.6180339887498949, 1.0);
  s.intensity_offset = std::clamp(-0.28 + 0.56 * phase + 0.02 * (2.0 * u(rng) - 1.0), -0.3, 0.3);
  s.contrast_gain = 0.6 + 1.0 * u(rng);
  s.noise_std = 0.02 + 0.1 * u(rng);
  s.blur_radius = static_cast<int>(site % 3);
  s.texture_frequency = 2.0 + 6.0 * u(rng);
  s.family = static_cast<ShapeFamily>((site + static_cast<std::size_t>(benchmark_seed)) % 3);
  s.min_fraction = 0.05 + 0.03 * u(rng);
  s.max_fraction = 0.18 + 0.1 * u(rng);
  return s;
}

namespace detail {

struct ShapeParams {
  double cx, cy, radius, rotation;
  double aspect = 1.0;                 // ellipse
  std::vector<double> harmonics;       // blob: amplitude, phase pairs
  std::vector<double> vx, vy;          // polygon vertices relative to centre at radius 1
};

inline bool point_in_polygon(double px, double py, const std::vector<double>& vx, const std::vector<double>& vy) {
  bool inside = false;
  for (std::size_t i = 0, j = vx.size() - 1; i < vx.size(); j = i++) {
    if ((vy[i] > py) != (vy[j] > py) && px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i])
      inside = !inside;
  }
  return inside;
}

// Rasterizes the shape scaled by `scale` about its centre; pixel centres at +0.5.
inline std::vector<std::uint8_t> rasterize(const ShapeParams& sp, ShapeFamily family, double scale, std::size_t H,
                                           std::size_t W) {
  std::vector<std::uint8_t> m(H * W, 0);
  const double r = sp.radius * scale;
  const double c = std::cos(sp.rotation), s = std::sin(sp.rotation);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - sp.cx, dy = static_cast<double>(y) + 0.5 - sp.cy;
      const double u = (c * dx + s * dy) / r, v = (-s * dx + c * dy) / r;
      bool in = false;
      switch (family) {
        case ShapeFamily::ellipse: in = u * u * sp.aspect + v * v / sp.aspect <= 1.0; break;
        case ShapeFamily::blob: {
          const double phi = std::atan2(v, u);
          double rr = 1.0;
          for (std::size_t h = 0; h + 1 < sp.harmonics.size(); h += 2)
            rr += sp.harmonics[h] * std::cos(static_cast<double>(h / 2 + 2) * phi + sp.harmonics[h + 1]);
          in = std::hypot(u, v) <= rr;
          break;
        }
        case ShapeFamily::polygon: in = point_in_polygon(u, v, sp.vx, sp.vy); break;
      }
      m[y * W + x] = in ? 1 : 0;
    }
  return m;
}

inline double fraction(const std::vector<std::uint8_t>& m) {
  std::size_t n = 0;
  for (auto v : m) n += v;
  return static_cast<double>(n) / static_cast<double>(m.size());
}

inline void box_blur(std::vector<double>& img, std::size_t H, std::size_t W, int radius) {
  if (radius <= 0) return;
  std::vector<double> tmp(img.size());
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi); };
  const long r = radius;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (long d = -r; d <= r; ++d) acc += img[y * W + clampi(static_cast<long>(x) + d, static_cast<long>(W) - 1)];
      tmp[y * W + x] = acc / static_cast<double>(2 * r + 1);
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (long d = -r; d <= r; ++d) acc += tmp[clampi(static_cast<long>(y) + d, static_cast<long>(H) - 1) * W + x];
      img[y * W + x] = acc / static_cast<double>(2 * r + 1);
    }
}

inline double quantize16(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

}  // namespace detail

/// Renders one sample. Throws if no shape within the style's size range can
/// be placed after a bounded number of attempts.
inline Sample render_sample(const SiteStyle& style, std::size_t height, std::size_t width, std::size_t classes,
                            Rng& rng) {
  style.validate();
  if (classes == 0 || classes > 2) throw std::invalid_argument("synthetic benchmark supports 1 or 2 classes");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double H = static_cast<double>(height), W = static_cast<double>(width);

  detail::ShapeParams sp{};
  std::vector<std::uint8_t> outer;
  bool placed = false;
  for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
    const double target = style.min_fraction + (style.max_fraction - style.min_fraction) * (0.1 + 0.8 * u(rng));
    sp.radius = std::sqrt(target * H * W / std::numbers::pi);
    sp.rotation = u(rng) * std::numbers::pi;
    sp.aspect = 0.6 + 0.8 * u(rng);
    sp.harmonics.clear();
    for (int h = 0; h < 3; ++h) {
      sp.harmonics.push_back(0.15 * u(rng));
      sp.harmonics.push_back(2.0 * std::numbers::pi * u(rng));
    }
    sp.vx.clear();
    sp.vy.clear();
    const int nv = 5 + static_cast<int>(u(rng) * 4.0);
    for (int v = 0; v < nv; ++v) {
      const double ang = 2.0 * std::numbers::pi * (v + 0.3 * u(rng)) / nv;
      const double rad = 1.1 + 0.25 * u(rng);
      sp.vx.push_back(rad * std::cos(ang));
      sp.vy.push_back(rad * std::sin(ang));
    }
    const double margin = 1.45 * sp.radius / std::sqrt(std::min(sp.aspect, 1.0 / sp.aspect));
    if (2.0 * margin >= std::min(H, W)) continue;
    sp.cx = margin + (W - 2.0 * margin) * u(rng);
    sp.cy = margin + (H - 2.0 * margin) * u(rng);
    // The families differ in area at equal radius; rescale once towards the target.
    outer = detail::rasterize(sp, style.family, 1.0, height, width);
    double frac = detail::fraction(outer);
    if (frac > 0.0) {
      sp.radius *= std::sqrt(target / frac);
      outer = detail::rasterize(sp, style.family, 1.0, height, width);
      frac = detail::fraction(outer);
    }
    placed = frac >= style.min_fraction && frac <= style.max_fraction;
  }
  if (!placed) {
    throw std::invalid_argument("degenerate site style: cannot place a " + std::string(family_name(style.family)) +
                                " covering [" + std::to_string(style.min_fraction) + ", " +
                                std::to_string(style.max_fraction) + "] of a " + std::to_string(height) + "x" +
                                std::to_string(width) + " image");
  }

  Sample s;
  s.height = height;
  s.width = width;
  s.classes = classes;
  s.mask = outer;
  std::vector<std::uint8_t> inner;
  if (classes == 2) {
    inner = detail::rasterize(sp, style.family, 0.55, height, width);
    s.mask.insert(s.mask.end(), inner.begin(), inner.end());
  }

  const double tex_angle = u(rng) * std::numbers::pi;
  const double tex_phase = u(rng) * 2.0 * std::numbers::pi;
  const double k = 2.0 * std::numbers::pi * style.texture_frequency / W;
  std::vector<double> img(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      double v = outer[i] ? 0.7 : 0.3;
      if (!inner.empty() && inner[i]) v = 0.85;
      v += 0.05 * std::sin(k * (std::cos(tex_angle) * x + std::sin(tex_angle) * y) + tex_phase);
      img[i] = v;
    }
  detail::box_blur(img, height, width, style.blur_radius);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : img) {
    v = 0.5 + style.intensity_offset + style.contrast_gain * (v - 0.5);
    if (style.noise_std > 0.0) v += style.noise_std * noise(rng);
    v = detail::quantize16(v);
  }
  s.image = std::move(img);
  return s;
}

/// n samples for one site; the first 80% (rounded) form the train split.
inline std::vector<Sample> generate_site(const SiteStyle& style, std::size_t n, std::uint64_t seed,
                                         std::size_t site = 0, std::size_t height = 64, std::size_t width = 64,
                                         std::size_t classes = 1) {
  if (n == 0) throw std::invalid_argument("generate_site needs at least one sample");
  const std::size_t n_train = (n * 4 + 2) / 5;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {site, i}));
    Sample s = render_sample(style, height, width, classes, rng);
    s.site = site;
    s.split = i < n_train ? Split::train : Split::test;
    out.push_back(std::move(s));
  }
  return out;
}

struct BenchmarkSpec {
  std::uint64_t seed = 7;
  std::size_t sites = 4;
  std::size_t train_per_site = 120;
  std::size_t test_per_site = 30;
  std::size_t image_size = 64;
  std::size_t classes = 1;
};

inline std::vector<SiteData> split_by_site(const std::vector<Sample>& samples) {
  std::size_t k = 0;
  for (const auto& s : samples) k = std::max(k, s.site + 1);
  std::vector<SiteData> out(k);
  for (const auto& s : samples) (s.split == Split::train ? out[s.site].train : out[s.site].test).push_back(s);
  return out;
}

inline std::vector<SiteData> generate_benchmark(const BenchmarkSpec& spec) {
  std::vector<SiteData> out;
  for (std::size_t k = 0; k < spec.sites; ++k) {
    const std::size_t n = spec.train_per_site + spec.test_per_site;
    auto samples = generate_site(make_site_style(spec.seed, k), n, derive_seed(spec.seed, {0xda7a}), k,
                                 spec.image_size, spec.image_size, spec.classes);
    SiteData d;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].split = i < spec.train_per_site ? Split::train : Split::test;
      (i < spec.train_per_site ? d.train : d.test).push_back(std::move(samples[i]));
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM and manifest I/O

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // normalized to [0,1]
};

/// Reads binary (P5) or ASCII (P2) PGM with 8- or 16-bit samples.
inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file " + path.string());
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw std::runtime_error("truncated PGM header in " + path.string());
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw std::runtime_error(path.string() + " is not a PGM file");
  GrayImage img;
  long maxval = 0;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    maxval = std::stol(token());
  } catch (const std::logic_error&) {
    throw std::runtime_error("malformed PGM header in " + path.string());
  }
  if (img.width == 0 || img.height == 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("unsupported PGM geometry in " + path.string());
  const std::size_t n = img.width * img.height;
  img.values.resize(n);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    const bool wide = maxval > 255;
    std::vector<unsigned char> raw(n * (wide ? 2 : 1));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
      throw std::runtime_error("truncated PGM pixel data in " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = wide ? (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1] : raw[i];
      img.values[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) img.values[i] = std::stod(token()) / static_cast<double>(maxval);
  }
  return img;
}

/// Writes a binary PGM; values in [0,1] are scaled to `maxval` (255 or 65535).
inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<double>& values, unsigned maxval = 65535) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file " + path.string());
  out << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  for (double v : values) {
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (maxval > 255) out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
}

struct ManifestEntry {
  std::size_t site = 0;
  Split split = Split::train;
  std::filesystem::path image;
  std::vector<std::filesystem::path> masks;  // one per class
};

/// One record per line: `site split image mask [mask ...]`. Blank lines and
/// lines starting with '#' are ignored; relative paths resolve against the
/// manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  const auto base = manifest.parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string site, split, image;
    if (!(ls >> site) || site[0] == '#') continue;
    ManifestEntry e;
    try {
      e.site = std::stoul(site);
    } catch (const std::logic_error&) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": bad site index '" + site + "'");
    }
    if (!(ls >> split >> image))
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": expected site split image mask");
    try {
      e.split = parse_split(split);
    } catch (const std::invalid_argument& err) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": " + err.what());
    }
    e.image = base / image;
    for (std::string m; ls >> m;) e.masks.push_back(base / m);
    if (e.masks.empty())
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": missing mask path");
    out.push_back(std::move(e));
  }
  return out;
}

/// Loads every manifest record. Images are normalized to [0,1] and masks
/// binarized at 0.5.
inline std::vector<Sample> load_directory(const std::filesystem::path& manifest) {
  std::vector<Sample> out;
  for (const auto& e : read_manifest(manifest)) {
    const auto img = read_pgm(e.image);
    Sample s;
    s.height = img.height;
    s.width = img.width;
    s.classes = e.masks.size();
    s.image = img.values;
    s.site = e.site;
    s.split = e.split;
    for (const auto& mp : e.masks) {
      const auto m = read_pgm(mp);
      if (m.width != img.width || m.height != img.height) {
        throw std::runtime_error("mask " + mp.string() + " is " + std::to_string(m.width) + "x" +
                                 std::to_string(m.height) + " but image " + e.image.string() + " is " +
                                 std::to_string(img.width) + "x" + std::to_string(img.height));
      }
      for (double v : m.values) s.mask.push_back(v >= 0.5 ? 1 : 0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes samples as 16-bit image / 8-bit mask PGMs plus a manifest.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream mf(manifest);
  if (!mf) throw std::runtime_error("cannot write manifest in " + dir.string());
  mf << "# site split image mask...\n";
  std::vector<std::size_t> counter;
  for (const auto& s : samples) {
    if (counter.size() <= s.site) counter.resize(s.site + 1, 0);
    const std::string stem = "site" + std::to_string(s.site) + "_" + std::string(split_name(s.split)) + "_" +
                             std::to_string(counter[s.site]++);
    write_pgm(dir / (stem + ".pgm"), s.width, s.height, s.image, 65535);
    mf << s.site << ' ' << split_name(s.split) << ' ' << stem << ".pgm";
    const std::size_t hw = s.height * s.width;
    for (std::size_t c = 0; c < s.classes; ++c) {
      std::vector<double> m(s.mask.begin() + c * hw, s.mask.begin() + (c + 1) * hw);
      const std::string name = stem + "_mask" + std::to_string(c) + ".pgm";
      write_pgm(dir / name, s.width, s.height, m, 255);
      mf << ' ' << name;
    }
    mf << '\n';
  }
  return manifest;
}

}  // namespace lcfed
