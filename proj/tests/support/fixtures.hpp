#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "lcfed/config.hpp"

namespace lcfed::testing {

/// A model and dataset small enough for runs of a few seconds.
inline ExperimentConfig tiny_experiment(const std::filesystem::path& out_dir) {
  ExperimentConfig c;
  c.sites = 3;
  c.rounds = 4;
  c.channels = {2, 4};
  c.image_size = 16;
  c.train_per_site = 6;
  c.test_per_site = 2;
  c.batch_size = 3;
  c.lr = 1e-3;
  c.nms_delta = 3;
  c.gauss_size = 5;
  c.gauss_sigma = 1.0;
  c.precision = Precision::f64;
  c.checkpoint_every = 2;
  c.out_dir = out_dir.string();
  return c;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lcfed_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace lcfed::testing
