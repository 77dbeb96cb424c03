#pragma once

#include "das/bench.hpp"

#include <filesystem>
#include <string>

namespace das::testing {

/// A few-second bench: 8x8 inputs, one cell per stack, 5 epochs.
inline BenchConfig tiny_bench_config(std::size_t m = 6) {
  BenchConfig cfg;
  cfg.space_seed = 21;
  cfg.m = m;
  cfg.skeleton = Skeleton{4, 2, 1, 10, {3, 8, 8}};
  cfg.train.epochs = 5;
  cfg.train.lr = 0.03;
  cfg.train.batch_size = 32;
  SyntheticSource src;
  src.samples_per_class = 20;
  src.shape = {3, 8, 8};
  cfg.data = src;
  cfg.data_seed = 4;
  return cfg;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("das_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

/// Built once per test binary.
inline const Bench& tiny_bench() {
  static const Bench b = build_bench(tiny_bench_config(), scratch_dir("shared_bench"));
  return b;
}

}  // namespace das::testing
