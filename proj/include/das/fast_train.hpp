#pragma once

#include "das/proxy.hpp"
#include "das/searchspace.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace das {

inline constexpr int kDefaultFastEpochs = 30;

/// Overfit the scoring batch for `e_f` full-batch steps before scoring.
/// With a single mini-batch one epoch is one gradient step.
struct FastTrainConfig {
  int e_f = kDefaultFastEpochs;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;  // initialization seed

  void check() const;
};

struct TrainTrace {
  std::vector<double> loss;          // loss before the update of each epoch
  std::optional<int> diverged_epoch;  // 1-based
};

struct FastTrainResult {
  Score score;
  ScoreComponents components;
  TrainTrace trace;
  double wall_ms = 0.0;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

/// compile -> init_params(cfg.seed) -> e_f SGD steps -> score on the same batch.
/// A divergent run yields a -inf score instead of throwing.
FastTrainResult fast_train_then_score(const ArchSpec& spec, const Skeleton& skel, const Tensor& batch,
                                      std::span<const int> labels, const FastTrainConfig& cfg, Method method,
                                      Lambda lambda);

/// Same, starting from an already initialized network (cfg.seed unused).
FastTrainResult fast_train_network(Network& net, const Tensor& batch, std::span<const int> labels,
                                   const FastTrainConfig& cfg, Method method, Lambda lambda);

}  // namespace das
