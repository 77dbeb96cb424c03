#pragma once

#include "das/dataset.hpp"
#include "das/searchspace.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace das {

inline constexpr int kManifestVersion = 1;
inline constexpr int kCheckpointEpochs = 5;  // epochs 1..5 are always saved

/// Full training schedule: minibatch momentum SGD with a per-epoch cosine
/// learning rate, lr_e = lr/2 * (1 + cos(pi * (e - 1) / epochs)).
struct TrainConfig {
  int epochs = 20;
  double lr = 0.03;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  void check() const;
  double lr_at(int epoch) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  std::uint64_t digest() const;
};

struct CheckpointRef {
  int epoch = 0;
  std::string path;  // relative to the bench directory
  std::uint64_t digest = 0;
  bool final = false;
};

struct BenchRecord {
  ArchSpec spec;
  std::uint64_t init_seed = 0;
  double final_acc = 0.0;
  std::vector<std::pair<int, double>> epoch_acc;
  std::vector<CheckpointRef> checkpoints;
  std::uint64_t train_config_digest = 0;

  const CheckpointRef* checkpoint(int epoch) const;
};

struct FailedRecord {
  ArchSpec spec;
  std::string reason;
  int epoch = 0;
};

struct Bench {
  std::filesystem::path dir;
  Skeleton skeleton;
  TrainConfig train;
  DatasetSource data;
  std::uint64_t data_seed = 0;
  std::uint64_t space_seed = 0;
  std::vector<BenchRecord> records;
  std::vector<FailedRecord> failed;

  nlohmann::json manifest() const;
};

struct BenchConfig {
  std::uint64_t space_seed = 0;
  std::size_t m = 50;
  Skeleton skeleton;
  TrainConfig train;
  DatasetSource data = SyntheticSource{};
  std::uint64_t data_seed = 0;
  int threads = 1;
  std::set<std::size_t> inject_failures;  // record indices forced to fail (testing hook)
  /// Called after each checkpoint is written, with the live network; runs on
  /// worker threads.
  std::function<void(const ArchSpec&, int epoch, const Network&)> on_checkpoint;
};

/// The M distinct specs a bench with this space seed contains, in order.
std::vector<ArchSpec> bench_specs(std::uint64_t space_seed, std::size_t m);

/// Trains every architecture, writes checkpoints under `dir/ckpt` and the
/// manifest `dir/manifest.json`. Failed architectures are recorded, not fatal.
Bench build_bench(const BenchConfig& cfg, const std::filesystem::path& dir);
Bench build_bench(const BenchConfig& cfg, const Dataset& data, const std::filesystem::path& dir);

/// Reads the manifest and verifies every checkpoint digest.
Bench load_bench(const std::filesystem::path& dir);

/// Top-1 accuracy, evaluated in chunks.
double evaluate_accuracy(Network& net, const LabeledSet& set, std::size_t chunk = 200);

struct TrainOutcome {
  std::vector<std::pair<int, double>> epoch_acc;
  std::optional<int> diverged_epoch;
};

/// Full training of an initialized network; `on_epoch(epoch, net)` runs after
/// each epoch's validation pass.
TrainOutcome train_network(Network& net, const LabeledSet& train, const LabeledSet& val, const TrainConfig& cfg,
                           std::uint64_t spec_hash, const std::function<void(int, const Network&)>& on_epoch = {});

}  // namespace das
