#pragma once

#include "das/bench.hpp"
#include "das/fast_train.hpp"
#include "das/proxy.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace das {

/// Tie-corrected Kendall tau (tau-b), O(n log n). Equal values, including
/// -inf sentinels, form ties. Throws UndefinedCorrelation when either side is
/// constant.
double kendall_tau(std::span<const double> xs, std::span<const double> ys);

/// The fixed scoring batch of an evaluation run, drawn from the bench's
/// held-out pool.
LabeledSet bench_scoring_batch(const Bench& bench, std::uint64_t batch_seed, std::size_t n = kDefaultBatchSize);

/// Score components of one record; a diverged fast-train leaves both
/// log-determinants at -inf.
struct ArchComponents {
  std::uint64_t spec_hash = 0;
  double final_acc = 0.0;
  ScoreComponents components;
  std::optional<int> diverged_epoch;
  std::optional<std::string> error;  // set when the record could not be scored at all
  double wall_ms = 0.0;
};

/// Weights used for one record: fresh init from its init seed (epoch 0) or a
/// restored checkpoint.
enum class WeightsSource { FreshInit, Checkpoint };

/// Scores every record once; all methods and lambdas are recombinations of
/// the result. `fast.seed` is ignored (each record uses its own init seed).
std::vector<ArchComponents> score_bench(const Bench& bench, const LabeledSet& batch, const FastTrainConfig& fast,
                                        int threads, int checkpoint_epoch = 0);

struct EvalRow {
  std::uint64_t spec_hash = 0;
  Score score;
  double final_acc = 0.0;
  double wall_ms = 0.0;
};

struct EvalReport {
  Method method = Method::DAS;
  double lambda = 0.0;  // resolved
  int e_f = 0;
  double ktau = 0.0;
  std::size_t n_archs = 0;
  std::vector<EvalRow> rows;
  std::vector<std::string> skipped;  // "hash: reason"

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// KTau between scores and final accuracy over the scorable rows. Throws
/// ConfigError when fewer than two rows survive.
EvalReport make_report(std::span<const ArchComponents> comps, Method method, Lambda lambda, int e_f);

EvalReport evaluate_proxy(const Bench& bench, const LabeledSet& batch, Method method, Lambda lambda,
                          const FastTrainConfig& fast, int threads);

/// {decoupled?} x {fast-train?}: WOT vs DAS(lambda), e_f = 0 vs fast.e_f.
struct AblationGrid {
  double ktau[2][2] = {};  // [decoupled][fast]
  double lambda = 0.0;
  int e_f = 0;

  nlohmann::json to_json() const;
};

AblationGrid ablation(const Bench& bench, const LabeledSet& batch, Lambda lambda, const FastTrainConfig& fast,
                      int threads);

struct LambdaPoint {
  double lambda = 0.0;
  double ktau = 0.0;
};

struct LambdaSearch {
  double best_lambda = 0.0;
  double best_ktau = 0.0;
  double wot_ktau = 0.0;
  std::vector<LambdaPoint> curve;

  void write_csv(const std::filesystem::path& path) const;
};

/// KTau per lambda; the first maximum wins.
LambdaSearch grid_search_lambda(std::span<const ArchComponents> comps, std::span<const Lambda> lambdas);
LambdaSearch grid_search_lambda(const Bench& bench, const LabeledSet& batch, std::span<const Lambda> lambdas,
                                const FastTrainConfig& fast, int threads);

/// 0, 0.1N, ..., grid_max * N in `steps` equal increments.
std::vector<Lambda> default_lambda_grid(std::size_t batch_size, std::size_t steps = 20, double grid_max = 2.0);

struct EpochPoint {
  int epoch = 0;
  std::optional<double> ktau;  // empty when the epoch was skipped
  std::size_t n_archs = 0;
  std::string warning;
};

/// KTau of the proxy on weights restored from each record's epoch-k
/// checkpoint; epoch 0 is the fresh init. Epochs with a missing checkpoint
/// are skipped with a warning.
std::vector<EpochPoint> epoch_sweep(const Bench& bench, const LabeledSet& batch, std::span<const int> epochs,
                                    Method method, Lambda lambda, int threads);

}  // namespace das
