#pragma once

#include "das/evaluator.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace das {

struct SearchConfig {
  std::size_t n_candidates = 100;
  Method method = Method::DAS;
  Lambda lambda = Lambda::automatic();
  FastTrainConfig fast{.e_f = 0};
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t batch_size = kDefaultBatchSize;
  int threads = 1;

  void check() const;
};

struct TrialResult {
  std::size_t trial = 0;
  ArchSpec chosen;
  std::optional<double> score;      // empty for the random baseline
  std::optional<double> final_acc;  // only when searching a bench
  double cost_s = 0.0;              // scoring time of every candidate in the trial
  bool all_neg_inf = false;         // no candidate had a finite score
};

struct SearchSummary {
  std::optional<double> mean_acc;  // empty when no trial has an accuracy
  std::optional<double> std_acc;   // sample standard deviation
  double mean_cost_s = 0.0;
  std::size_t trials = 0;

  nlohmann::json to_json() const;
};

struct SearchRun {
  std::vector<TrialResult> trials;
  SearchSummary summary() const;
  void write_trials_csv(const std::filesystem::path& path) const;
};

/// Index of the best candidate: highest score, -inf below every finite score,
/// ties broken by the lower spec hash.
std::size_t select_best(std::span<const double> scores, std::span<const std::uint64_t> hashes);

/// Record indices of one trial: the first `n` of a seeded permutation, so
/// smaller candidate counts see a prefix of larger ones.
std::vector<std::size_t> trial_candidates(std::size_t pool, std::size_t n, std::uint64_t seed, std::size_t trial);

/// Search inside a bench. Candidates are drawn without replacement; the
/// scoring batch comes from the bench's held-out pool.
SearchRun run_search(const Bench& bench, const SearchConfig& cfg);
/// Same, over precomputed scoring results (one per bench record).
SearchRun run_search(const Bench& bench, std::span<const ArchComponents> comps, const SearchConfig& cfg);

/// Search the open cell space; candidates are sampled with replacement and
/// have no accuracy.
SearchRun run_search_space(const Skeleton& skel, const LabeledSet& batch, const SearchConfig& cfg);

/// One uniformly drawn record per trial.
SearchRun random_baseline(const Bench& bench, std::size_t trials, std::uint64_t seed);

}  // namespace das
