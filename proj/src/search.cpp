#include "das/search.hpp"

#include "das/errors.hpp"
#include "das/hash.hpp"
#include "das/parallel.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace das {

void SearchConfig::check() const {
  if (n_candidates < 1) throw ConfigError("search needs at least one candidate");
  if (trials < 1) throw ConfigError("search needs at least one trial");
  fast.check();
}

nlohmann::json SearchSummary::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"mean_acc", opt(mean_acc)}, {"std_acc", opt(std_acc)}, {"mean_cost_s", mean_cost_s}, {"trials", trials}};
}

SearchSummary SearchRun::summary() const {
  SearchSummary s;
  s.trials = trials.size();
  if (trials.empty()) return s;
  std::vector<double> accs;
  double cost = 0.0;
  for (const auto& t : trials) {
    if (t.final_acc) accs.push_back(*t.final_acc);
    cost += t.cost_s;
  }
  s.mean_cost_s = cost / static_cast<double>(trials.size());
  if (!accs.empty()) {
    const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    double ss = 0.0;
    for (double a : accs) ss += (a - mean) * (a - mean);
    s.mean_acc = mean;
    s.std_acc = accs.size() > 1 ? std::sqrt(ss / static_cast<double>(accs.size() - 1)) : 0.0;
  }
  return s;
}

void SearchRun::write_trials_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "trial,spec_hash,score,final_acc,cost_s,all_neg_inf\n";
  char buf[64];
  for (const auto& t : trials) {
    out << t.trial << ',' << t.chosen.hash_hex() << ',';
    if (t.score && std::isinf(*t.score)) {
      out << (*t.score < 0 ? "-inf" : "inf");
    } else if (t.score) {
      std::snprintf(buf, sizeof buf, "%.17g", *t.score);
      out << buf;
    }
    out << ',';
    if (t.final_acc) {
      std::snprintf(buf, sizeof buf, "%.17g", *t.final_acc);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", t.cost_s);
    out << ',' << buf << ',' << (t.all_neg_inf ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::size_t select_best(std::span<const double> scores, std::span<const std::uint64_t> hashes) {
  if (scores.empty() || scores.size() != hashes.size()) throw ConfigError("select_best needs matching, non-empty inputs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const double a = scores[i], b = scores[best];
    if (a > b || (a == b && hashes[i] < hashes[best])) best = i;
  }
  return best;
}

std::vector<std::size_t> trial_candidates(std::size_t pool, std::size_t n, std::uint64_t seed, std::size_t trial) {
  if (n > pool) throw ConfigError("cannot draw " + std::to_string(n) + " candidates from " + std::to_string(pool));
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "trial", {trial}));
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return idx;
}

SearchRun run_search(const Bench& bench, const SearchConfig& cfg) {
  cfg.check();
  const LabeledSet batch = bench_scoring_batch(bench, derive_seed(cfg.seed, "search-batch"), cfg.batch_size);
  return run_search(bench, score_bench(bench, batch, cfg.fast, cfg.threads), cfg);
}

SearchRun run_search(const Bench& bench, std::span<const ArchComponents> comps, const SearchConfig& cfg) {
  cfg.check();
  if (comps.size() != bench.records.size()) throw ConfigError("scoring results do not match the bench records");
  std::vector<double> scores(comps.size());
  std::vector<std::uint64_t> hashes(comps.size());
  for (std::size_t i = 0; i < comps.size(); ++i) {
    scores[i] = comps[i].error ? kNegInfinity : combine(comps[i].components, cfg.method, cfg.lambda).value;
    hashes[i] = comps[i].spec_hash;
  }
  SearchRun run;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const auto cand = trial_candidates(comps.size(), cfg.n_candidates, cfg.seed, t);
    std::vector<double> s;
    std::vector<std::uint64_t> h;
    double cost_ms = 0.0;
    for (std::size_t i : cand) {
      s.push_back(scores[i]);
      h.push_back(hashes[i]);
      cost_ms += comps[i].wall_ms;
    }
    const std::size_t pick = cand[select_best(s, h)];
    run.trials.push_back({t, bench.records[pick].spec, scores[pick], bench.records[pick].final_acc, cost_ms / 1000.0,
                          !std::isfinite(scores[pick])});
  }
  return run;
}

SearchRun run_search_space(const Skeleton& skel, const LabeledSet& batch, const SearchConfig& cfg) {
  cfg.check();
  SearchRun run;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    std::vector<ArchSpec> cands;
    for (std::size_t j = 0; j < cfg.n_candidates; ++j) cands.push_back(sample_random(derive_seed(cfg.seed, "candidate", {t, j})));
    std::vector<double> scores(cands.size());
    std::vector<double> cost(cands.size());
    std::vector<std::uint64_t> hashes(cands.size());
    parallel_for(cands.size(), cfg.threads, [&](std::size_t j) {
      FastTrainConfig fast = cfg.fast;
      fast.seed = derive_seed(cfg.seed, "init", {cands[j].hash()});
      hashes[j] = cands[j].hash();
      const FastTrainResult r = fast_train_then_score(cands[j], skel, batch.images, batch.labels, fast, cfg.method, cfg.lambda);
      scores[j] = r.score.value;
      cost[j] = r.wall_ms / 1000.0;
    });
    const std::size_t pick = select_best(scores, hashes);
    run.trials.push_back({t, cands[pick], scores[pick], std::nullopt, std::accumulate(cost.begin(), cost.end(), 0.0),
                          !std::isfinite(scores[pick])});
  }
  return run;
}

SearchRun random_baseline(const Bench& bench, std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("search needs at least one trial");
  if (bench.records.empty()) throw ConfigError("bench has no records");
  SearchRun run;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t pick = trial_candidates(bench.records.size(), 1, seed, t)[0];
    run.trials.push_back({t, bench.records[pick].spec, std::nullopt, bench.records[pick].final_acc, 0.0, false});
  }
  return run;
}

}  // namespace das
