#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bench_fixture.hpp"
#include "das/errors.hpp"
#include "das/search.hpp"

#include <cmath>
#include <numeric>

using namespace das;
using namespace das::testing;

TEST_CASE("candidate selection") {
  const std::vector<std::uint64_t> h{5, 3, 9, 1};
  CHECK(select_best(std::vector<double>{1.0, 2.0, 0.5, -1.0}, h) == 1);
  CHECK(select_best(std::vector<double>{2.0, 2.0, 0.5, 2.0}, h) == 3);
  CHECK(select_best(std::vector<double>{kNegInfinity, -1e300, kNegInfinity, kNegInfinity}, h) == 1);
  CHECK(select_best(std::vector<double>{kNegInfinity, kNegInfinity, kNegInfinity, kNegInfinity}, h) == 3);
  CHECK(select_best(std::vector<double>{7.0}, std::vector<std::uint64_t>{4}) == 0);
  CHECK_THROWS_AS(select_best(std::vector<double>{}, std::vector<std::uint64_t>{}), ConfigError);
}

TEST_CASE("candidate draws") {
  const auto small = trial_candidates(50, 5, 3, 2), large = trial_candidates(50, 20, 3, 2);
  CHECK(std::equal(small.begin(), small.end(), large.begin()));
  std::vector<std::size_t> sorted = large;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(trial_candidates(50, 5, 3, 2) == small);
  CHECK(trial_candidates(50, 5, 3, 3) != small);
  CHECK_THROWS_AS(trial_candidates(5, 6, 0, 0), ConfigError);
}

namespace {

std::vector<ArchComponents> soft_comps(const Bench& b) {
  FastTrainConfig zero;
  zero.e_f = 0;
  return score_bench(b, bench_scoring_batch(b, 0, 16), zero, 1);
}

}  // namespace

TEST_CASE("search over a bench") {
  const Bench& b = tiny_bench();
  const auto comps = soft_comps(b);
  SearchConfig cfg;
  cfg.trials = 30;
  cfg.seed = 6;

  SUBCASE("one candidate takes the draw regardless of score") {
    cfg.n_candidates = 1;
    const SearchRun r = run_search(b, comps, cfg);
    for (const auto& t : r.trials) CHECK(t.chosen.hash() == b.records[trial_candidates(b.records.size(), 1, 6, t.trial)[0]].spec.hash());
  }
  SUBCASE("deterministic") {
    cfg.n_candidates = 3;
    const SearchRun a = run_search(b, comps, cfg), c = run_search(b, comps, cfg);
    for (std::size_t t = 0; t < a.trials.size(); ++t) CHECK(a.trials[t].chosen.hash() == c.trials[t].chosen.hash());
  }
  SUBCASE("more candidates never choose a lower score") {
    cfg.n_candidates = 2;
    const SearchRun a = run_search(b, comps, cfg);
    cfg.n_candidates = 5;
    const SearchRun c = run_search(b, comps, cfg);
    for (std::size_t t = 0; t < a.trials.size(); ++t) CHECK(*a.trials[t].score <= *c.trials[t].score);
  }
  SUBCASE("choice invariant under a positive rescaling of all scores") {
    cfg.n_candidates = 3;
    auto scaled = comps;
    // DAS with lambda 0 is logdet_nk alone; scaling it scales every score
    for (auto& c : scaled) c.components.logdet_nk *= 2.5;
    cfg.lambda = Lambda::fixed(0.0);
    const SearchRun a = run_search(b, comps, cfg), c = run_search(b, scaled, cfg);
    for (std::size_t t = 0; t < a.trials.size(); ++t) CHECK(a.trials[t].chosen.hash() == c.trials[t].chosen.hash());
  }
  SUBCASE("summary statistics") {
    cfg.n_candidates = 2;
    const SearchRun r = run_search(b, comps, cfg);
    const SearchSummary s = r.summary();
    CHECK(s.trials == 30);
    double mean = 0;
    for (const auto& t : r.trials) mean += *t.final_acc;
    mean /= 30;
    double ss = 0;
    for (const auto& t : r.trials) ss += (*t.final_acc - mean) * (*t.final_acc - mean);
    CHECK(*s.mean_acc == doctest::Approx(mean));
    CHECK(*s.std_acc == doctest::Approx(std::sqrt(ss / 29)));
    CHECK(s.mean_cost_s > 0.0);
  }
  SUBCASE("invalid configuration") {
    cfg.n_candidates = 0;
    CHECK_THROWS_AS(run_search(b, comps, cfg), ConfigError);
    cfg.n_candidates = b.records.size() + 1;
    CHECK_THROWS_AS(run_search(b, comps, cfg), ConfigError);
  }
}

TEST_CASE("random baseline") {
  const Bench& b = tiny_bench();
  const SearchRun r = random_baseline(b, 500, 2);
  const SearchSummary s = r.summary();
  double mean = 0, ss = 0;
  for (const auto& rec : b.records) mean += rec.final_acc;
  mean /= static_cast<double>(b.records.size());
  for (const auto& rec : b.records) ss += (rec.final_acc - mean) * (rec.final_acc - mean);
  const double se = std::sqrt(ss / static_cast<double>(b.records.size())) / std::sqrt(500.0);
  CHECK(std::abs(*s.mean_acc - mean) <= 2.0 * se + 1e-12);
  const SearchRun again = random_baseline(b, 500, 2);
  for (std::size_t t = 0; t < r.trials.size(); ++t) CHECK(r.trials[t].chosen.hash() == again.trials[t].chosen.hash());
}

TEST_CASE("open-space search") {
  const Bench& b = tiny_bench();
  SearchConfig cfg;
  cfg.n_candidates = 3;
  cfg.trials = 2;
  cfg.seed = 1;
  cfg.batch_size = 16;
  const LabeledSet batch = bench_scoring_batch(b, 0, 16);
  const SearchRun r = run_search_space(b.skeleton, batch, cfg);
  REQUIRE(r.trials.size() == 2);
  for (const auto& t : r.trials) CHECK_FALSE(t.final_acc.has_value());
  CHECK_FALSE(r.summary().mean_acc.has_value());
  const SearchRun again = run_search_space(b.skeleton, batch, cfg);
  CHECK(again.trials[1].chosen.hash() == r.trials[1].chosen.hash());
  CHECK(again.trials[1].score == r.trials[1].score);
}
