#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bench_fixture.hpp"
#include "das/errors.hpp"
#include "das/evaluator.hpp"
#include "oracles.hpp"

#include <random>

using namespace das;
using namespace das::testing;

TEST_CASE("kendall tau") {
  SUBCASE("orderings") {
    const std::vector<double> x{1, 2, 3, 4};
    CHECK(kendall_tau(x, std::vector<double>{10, 20, 30, 40}) == 1.0);
    CHECK(kendall_tau(x, std::vector<double>{4, 3, 2, 1}) == -1.0);
    const std::vector<double> y{1, 3, 2, 4};
    CHECK(kendall_tau(x, y) == kendall_tau_pairs(x, y));
    CHECK(kendall_tau(x, y) == doctest::Approx(4.0 / 6.0));
  }
  SUBCASE("matches pair enumeration with ties and sentinels") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 2 + rng() % 199;
      const int levels = 1 + static_cast<int>(rng() % 30);
      std::uniform_int_distribution<int> u(0, levels);
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = u(rng) == 0 ? kNegInfinity : u(rng);
        y[i] = u(rng) * 0.25;
      }
      const bool constant_x = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
      const bool constant_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
      if (constant_x || constant_y) {
        CHECK_THROWS_AS(kendall_tau(x, y), UndefinedCorrelation);
        continue;
      }
      CHECK(kendall_tau(x, y) == kendall_tau_pairs(x, y));
    }
  }
  SUBCASE("invariant under increasing transforms and positive scaling") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::vector<double> x(80), y(80), tx(80), sx(80);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = g(rng);
      y[i] = g(rng);
      tx[i] = std::exp(x[i]) + x[i];
      sx[i] = 3.5 * x[i];
    }
    CHECK(kendall_tau(tx, y) == kendall_tau(x, y));
    CHECK(kendall_tau(sx, y) == kendall_tau(x, y));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(kendall_tau(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedCorrelation);
    CHECK_THROWS_AS(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(kendall_tau(std::vector<double>{1}, std::vector<double>{1}), ConfigError);
    CHECK_THROWS_AS(kendall_tau(std::vector<double>{1, std::nan("")}, std::vector<double>{1, 2}), ConfigError);
  }
}

namespace {

ArchComponents fake(std::uint64_t hash, double logdet_nk, std::size_t n_a, double acc) {
  ArchComponents a;
  a.spec_hash = hash;
  a.final_acc = acc;
  a.components.n = 8;
  a.components.n_a = n_a;
  a.components.logdet_nk = logdet_nk;
  a.components.logdet_raw = logdet_nk + 8 * std::log(static_cast<double>(n_a));
  return a;
}

}  // namespace

TEST_CASE("reports over precomputed components") {
  SUBCASE("accuracy increasing in the score gives tau 1") {
    std::vector<ArchComponents> c;
    for (int i = 0; i < 10; ++i) c.push_back(fake(static_cast<std::uint64_t>(i), -5.0 + i, 1000, 0.1 + 0.05 * i));
    const EvalReport r = make_report(c, Method::DAS, Lambda::fixed(0.0), 0);
    CHECK(r.ktau == 1.0);
    CHECK(r.n_archs == 10);
  }
  SUBCASE("unscorable rows are skipped, too few rows abort") {
    std::vector<ArchComponents> c{fake(1, -1, 100, 0.2), fake(2, -2, 100, 0.1)};
    c.push_back(c[0]);
    c.back().error = "broken";
    const EvalReport r = make_report(c, Method::WOT, Lambda::automatic(), 0);
    CHECK(r.n_archs == 2);
    CHECK(r.skipped.size() == 1);
    c[1].error = "broken";
    CHECK_THROWS_AS(make_report(c, Method::WOT, Lambda::automatic(), 0), ConfigError);
  }
  SUBCASE("sentinel rows rank jointly last") {
    std::vector<ArchComponents> c{fake(1, kNegInfinity, 10, 0.1), fake(2, kNegInfinity, 10, 0.15), fake(3, 1, 10, 0.3),
                                  fake(4, 2, 10, 0.4)};
    const EvalReport r = make_report(c, Method::DAS, Lambda::automatic(), 0);
    CHECK(r.n_archs == 4);
    CHECK(r.ktau == kendall_tau_pairs({kNegInfinity, kNegInfinity, 1, 2}, {0.1, 0.15, 0.3, 0.4}));
  }
  SUBCASE("lambda grid") {
    std::vector<ArchComponents> c{fake(1, -10, 100, 0.5), fake(2, -1, 10, 0.6), fake(3, -3, 1000, 0.7),
                                  fake(4, -4, 5000, 0.8)};
    const std::vector<Lambda> one{Lambda::fixed(3.0)};
    CHECK(grid_search_lambda(c, one).best_lambda == 3.0);
    const std::vector<Lambda> tied{Lambda::fixed(0.5), Lambda::fixed(0.5000001), Lambda::fixed(100.0)};
    const LambdaSearch s = grid_search_lambda(c, tied);
    CHECK(s.curve[0].ktau == s.curve[1].ktau);
    if (s.best_ktau == s.curve[0].ktau) CHECK(s.best_lambda == 0.5);
    const std::vector<Lambda> at_n{Lambda::fixed(8.0)};
    CHECK(grid_search_lambda(c, at_n).curve[0].ktau == s.wot_ktau);
    CHECK_THROWS_AS(grid_search_lambda(c, std::vector<Lambda>{}), ConfigError);
    const auto grid = default_lambda_grid(64, 4, 2.0);
    REQUIRE(grid.size() == 5);
    CHECK(grid.front().resolve(64) == 0.0);
    CHECK(grid.back().resolve(64) == 128.0);
  }
}

TEST_CASE("evaluation on a built bench") {
  const Bench& b = tiny_bench();
  const LabeledSet batch = bench_scoring_batch(b, 1, 16);
  FastTrainConfig zero;
  zero.e_f = 0;
  const auto comps = score_bench(b, batch, zero, 1);

  SUBCASE("DAS at lambda = N reproduces WOT") {
    const EvalReport w = make_report(comps, Method::WOT, Lambda::automatic(), 0);
    const EvalReport d = make_report(comps, Method::DAS, Lambda::fixed(16.0), 0);
    CHECK(w.ktau == d.ktau);
  }
  SUBCASE("deterministic and independent of threads") {
    const EvalReport a = evaluate_proxy(b, batch, Method::DAS, Lambda::automatic(), zero, 1);
    const EvalReport c = evaluate_proxy(b, batch, Method::DAS, Lambda::automatic(), zero, 3);
    CHECK(a.to_json() == c.to_json());
    CHECK(a.lambda == doctest::Approx(16.0 * 2.0 / 3.0));
  }
  SUBCASE("epoch 0 of the sweep is the fresh-init evaluation") {
    const std::vector<int> epochs{0, 2, 9};
    const auto sweep = epoch_sweep(b, batch, epochs, Method::DAS, Lambda::automatic(), 1);
    REQUIRE(sweep.size() == 3);
    CHECK(sweep[0].ktau == make_report(comps, Method::DAS, Lambda::automatic(), 0).ktau);
    CHECK(sweep[1].ktau.has_value());
    CHECK_FALSE(sweep[2].ktau.has_value());
    CHECK(sweep[2].warning.find("epoch 9") != std::string::npos);
  }
  SUBCASE("ablation grid cells match single evaluations") {
    FastTrainConfig fast;
    fast.e_f = 3;
    const AblationGrid g = ablation(b, batch, Lambda::automatic(), fast, 1);
    CHECK(g.ktau[0][0] == make_report(comps, Method::WOT, Lambda::automatic(), 0).ktau);
    CHECK(g.ktau[1][1] == evaluate_proxy(b, batch, Method::DAS, Lambda::automatic(), fast, 1).ktau);
  }
}
