#include "das/evaluator.hpp"

#include "das/checkpoint.hpp"
#include "das/errors.hpp"
#include "das/hash.hpp"
#include "das/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace das {

namespace {

// Pairs tied within each run of equal keys of a sorted sequence.
template <typename Eq>
long long tied_pairs(std::size_t n, Eq&& equal) {
  long long ties = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      ties += run * (run - 1) / 2;
      run = 1;
    }
  }
  return ties;
}

// Stable merge sort of `v` counting inversions (pairs out of order).
long long sort_count_swaps(std::vector<double>& v, std::vector<double>& tmp, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long swaps = sort_count_swaps(v, tmp, lo, mid) + sort_count_swaps(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<long long>(mid - i);
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("kendall_tau needs sequences of equal length");
  const std::size_t n = xs.size();
  if (n < 2) throw ConfigError("kendall_tau needs at least 2 pairs");
  for (std::size_t i = 0; i < n; ++i)
    if (std::isnan(xs[i]) || std::isnan(ys[i])) throw ConfigError("kendall_tau input contains NaN");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return xs[a] < xs[b] || (xs[a] == xs[b] && ys[a] < ys[b]);
  });
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = ys[order[i]];

  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const long long n1 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return xs[order[a]] == xs[order[b]]; });
  const long long n3 = tied_pairs(n, [&](std::size_t a, std::size_t b) {
    return xs[order[a]] == xs[order[b]] && y[a] == y[b];
  });
  std::vector<double> tmp(n);
  const long long swaps = sort_count_swaps(y, tmp, 0, n);
  const long long n2 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return y[a] == y[b]; });
  if (n1 == n0 || n2 == n0) throw UndefinedCorrelation("kendall tau is undefined for a constant sequence");

  // concordant - discordant over pairs untied in both coordinates
  const long long s = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

LabeledSet bench_scoring_batch(const Bench& bench, std::uint64_t batch_seed, std::size_t n) {
  const Dataset data = load_dataset(bench.data, bench.data_seed);
  return scoring_batch(data.scorebatch, n, batch_seed);
}

std::vector<ArchComponents> score_bench(const Bench& bench, const LabeledSet& batch, const FastTrainConfig& fast,
                                        int threads, int checkpoint_epoch) {
  fast.check();
  std::vector<ArchComponents> out(bench.records.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const BenchRecord& rec = bench.records[i];
    ArchComponents& a = out[i];
    a.spec_hash = rec.spec.hash();
    a.final_acc = rec.final_acc;
    const auto start = std::chrono::steady_clock::now();
    try {
      Network net = compile(rec.spec, bench.skeleton);
      if (checkpoint_epoch == 0) {
        init_params(net, rec.init_seed);
      } else {
        const CheckpointRef* ref = rec.checkpoint(checkpoint_epoch);
        if (!ref) throw IoError("no epoch-" + std::to_string(checkpoint_epoch) + " checkpoint");
        load_checkpoint(net, bench.dir / ref->path);
      }
      FastTrainResult r = fast_train_network(net, batch.images, batch.labels, fast, Method::DAS, Lambda::automatic());
      a.components = r.components;
      a.diverged_epoch = r.trace.diverged_epoch;
    } catch (const std::exception& e) {
      a.error = e.what();
    }
    a.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  });
  return out;
}

EvalReport make_report(std::span<const ArchComponents> comps, Method method, Lambda lambda, int e_f) {
  EvalReport rep;
  rep.method = method;
  rep.e_f = e_f;
  std::vector<double> scores, accs;
  for (const auto& c : comps) {
    if (c.error) {
      rep.skipped.push_back(to_hex(c.spec_hash) + ": " + *c.error);
      continue;
    }
    const Score s = combine(c.components, method, lambda);
    rep.lambda = s.lambda;
    rep.rows.push_back({c.spec_hash, s, c.final_acc, c.wall_ms});
    scores.push_back(s.value);
    accs.push_back(c.final_acc);
  }
  if (rep.rows.size() < 2)
    throw ConfigError("only " + std::to_string(rep.rows.size()) + " architectures could be scored; need at least 2");
  rep.n_archs = rep.rows.size();
  rep.ktau = kendall_tau(scores, accs);
  return rep;
}

namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json json_double(double v) {
  if (std::isfinite(v)) return v;
  return fmt_double(v);
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows)
    rs.push_back({{"spec_hash", to_hex(r.spec_hash)}, {"score", json_double(r.score.value)}, {"final_acc", r.final_acc}});
  return {{"method", method_name(method)}, {"lambda", lambda}, {"e_f", e_f},  {"ktau", ktau},
          {"n_archs", n_archs},            {"rows", rs},       {"skipped", skipped}};
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "spec_hash,score,logdet_nk,log_na,lambda,final_acc\n";
  for (const auto& r : rows)
    out << to_hex(r.spec_hash) << ',' << fmt_double(r.score.value) << ',' << fmt_double(r.score.logdet_nk) << ','
        << fmt_double(r.score.log_na) << ',' << fmt_double(r.score.lambda) << ',' << fmt_double(r.final_acc) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

EvalReport evaluate_proxy(const Bench& bench, const LabeledSet& batch, Method method, Lambda lambda,
                          const FastTrainConfig& fast, int threads) {
  const auto comps = score_bench(bench, batch, fast, threads);
  return make_report(comps, method, lambda, fast.e_f);
}

nlohmann::json AblationGrid::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (int d = 0; d < 2; ++d)
    for (int f = 0; f < 2; ++f)
      cells.push_back({{"decoupled", d == 1}, {"fast_train", f == 1}, {"ktau", ktau[d][f]}});
  return {{"lambda", lambda}, {"e_f", e_f}, {"grid", cells}};
}

AblationGrid ablation(const Bench& bench, const LabeledSet& batch, Lambda lambda, const FastTrainConfig& fast,
                      int threads) {
  FastTrainConfig zero = fast;
  zero.e_f = 0;
  const auto fresh = score_bench(bench, batch, zero, threads);
  const auto trained = score_bench(bench, batch, fast, threads);
  AblationGrid g;
  g.e_f = fast.e_f;
  g.lambda = lambda.resolve(batch.size());
  for (int d = 0; d < 2; ++d) {
    const Method m = d ? Method::DAS : Method::WOT;
    g.ktau[d][0] = make_report(fresh, m, lambda, 0).ktau;
    g.ktau[d][1] = make_report(trained, m, lambda, fast.e_f).ktau;
  }
  return g;
}

LambdaSearch grid_search_lambda(std::span<const ArchComponents> comps, std::span<const Lambda> lambdas) {
  if (lambdas.empty()) throw ConfigError("lambda grid is empty");
  LambdaSearch out;
  out.wot_ktau = make_report(comps, Method::WOT, Lambda::automatic(), 0).ktau;
  for (const Lambda& l : lambdas) {
    const EvalReport r = make_report(comps, Method::DAS, l, 0);
    out.curve.push_back({r.lambda, r.ktau});
    if (out.curve.size() == 1 || r.ktau > out.best_ktau) {
      out.best_ktau = r.ktau;
      out.best_lambda = r.lambda;
    }
  }
  return out;
}

LambdaSearch grid_search_lambda(const Bench& bench, const LabeledSet& batch, std::span<const Lambda> lambdas,
                                const FastTrainConfig& fast, int threads) {
  return grid_search_lambda(score_bench(bench, batch, fast, threads), lambdas);
}

void LambdaSearch::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "lambda,ktau\n";
  for (const auto& p : curve) out << fmt_double(p.lambda) << ',' << fmt_double(p.ktau) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Lambda> default_lambda_grid(std::size_t batch_size, std::size_t steps, double grid_max) {
  if (steps == 0) throw ConfigError("lambda grid needs at least one step");
  std::vector<Lambda> out;
  const double n = static_cast<double>(batch_size);
  for (std::size_t i = 0; i <= steps; ++i)
    out.push_back(Lambda::fixed(grid_max * n * static_cast<double>(i) / static_cast<double>(steps)));
  return out;
}

std::vector<EpochPoint> epoch_sweep(const Bench& bench, const LabeledSet& batch, std::span<const int> epochs,
                                    Method method, Lambda lambda, int threads) {
  FastTrainConfig none;
  none.e_f = 0;
  std::vector<EpochPoint> out;
  for (int epoch : epochs) {
    EpochPoint p;
    p.epoch = epoch;
    if (epoch < 0) throw ConfigError("negative epoch " + std::to_string(epoch));
    std::size_t missing = 0;
    if (epoch > 0)
      for (const auto& r : bench.records) missing += r.checkpoint(epoch) == nullptr;
    if (missing == bench.records.size() && epoch > 0) {
      p.warning = "no checkpoints for epoch " + std::to_string(epoch) + "; skipped";
      out.push_back(std::move(p));
      continue;
    }
    const auto comps = score_bench(bench, batch, none, threads, epoch);
    try {
      const EvalReport r = make_report(comps, method, lambda, 0);
      p.ktau = r.ktau;
      p.n_archs = r.n_archs;
      if (!r.skipped.empty())
        p.warning = std::to_string(r.skipped.size()) + " records without an epoch-" + std::to_string(epoch) +
                    " checkpoint were left out";
    } catch (const ConfigError& e) {
      p.warning = std::string(e.what()) + "; skipped";
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace das
