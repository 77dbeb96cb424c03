#include "das_cli.hpp"

#include "das/bench.hpp"
#include "das/checkpoint.hpp"
#include "das/errors.hpp"
#include "das/evaluator.hpp"
#include "das/fast_train.hpp"
#include "das/hash.hpp"
#include "das/parallel.hpp"
#include "das/search.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace das::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_logger_mt("das");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

// Option groups shared between subcommands.

struct Globals {
  std::uint64_t seed = 0;
  int threads = default_threads();
  std::string out = "out";
  std::string log_level = "info";
  bool deterministic = false;
};

struct DataOpts {
  std::string kind = "synthetic";
  std::string cifar_dir;
  SyntheticSource synth;
  std::size_t score_pool = 1000;
  std::uint64_t data_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--data", kind, "dataset kind")->check(CLI::IsMember({"synthetic", "cifar10"}));
    app->add_option("--cifar-dir", cifar_dir, "directory with the CIFAR-10 binary batches");
    app->add_option("--classes", synth.classes, "synthetic classes");
    app->add_option("--samples-per-class", synth.samples_per_class, "synthetic samples per class");
    app->add_option("--noise", synth.noise, "synthetic noise level");
    app->add_option("--score-pool", score_pool, "CIFAR-10 samples held out for scoring batches");
    app->add_option("--data-seed", data_seed, "dataset generation / split seed");
  }
  DatasetSource source() const {
    if (kind == "cifar10") {
      if (cifar_dir.empty()) throw UsageError("--data cifar10 needs --cifar-dir");
      return Cifar10Source{cifar_dir, score_pool};
    }
    return synth;
  }
};

struct SkelOpts {
  Skeleton skel;
  void add(CLI::App* app) {
    app->add_option("--stem-channels", skel.stem_channels, "stem width");
    app->add_option("--stacks", skel.num_stacks, "stacks of cells");
    app->add_option("--cells-per-stack", skel.cells_per_stack, "cells per stack");
  }
  Skeleton get(const DatasetSource& src) const {
    Skeleton s = skel;
    if (std::holds_alternative<Cifar10Source>(src)) s.input_shape = {3, 32, 32};
    else s.input_shape = std::get<SyntheticSource>(src).shape;
    s.classes = std::holds_alternative<Cifar10Source>(src) ? 10 : std::get<SyntheticSource>(src).classes;
    s.check();
    return s;
  }
};

struct ProxyOpts {
  std::string method = "das";
  std::string lambda = "auto";
  FastTrainConfig fast{.e_f = 0};
  std::size_t batch_size = kDefaultBatchSize;
  std::uint64_t batch_seed = 0;

  void add(CLI::App* app, bool with_method = true) {
    if (with_method) {
      app->add_option("--method", method, "proxy")->check(CLI::IsMember({"das", "wot", "DAS", "WOT"}));
      app->add_option("--lambda", lambda, "weight of ln(N_A): auto or a number");
    }
    app->add_option("--ef", fast.e_f, "fast-train epochs on the scoring batch");
    app->add_option("--ft-lr", fast.lr, "fast-train learning rate");
    app->add_option("--ft-momentum", fast.momentum, "fast-train momentum");
    app->add_option("--batch-size", batch_size, "scoring batch size N");
    app->add_option("--batch-seed", batch_seed, "scoring batch seed");
  }
  Method m() const { return parse_method(method); }
  Lambda l() const { return Lambda::parse(lambda); }
};

std::vector<ArchSpec> load_specs(const std::vector<std::string>& files, std::size_t random, std::uint64_t seed) {
  std::vector<ArchSpec> specs;
  for (const auto& f : files) {
    const nlohmann::json j = read_json(f);
    if (j.is_array())
      for (const auto& e : j) specs.push_back(ArchSpec::from_json(e));
    else
      specs.push_back(ArchSpec::from_json(j));
  }
  for (std::size_t i = 0; i < random; ++i) specs.push_back(sample_random(derive_seed(seed, "cli-spec", {i})));
  if (specs.empty()) throw UsageError("no architectures given: use --spec <file> or --random <count>");
  for (const auto& s : specs)
    if (auto v = validate(s); !v.empty()) throw FormatError("spec " + s.hash_hex() + " is invalid: " + v.front());
  return specs;
}

std::uint64_t init_seed_for(std::uint64_t seed, const ArchSpec& spec) { return derive_seed(seed, "init", {spec.hash()}); }

struct Context {
  Globals g;
  fs::path out;
  int threads() const { return g.deterministic ? 1 : g.threads; }
  double timing(double v) const { return g.deterministic ? 0.0 : v; }
};

using Runner = std::function<void(Context&)>;

// ---------------------------------------------------------------- commands

struct ScoreCmd {
  std::vector<std::string> specs;
  std::size_t random = 0;
  DataOpts data;
  SkelOpts skel;
  ProxyOpts proxy;

  void add(CLI::App* app) {
    app->add_option("--spec", specs, "architecture JSON file (object or array); repeatable");
    app->add_option("--random", random, "additionally score this many random architectures");
    data.add(app);
    skel.add(app);
    proxy.add(app);
  }

  void run(Context& ctx) {
    const auto arch = load_specs(specs, random, ctx.g.seed);
    const DatasetSource src = data.source();
    const Skeleton sk = skel.get(src);
    const LabeledSet batch = scoring_batch(load_dataset(src, data.data_seed).scorebatch, proxy.batch_size, proxy.batch_seed);
    std::vector<FastTrainResult> results(arch.size());
    parallel_for(arch.size(), ctx.threads(), [&](std::size_t i) {
      FastTrainConfig cfg = proxy.fast;
      cfg.seed = init_seed_for(ctx.g.seed, arch[i]);
      results[i] = fast_train_then_score(arch[i], sk, batch.images, batch.labels, cfg, proxy.m(), proxy.l());
    });
    std::ostringstream scores, trace;
    scores << "spec_hash,N,N_A,lambda,logdet_nk,log_na,score,wall_ms\n";
    trace << "spec_hash,epoch,loss\n";
    for (std::size_t i = 0; i < arch.size(); ++i) {
      const auto& r = results[i];
      scores << arch[i].hash_hex() << ',' << r.components.n << ',' << r.components.n_a << ',' << num(r.score.lambda)
             << ',' << num(r.score.logdet_nk) << ',' << num(r.score.log_na) << ',' << num(r.score.value) << ','
             << num(ctx.timing(r.wall_ms)) << '\n';
      for (std::size_t e = 0; e < r.trace.loss.size(); ++e)
        trace << arch[i].hash_hex() << ',' << e + 1 << ',' << num(r.trace.loss[e]) << '\n';
      if (r.trace.diverged_epoch)
        logger()->warn("{}: fast training diverged at epoch {}", arch[i].hash_hex(), *r.trace.diverged_epoch);
    }
    write_text(ctx.out / "scores.csv", scores.str());
    write_text(ctx.out / "trace.csv", trace.str());
    std::cout << scores.str();
  }
};

struct SearchCmd {
  std::string bench;
  bool space = false;
  bool baseline = false;
  SearchConfig cfg;
  DataOpts data;
  SkelOpts skel;
  ProxyOpts proxy;

  void add(CLI::App* app) {
    app->add_option("--bench", bench, "search inside this bench directory");
    app->add_flag("--space", space, "search the open cell space");
    app->add_option("--n", cfg.n_candidates, "candidates per trial");
    app->add_option("--trials", cfg.trials, "independent trials");
    app->add_flag("--baseline", baseline, "also run the random baseline (bench only)");
    data.add(app);
    skel.add(app);
    proxy.add(app);
  }

  void finish(Context& ctx, SearchRun run, const std::string& stem) {
    for (auto& t : run.trials) t.cost_s = ctx.timing(t.cost_s);
    write_json(ctx.out / (stem + "_summary.json"), run.summary().to_json());
    run.write_trials_csv(ctx.out / (stem + "_trials.csv"));
    const SearchSummary s = run.summary();
    if (s.mean_acc)
      logger()->info("{}: mean acc {:.4f} +- {:.4f} over {} trials, mean cost {:.3f}s", stem, *s.mean_acc, *s.std_acc,
                     s.trials, s.mean_cost_s);
    else
      logger()->info("{}: {} trials, mean cost {:.3f}s", stem, s.trials, s.mean_cost_s);
  }

  void run(Context& ctx) {
    if (bench.empty() == !space) throw UsageError("search needs exactly one of --bench <dir> or --space");
    cfg.method = proxy.m();
    cfg.lambda = proxy.l();
    cfg.fast = proxy.fast;
    cfg.seed = ctx.g.seed;
    cfg.batch_size = proxy.batch_size;
    cfg.threads = ctx.threads();
    if (!bench.empty()) {
      const Bench b = load_bench(bench);
      finish(ctx, run_search(b, cfg), "search");
      if (baseline) finish(ctx, random_baseline(b, cfg.trials, ctx.g.seed), "baseline");
      return;
    }
    if (baseline) throw UsageError("--baseline needs --bench");
    const DatasetSource src = data.source();
    const LabeledSet batch = scoring_batch(load_dataset(src, data.data_seed).scorebatch, proxy.batch_size, proxy.batch_seed);
    finish(ctx, run_search_space(skel.get(src), batch, cfg), "search");
  }
};

struct BenchInput {
  std::string dir;
  void add(CLI::App* app) { app->add_option("--bench", dir, "bench directory")->required(); }
};

struct GridCmd {
  BenchInput bench;
  ProxyOpts proxy;
  std::vector<std::string> lambdas;
  std::size_t steps = 20;
  double grid_max = 2.0;

  void add(CLI::App* app) {
    bench.add(app);
    proxy.add(app, false);
    app->add_option("--lambdas", lambdas, "explicit lambda values (auto allowed)")->delimiter(',');
    app->add_option("--grid-steps", steps, "uniform grid steps when --lambdas is absent");
    app->add_option("--grid-max", grid_max, "grid upper end as a multiple of N");
  }

  void run(Context& ctx) {
    const Bench b = load_bench(bench.dir);
    std::vector<Lambda> grid;
    for (const auto& s : lambdas) grid.push_back(Lambda::parse(s));
    if (grid.empty()) grid = default_lambda_grid(proxy.batch_size, steps, grid_max);
    const LabeledSet batch = bench_scoring_batch(b, proxy.batch_seed, proxy.batch_size);
    const LambdaSearch s = grid_search_lambda(b, batch, grid, proxy.fast, ctx.threads());
    s.write_csv(ctx.out / "lambda_curve.csv");
    write_json(ctx.out / "gridsearch.json", {{"best_lambda", s.best_lambda},
                                             {"best_ktau", s.best_ktau},
                                             {"wot_ktau", s.wot_ktau},
                                             {"e_f", proxy.fast.e_f},
                                             {"batch_size", proxy.batch_size}});
    logger()->info("best lambda {} (KTau {:.4f}); WOT KTau {:.4f}", num(s.best_lambda), s.best_ktau, s.wot_ktau);
  }
};

struct EvaluateCmd {
  BenchInput bench;
  ProxyOpts proxy;
  bool do_ablation = false;
  int ablation_ef = kDefaultFastEpochs;

  void add(CLI::App* app) {
    bench.add(app);
    proxy.add(app);
    app->add_flag("--ablation", do_ablation, "emit the {decoupled} x {fast-train} KTau grid");
    app->add_option("--ablation-ef", ablation_ef, "fast-train epochs of the grid's trained column");
  }

  void run(Context& ctx) {
    const Bench b = load_bench(bench.dir);
    const LabeledSet batch = bench_scoring_batch(b, proxy.batch_seed, proxy.batch_size);
    const EvalReport r = evaluate_proxy(b, batch, proxy.m(), proxy.l(), proxy.fast, ctx.threads());
    r.write_csv(ctx.out / "eval.csv");
    write_json(ctx.out / "eval.json", r.to_json());
    for (const auto& s : r.skipped) logger()->warn("skipped {}", s);
    logger()->info("{} KTau {:.4f} over {} architectures", method_name(r.method), r.ktau, r.n_archs);
    if (!do_ablation) return;
    FastTrainConfig fast = proxy.fast;
    fast.e_f = ablation_ef;
    const AblationGrid g = ablation(b, batch, proxy.l(), fast, ctx.threads());
    write_json(ctx.out / "ablation.json", g.to_json());
    std::ostringstream csv;
    csv << "decoupled,fast_train,ktau\n";
    for (int d = 0; d < 2; ++d)
      for (int f = 0; f < 2; ++f) csv << d << ',' << f << ',' << num(g.ktau[d][f]) << '\n';
    write_text(ctx.out / "ablation.csv", csv.str());
  }
};

struct SweepCmd {
  BenchInput bench;
  ProxyOpts proxy;
  std::vector<int> epochs{0, 1, 2, 3, 4, 5};

  void add(CLI::App* app) {
    bench.add(app);
    proxy.add(app);
    app->add_option("--epochs", epochs, "checkpoint epochs (0 = fresh init)")->delimiter(',');
  }

  void run(Context& ctx) {
    const Bench b = load_bench(bench.dir);
    const LabeledSet batch = bench_scoring_batch(b, proxy.batch_seed, proxy.batch_size);
    const auto pts = epoch_sweep(b, batch, epochs, proxy.m(), proxy.l(), ctx.threads());
    std::ostringstream csv;
    csv << "epoch,ktau,n_archs\n";
    for (const auto& p : pts) {
      csv << p.epoch << ',' << (p.ktau ? num(*p.ktau) : "") << ',' << p.n_archs << '\n';
      if (!p.warning.empty()) logger()->warn("epoch {}: {}", p.epoch, p.warning);
    }
    write_text(ctx.out / "epoch_sweep.csv", csv.str());
  }
};

struct BenchBuildCmd {
  BenchConfig cfg;
  DataOpts data;
  SkelOpts skel;

  void add(CLI::App* app) {
    app->add_option("--m", cfg.m, "architectures");
    app->add_option("--space-seed", cfg.space_seed, "architecture sampling seed");
    app->add_option("--epochs", cfg.train.epochs, "training epochs");
    app->add_option("--lr", cfg.train.lr, "peak learning rate (cosine schedule)");
    app->add_option("--momentum", cfg.train.momentum, "SGD momentum");
    app->add_option("--train-batch", cfg.train.batch_size, "training mini-batch size");
    data.add(app);
    skel.add(app);
  }

  void run(Context& ctx) {
    cfg.data = data.source();
    cfg.data_seed = data.data_seed;
    cfg.skeleton = skel.get(cfg.data);
    cfg.train.seed = ctx.g.seed;
    cfg.threads = ctx.threads();
    const Bench b = build_bench(cfg, ctx.out);
    for (const auto& f : b.failed) logger()->warn("{} failed at epoch {}: {}", f.spec.hash_hex(), f.epoch, f.reason);
    logger()->info("bench with {} records ({} failed) written to {}", b.records.size(), b.failed.size(), ctx.out.string());
  }
};

struct KernelDumpCmd {
  std::vector<std::string> specs;
  std::size_t random = 0;
  std::string kind = "both";
  DataOpts data;
  SkelOpts skel;
  ProxyOpts proxy;

  void add(CLI::App* app) {
    app->add_option("--spec", specs, "architecture JSON file");
    app->add_option("--random", random, "dump this many random architectures");
    app->add_option("--kind", kind, "raw, normalized or both")->check(CLI::IsMember({"raw", "normalized", "both"}));
    data.add(app);
    skel.add(app);
    proxy.add(app, false);
  }

  void run(Context& ctx) {
    const auto arch = load_specs(specs, random, ctx.g.seed);
    const DatasetSource src = data.source();
    const Skeleton sk = skel.get(src);
    const LabeledSet batch = scoring_batch(load_dataset(src, data.data_seed).scorebatch, proxy.batch_size, proxy.batch_seed);
    for (const auto& spec : arch) {
      Network net = compile(spec, sk);
      init_params(net, init_seed_for(ctx.g.seed, spec));
      if (proxy.fast.e_f > 0) fast_train_network(net, batch.images, batch.labels, proxy.fast, Method::DAS, Lambda::automatic());
      const auto codes = extract_codes(net, batch.images);
      const KernelMatrix raw = hamming_kernel(codes);
      const std::string stem = spec.hash_hex();
      if (kind != "normalized") kernel_dump(raw, ctx.out / (stem + "_raw"));
      if (kind != "raw") kernel_dump(normalize_kernel(raw, raw.n_a), ctx.out / (stem + "_normalized"));
    }
  }
};

struct DatasetGenCmd {
  DataOpts data;
  void add(CLI::App* app) { data.add(app); }

  void run(Context& ctx) {
    const DatasetSource src = data.source();
    const Dataset d = load_dataset(src, data.data_seed);
    nlohmann::json files = nlohmann::json::object();
    const std::pair<const char*, const LabeledSet*> parts[] = {{"train", &d.train}, {"val", &d.val}, {"scorebatch", &d.scorebatch}};
    for (auto [name, set] : parts) {
      const fs::path p = ctx.out / (std::string(name) + ".dasw");
      write_labeled_set(*set, p);
      files[name] = {{"file", p.filename().string()}, {"samples", set->size()}, {"digest", to_hex(file_digest(p))}};
    }
    write_json(ctx.out / "dataset.json", {{"source", source_to_json(src)}, {"data_seed", to_hex(data.data_seed)}, {"splits", files}});
  }
};

struct Commands {
  ScoreCmd score;
  SearchCmd search;
  GridCmd grid;
  EvaluateCmd evaluate;
  SweepCmd sweep;
  BenchBuildCmd bench_build;
  KernelDumpCmd kernel_dump;
  DatasetGenCmd dataset_gen;
};

spdlog::level::level_enum parse_level(const std::string& s) {
  const auto l = spdlog::level::from_str(s);
  if (l == spdlog::level::off && s != "off") throw UsageError("unknown log level '" + s + "'");
  return l;
}

// Resolved configuration of the global options and the invoked command only.
// Unset list options are left out: an empty list has no config spelling.
std::string snapshot(const CLI::App& app, const std::string& command) {
  std::istringstream all(app.config_to_str(true, false));
  std::string out = "# rerun: das --config config.snapshot.ini " + command + "\n", line;
  while (std::getline(all, line)) {
    const std::string key = line.substr(0, line.find('='));
    const auto dot = key.find('.');
    const CLI::App* owner = &app;
    std::string name = key;
    if (dot != std::string::npos) {
      if (key.compare(0, dot, command) != 0) continue;
      owner = app.get_subcommand(command);
      name = key.substr(dot + 1);
    }
    const CLI::Option* opt = owner->get_option_no_throw("--" + name);
    if (opt && opt->get_expected_max() > 1 && opt->count() == 0) continue;
    out += line + "\n";
  }
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"das"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

int dispatch(int argc, const char* const* argv) {
  Context ctx;
  Commands cmd;
  CLI::App app("Training-free architecture scoring, benchmarking and search.", "das");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.set_config("--config", "", "key = value file; [command] sections hold command options");
  app.add_option("--seed", ctx.g.seed, "global seed");
  app.add_option("--threads", ctx.g.threads, "worker threads");
  app.add_option("--out", ctx.g.out, "output directory");
  app.add_option("--log-level", ctx.g.log_level, "trace, debug, info, warn, error or off");
  app.add_flag("--deterministic", ctx.g.deterministic, "single thread, timing fields written as 0");
  app.require_subcommand(1);
  app.fallthrough();

  std::vector<std::pair<CLI::App*, Runner>> subs;
  auto sub = [&](const char* name, const char* help, auto& c) {
    CLI::App* s = app.add_subcommand(name, help);
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    c.add(s);
    subs.emplace_back(s, [&c](Context& x) { c.run(x); });
  };
  sub("score", "score architectures on one batch", cmd.score);
  sub("search", "proxy-guided random search", cmd.search);
  sub("gridsearch", "KTau over a lambda grid", cmd.grid);
  sub("evaluate", "KTau of a proxy on a bench", cmd.evaluate);
  sub("epoch-sweep", "KTau on early-epoch checkpoints", cmd.sweep);
  sub("bench-build", "train a benchmark of random architectures", cmd.bench_build);
  sub("kernel-dump", "write activation kernels as CSV and PGM", cmd.kernel_dump);
  sub("dataset-gen", "materialize dataset splits", cmd.dataset_gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return kOk;
    }
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  auto log = logger();
  try {
    log->set_level(parse_level(ctx.g.log_level));
    ctx.out = ctx.g.out;
    fs::create_directories(ctx.out);
    for (auto& [s, run] : subs) {
      if (!s->parsed()) continue;
      // snapshot first, so failed runs can be replayed too
      write_text(ctx.out / "config.snapshot.ini", snapshot(app, s->get_name()));
      run(ctx);
    }
    return kOk;
  } catch (const UsageError& e) {
    log->error("{}", e.what());
    std::cerr << app.help();
    return kUsage;
  } catch (const ConfigError& e) {
    log->error("{}", e.what());
    return kUsage;
  } catch (const FormatError& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const IoError& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const CorruptionError& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const ScoringUnsupported& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const UndefinedCorrelation& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    log->error("internal error: {}", e.what());
    return kInternal;
  }
}

}  // namespace das::cli
