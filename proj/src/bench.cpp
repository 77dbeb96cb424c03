#include "das/bench.hpp"

#include "das/checkpoint.hpp"
#include "das/errors.hpp"
#include "das/hash.hpp"
#include "das/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_set>

namespace das {

void TrainConfig::check() const {
  if (epochs < kCheckpointEpochs) throw ConfigError("training needs at least 5 epochs");
  if (!(lr > 0.0) || !(momentum >= 0.0) || momentum >= 1.0 || batch_size == 0)
    throw ConfigError("invalid training hyper-parameters");
}

double TrainConfig::lr_at(int epoch) const {
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - 1) / static_cast<double>(epochs)));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs}, {"lr", lr}, {"momentum", momentum}, {"batch_size", batch_size},
          {"seed", to_hex(seed)}, {"schedule", "cosine"}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = from_hex(j.at("seed").get<std::string>());
  return c;
}

std::uint64_t TrainConfig::digest() const { return fnv1a64(to_json().dump()); }

const CheckpointRef* BenchRecord::checkpoint(int epoch) const {
  for (const auto& c : checkpoints)
    if (c.epoch == epoch && !c.final) return &c;
  for (const auto& c : checkpoints)
    if (c.epoch == epoch) return &c;
  return nullptr;
}

std::vector<ArchSpec> bench_specs(std::uint64_t space_seed, std::size_t m) {
  std::vector<ArchSpec> specs;
  std::unordered_set<std::uint64_t> seen;
  for (std::uint64_t i = 0; specs.size() < m; ++i) {
    ArchSpec s = sample_random(derive_seed(space_seed, "bench-arch", {i}));
    if (seen.insert(s.hash()).second) specs.push_back(std::move(s));
  }
  return specs;
}

double evaluate_accuracy(Network& net, const LabeledSet& set, std::size_t chunk) {
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < set.size(); begin += chunk) {
    const std::size_t end = std::min(set.size(), begin + chunk);
    const auto pred = argmax_rows(forward(net, set.images.slice_rows(begin, end)));
    for (std::size_t i = begin; i < end; ++i) correct += pred[i - begin] == set.labels[i];
  }
  return set.size() ? static_cast<double>(correct) / static_cast<double>(set.size()) : 0.0;
}

TrainOutcome train_network(Network& net, const LabeledSet& train, const LabeledSet& val, const TrainConfig& cfg,
                           std::uint64_t spec_hash, const std::function<void(int, const Network&)>& on_epoch) {
  TrainOutcome out;
  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", {spec_hash, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const LabeledSet batch = train.subset(rows);
      const Tensor logits = forward(net, batch.images);
      const Gradients g = backward(net, logits, batch.labels);
      if (!std::isfinite(g.loss)) {
        out.diverged_epoch = epoch;
        return out;
      }
      try {
        sgd_step(net, g, lr, cfg.momentum);
      } catch (const DivergenceError&) {
        out.diverged_epoch = epoch;
        return out;
      }
    }
    out.epoch_acc.emplace_back(epoch, evaluate_accuracy(net, val));
    if (on_epoch) on_epoch(epoch, net);
  }
  return out;
}

namespace {

nlohmann::json record_json(const BenchRecord& r) {
  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& c : r.checkpoints) {
    nlohmann::json e{{"epoch", c.epoch}, {"path", c.path}, {"digest", to_hex(c.digest)}};
    if (c.final) e["final"] = true;
    ckpts.push_back(std::move(e));
  }
  nlohmann::json acc = nlohmann::json::array();
  for (auto [e, a] : r.epoch_acc) acc.push_back({e, a});
  return {{"spec", r.spec.to_json()},       {"init_seed", to_hex(r.init_seed)}, {"final_acc", r.final_acc},
          {"epoch_acc", acc},               {"checkpoints", ckpts},
          {"train_config_digest", to_hex(r.train_config_digest)}};
}

BenchRecord record_from_json(const nlohmann::json& j) {
  BenchRecord r{ArchSpec::from_json(j.at("spec")), from_hex(j.at("init_seed").get<std::string>()),
                j.at("final_acc").get<double>(), {}, {}, from_hex(j.at("train_config_digest").get<std::string>())};
  for (const auto& e : j.at("epoch_acc")) r.epoch_acc.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
  for (const auto& c : j.at("checkpoints"))
    r.checkpoints.push_back({c.at("epoch").get<int>(), c.at("path").get<std::string>(),
                             from_hex(c.at("digest").get<std::string>()), c.value("final", false)});
  return r;
}

std::string ckpt_name(const ArchSpec& spec, int epoch, bool final) {
  return "ckpt/" + spec.hash_hex() + (final ? "_final" : "_e" + std::to_string(epoch)) + ".dasw";
}

}  // namespace

nlohmann::json Bench::manifest() const {
  nlohmann::json recs = nlohmann::json::array(), fails = nlohmann::json::array();
  for (const auto& r : records) recs.push_back(record_json(r));
  for (const auto& f : failed) fails.push_back({{"spec", f.spec.to_json()}, {"reason", f.reason}, {"epoch", f.epoch}});
  return {{"version", kManifestVersion},
          {"skeleton", skeleton.to_json()},
          {"train_cfg", train.to_json()},
          {"dataset", source_to_json(data)},
          {"data_seed", to_hex(data_seed)},
          {"space_seed", to_hex(space_seed)},
          {"records", recs},
          {"failed", fails}};
}

Bench build_bench(const BenchConfig& cfg, const std::filesystem::path& dir) {
  return build_bench(cfg, load_dataset(cfg.data, cfg.data_seed), dir);
}

Bench build_bench(const BenchConfig& cfg, const Dataset& data, const std::filesystem::path& dir) {
  if (cfg.m < 2) throw ConfigError("a bench needs at least 2 architectures");
  cfg.train.check();
  cfg.skeleton.check();
  if (data.train.images.rank() != 4 ||
      !std::equal(data.train.images.shape().begin() + 1, data.train.images.shape().end(), cfg.skeleton.input().begin()))
    throw ConfigError("dataset images do not match the skeleton input shape");
  std::filesystem::create_directories(dir / "ckpt");

  const auto specs = bench_specs(cfg.space_seed, cfg.m);
  const std::uint64_t digest = cfg.train.digest();
  struct Slot {
    std::optional<BenchRecord> record;
    std::optional<FailedRecord> failure;
  };
  std::vector<Slot> slots(specs.size());

  parallel_for(specs.size(), cfg.threads, [&](std::size_t i) {
    const ArchSpec& spec = specs[i];
    if (cfg.inject_failures.count(i)) {
      slots[i].failure = FailedRecord{spec, "injected failure", 0};
      return;
    }
    const std::uint64_t init_seed = derive_seed(cfg.train.seed, "init", {spec.hash()});
    Network net = compile(spec, cfg.skeleton);
    init_params(net, init_seed);
    BenchRecord rec{spec, init_seed, 0.0, {}, {}, digest};
    auto save = [&](int epoch, bool final, const Network& n) {
      const std::string rel = ckpt_name(spec, epoch, final);
      save_checkpoint(n, dir / rel);
      rec.checkpoints.push_back({epoch, rel, file_digest(dir / rel), final});
      if (cfg.on_checkpoint) cfg.on_checkpoint(spec, epoch, n);
    };
    TrainOutcome out = train_network(net, data.train, data.val, cfg.train, spec.hash(), [&](int epoch, const Network& n) {
      if (epoch <= kCheckpointEpochs) save(epoch, false, n);
      if (epoch == cfg.train.epochs) save(epoch, true, n);
    });
    if (out.diverged_epoch) {
      slots[i].failure = FailedRecord{spec, "training diverged", *out.diverged_epoch};
      return;
    }
    rec.epoch_acc = std::move(out.epoch_acc);
    rec.final_acc = rec.epoch_acc.back().second;
    slots[i].record = std::move(rec);
  });

  Bench bench{dir, cfg.skeleton, cfg.train, cfg.data, cfg.data_seed, cfg.space_seed, {}, {}};
  for (auto& s : slots) {
    if (s.record) bench.records.push_back(std::move(*s.record));
    if (s.failure) bench.failed.push_back(std::move(*s.failure));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << bench.manifest().dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
  return bench;
}

Bench load_bench(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("bench manifest not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != kManifestVersion) throw FormatError(path.string() + ": unsupported manifest version");
    Bench b{dir,
            Skeleton::from_json(j.at("skeleton")),
            TrainConfig::from_json(j.at("train_cfg")),
            source_from_json(j.at("dataset")),
            from_hex(j.at("data_seed").get<std::string>()),
            from_hex(j.at("space_seed").get<std::string>()),
            {},
            {}};
    for (const auto& r : j.at("records")) b.records.push_back(record_from_json(r));
    for (const auto& f : j.value("failed", nlohmann::json::array()))
      b.failed.push_back({ArchSpec::from_json(f.at("spec")), f.at("reason").get<std::string>(), f.at("epoch").get<int>()});
    for (const auto& r : b.records)
      for (const auto& c : r.checkpoints) {
        const auto file = dir / c.path;
        if (!std::filesystem::exists(file)) throw CorruptionError("checkpoint missing: " + file.string());
        if (file_digest(file) != c.digest) throw CorruptionError("checkpoint digest mismatch: " + file.string());
      }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace das
