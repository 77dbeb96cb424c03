#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bench_fixture.hpp"
#include "cli_replay.hpp"
#include "das/checkpoint.hpp"
#include "das/search.hpp"

#include <json.hpp>

using namespace das;
using namespace das::testing;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmallData{"--samples-per-class", "20", "--stem-channels", "4", "--stacks", "2",
                                          "--batch-size", "16"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("score writes one row per architecture") {
  const fs::path dir = scratch_dir("cli_score");
  fs::create_directories(dir);
  std::ofstream(dir / "spec.json") << ArchSpec(3, {{0, 1}, {1, 2}}, {OpLabel::Conv3x3}).to_json().dump();
  const fs::path out = dir / "out";
  REQUIRE(cli::dispatch(with({"--out", out.string(), "--log-level", "off", "score", "--spec", (dir / "spec.json").string(), "--ef", "0"},
                             kSmallData)) == cli::kOk);
  CHECK(count_lines(out / "scores.csv") == 2);
  CHECK(slurp(out / "scores.csv").rfind("spec_hash,N,N_A,lambda,logdet_nk,log_na,score,wall_ms\n", 0) == 0);
  CHECK(count_lines(out / "trace.csv") == 1);
  CHECK(fs::exists(out / "config.snapshot.ini"));

  REQUIRE(cli::dispatch(with({"--out", out.string(), "--log-level", "off", "score", "--random", "2", "--ef", "3"}, kSmallData)) ==
          cli::kOk);
  CHECK(count_lines(out / "trace.csv") == 1 + 2 * 3);
}

TEST_CASE("exit codes") {
  const fs::path out = scratch_dir("cli_codes");
  CHECK(cli::dispatch({"--out", out.string(), "score", "--no-such-flag"}) == cli::kUsage);
  CHECK(cli::dispatch({"--out", out.string()}) == cli::kUsage);
  CHECK(cli::dispatch({"--out", out.string(), "--log-level", "off", "score"}) == cli::kUsage);
  CHECK(cli::dispatch({"--out", out.string(), "--log-level", "off", "evaluate", "--bench", (out / "missing").string()}) ==
        cli::kDataError);
  CHECK(cli::dispatch({"--out", out.string(), "--log-level", "off", "score", "--random", "1", "--ef", "-2"}) == cli::kUsage);
  fs::create_directories(out);
  std::ofstream(out / "bad.json") << "{not json";
  CHECK(cli::dispatch({"--out", out.string(), "--log-level", "off", "score", "--spec", (out / "bad.json").string()}) ==
        cli::kDataError);
  CHECK(cli::dispatch({"--help"}) == cli::kOk);
}

TEST_CASE("bench commands") {
  const Bench& b = tiny_bench();
  const fs::path out = scratch_dir("cli_bench");
  std::vector<std::uint64_t> before;
  for (const auto& r : b.records)
    for (const auto& c : r.checkpoints) before.push_back(file_digest(b.dir / c.path));
  const std::string manifest_before = slurp(b.dir / "manifest.json");

  REQUIRE(cli::dispatch({"--out", (out / "ev").string(), "--log-level", "off", "evaluate", "--bench", b.dir.string(),
                         "--batch-size", "16", "--ablation", "--ablation-ef", "2"}) == cli::kOk);
  const auto grid = nlohmann::json::parse(slurp(out / "ev" / "ablation.json"));
  CHECK(grid.at("grid").size() == 4);
  CHECK(count_lines(out / "ev" / "ablation.csv") == 5);

  REQUIRE(cli::dispatch({"--out", (out / "sw").string(), "--log-level", "off", "epoch-sweep", "--bench", b.dir.string(),
                         "--batch-size", "16", "--epochs", "0,1,2"}) == cli::kOk);
  CHECK(count_lines(out / "sw" / "epoch_sweep.csv") == 4);

  REQUIRE(cli::dispatch({"--out", (out / "gs").string(), "--log-level", "off", "gridsearch", "--bench", b.dir.string(),
                         "--batch-size", "16", "--grid-steps", "4"}) == cli::kOk);
  CHECK(count_lines(out / "gs" / "lambda_curve.csv") == 6);

  REQUIRE(cli::dispatch({"--out", (out / "se").string(), "--log-level", "off", "search", "--bench", b.dir.string(),
                         "--batch-size", "16", "--n", "3", "--trials", "7", "--baseline"}) == cli::kOk);
  CHECK(nlohmann::json::parse(slurp(out / "se" / "search_summary.json")).at("trials") == 7);
  CHECK(fs::exists(out / "se" / "baseline_summary.json"));

  // inputs untouched
  std::vector<std::uint64_t> after;
  for (const auto& r : b.records)
    for (const auto& c : r.checkpoints) after.push_back(file_digest(b.dir / c.path));
  CHECK(after == before);
  CHECK(slurp(b.dir / "manifest.json") == manifest_before);
}

TEST_CASE("snapshot replays are byte-identical") {
  const Bench& b = tiny_bench();
  const fs::path root = scratch_dir("cli_replay");
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases{
      {"score", with({"--random", "2", "--ef", "2"}, kSmallData)},
      {"evaluate", {"--bench", b.dir.string(), "--batch-size", "16", "--ablation", "--ablation-ef", "2"}},
      {"search", {"--bench", b.dir.string(), "--batch-size", "16", "--n", "2", "--trials", "4", "--baseline"}},
      {"dataset-gen", {"--samples-per-class", "20"}},
  };
  for (const auto& [cmd, args] : cases) {
    const ReplayResult r = replay_from_snapshot(cmd, args, root);
    INFO(cmd << " compared " << r.compared.size() << " mismatched " << r.mismatched.size());
    CHECK(r.ok());
  }
}
