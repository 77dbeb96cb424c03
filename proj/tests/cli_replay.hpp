#pragma once

#include "das_cli.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace das::testing {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ReplayResult {
  int first_exit = -1;
  int replay_exit = -1;
  std::vector<std::string> compared;
  std::vector<std::string> mismatched;
  bool ok() const { return first_exit == 0 && replay_exit == 0 && !compared.empty() && mismatched.empty(); }
};

/// Runs `das --deterministic --out <a> <command> <args...>`, then
/// `das --config <a>/config.snapshot.ini --out <b> <command>`, and compares
/// every CSV and JSON file of the two output directories byte for byte.
inline ReplayResult replay_from_snapshot(const std::string& command, const std::vector<std::string>& args,
                                         const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path a = root / (command + "_a"), b = root / (command + "_b");
  fs::remove_all(a);
  fs::remove_all(b);
  std::vector<std::string> first{"--deterministic", "--log-level", "warn", "--out", a.string(), command};
  first.insert(first.end(), args.begin(), args.end());
  ReplayResult r;
  r.first_exit = cli::dispatch(first);
  if (r.first_exit != 0) return r;
  r.replay_exit = cli::dispatch({"--config", (a / "config.snapshot.ini").string(), "--out", b.string(), command});
  if (r.replay_exit != 0) return r;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".json") continue;
    const auto name = e.path().filename().string();
    r.compared.push_back(name);
    if (!fs::exists(b / name) || slurp(e.path()) != slurp(b / name)) r.mismatched.push_back(name);
  }
  return r;
}

}  // namespace das::testing
