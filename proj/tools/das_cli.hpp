#pragma once

#include <string>
#include <vector>

namespace das::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;
inline constexpr int kInternal = 3;

/// Runs one command line; `args` excludes the program name.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

}  // namespace das::cli
