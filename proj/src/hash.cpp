#include "das/hash.hpp"

#include "das/errors.hpp"

#include <charconv>
#include <cstdio>

namespace das {

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t from_hex(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw FormatError("bad hex digest '" + std::string(s) + "'");
  return v;
}

}  // namespace das
