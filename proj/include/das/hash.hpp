#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

namespace das {

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named sub-stream of a global seed: derive_seed(global, "init", spec_hash).
inline std::uint64_t derive_seed(std::uint64_t global, std::string_view purpose,
                                 std::initializer_list<std::uint64_t> keys = {}) noexcept {
  std::uint64_t h = splitmix64(global ^ fnv1a64(purpose));
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

std::string to_hex(std::uint64_t v);
std::uint64_t from_hex(std::string_view s);

}  // namespace das
