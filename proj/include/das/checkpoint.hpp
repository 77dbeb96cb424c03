#pragma once

#include "das/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace das {

// Binary layout (little endian):
//   "DASW" | version u32 | count u32 | { rank u32 | extents u32[rank] | f64[] }*

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_tensors(std::span<const Tensor* const> tensors);
std::vector<Tensor> decode_tensors(std::span<const unsigned char> bytes);

void write_tensors(const std::filesystem::path& path, std::span<const Tensor* const> tensors);
std::vector<Tensor> read_tensors(const std::filesystem::path& path);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
/// Loads parameters into a network of the same architecture; shapes must match.
void load_checkpoint(Network& net, const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace das
