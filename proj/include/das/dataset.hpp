#pragma once

#include "das/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace das {

struct LabeledSet {
  Tensor images;  // (N, C, H, W)
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  LabeledSet subset(std::span<const std::size_t> rows) const;
};

/// Class-conditioned Gaussian-blob images. Each class owns a prototype built
/// from a few blobs; samples are the prototype shifted by up to `noise` *
/// `max_shift` pixels plus `noise`-scaled pixel noise.
struct SyntheticSource {
  int classes = 10;
  int samples_per_class = 200;
  double noise = 1.5;
  std::array<int, 3> shape = {3, 16, 16};
};

/// Directory with data_batch_{1..5}.bin and test_batch.bin.
struct Cifar10Source {
  std::filesystem::path dir;
  std::size_t score_pool = 1000;  // held out from the end of the training files
};

using DatasetSource = std::variant<SyntheticSource, Cifar10Source>;

nlohmann::json source_to_json(const DatasetSource& src);
DatasetSource source_from_json(const nlohmann::json& j);

struct Dataset {
  LabeledSet train;
  LabeledSet val;
  LabeledSet scorebatch;  // pool the scoring batch is drawn from; disjoint from train and val
};

/// Deterministic given (src, seed).
Dataset load_dataset(const DatasetSource& src, std::uint64_t seed);

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Parses CIFAR-10 binary records (1 label byte + 3072 channel-major pixels).
/// Throws FormatError with the byte offset of a truncated or invalid record.
LabeledSet parse_cifar_records(std::span<const unsigned char> bytes, const std::string& name);

/// `n` distinct samples of `pool` chosen by `batch_seed`.
LabeledSet scoring_batch(const LabeledSet& pool, std::size_t n, std::uint64_t batch_seed);

/// Writes a set as two tensors (images, labels as doubles) in checkpoint format.
void write_labeled_set(const LabeledSet& set, const std::filesystem::path& path);
LabeledSet read_labeled_set(const std::filesystem::path& path);

}  // namespace das
