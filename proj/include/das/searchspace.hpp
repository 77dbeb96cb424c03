#pragma once

#include "das/nn.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace das {

enum class OpLabel { Conv1x1, Conv3x3, MaxPool3x3 };

inline constexpr std::array<OpLabel, 3> kAllOps = {OpLabel::Conv1x1, OpLabel::Conv3x3, OpLabel::MaxPool3x3};
inline constexpr int kMinNodes = 2;
inline constexpr int kMaxNodes = 7;
inline constexpr std::size_t kMaxEdges = 9;

std::string_view op_name(OpLabel op) noexcept;
OpLabel parse_op(std::string_view name);

using Adjacency = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Edge = std::pair<int, int>;

/**
 * Cell DAG: node 0 is the cell input, node num_nodes-1 the cell output and
 * every node in between carries an operation. Immutable; the content hash is
 * computed once over the canonical JSON form (sorted edges).
 *
 * Construction only checks structural well-formedness (edge endpoints in
 * range, one op per interior node). Search-space constraints such as acyclic
 * orientation, connectivity and the edge budget are reported by validate().
 */
class ArchSpec {
 public:
  ArchSpec(int num_nodes, std::vector<Edge> edges, std::vector<OpLabel> ops);
  ArchSpec(const Adjacency& adjacency, std::vector<OpLabel> ops);

  int num_nodes() const noexcept { return static_cast<int>(adjacency_.rows()); }
  const Adjacency& adjacency() const noexcept { return adjacency_; }
  const std::vector<OpLabel>& ops() const noexcept { return ops_; }
  OpLabel op(int node) const { return ops_.at(static_cast<std::size_t>(node - 1)); }

  std::vector<Edge> edges() const;
  std::size_t edge_count() const noexcept;

  std::uint64_t hash() const noexcept { return hash_; }
  std::string hash_hex() const;

  nlohmann::json to_json() const;
  /// Throws FormatError on malformed input or a stored hash that does not match.
  static ArchSpec from_json(const nlohmann::json& j);
  std::string canonical_string() const;

  friend bool operator==(const ArchSpec& a, const ArchSpec& b) { return a.hash_ == b.hash_; }

 private:
  void finish();

  Adjacency adjacency_;
  std::vector<OpLabel> ops_;
  std::uint64_t hash_ = 0;
};

/// Empty when the architecture is a valid member of the search space.
std::vector<std::string> validate(const ArchSpec& spec);

/// Uniform over (node count, adjacency, ops) conditioned on validity.
ArchSpec sample_random(std::uint64_t seed);

struct Skeleton {
  int stem_channels = 16;
  int num_stacks = 3;
  int cells_per_stack = 1;
  int classes = 10;
  std::array<int, 3> input_shape = {3, 16, 16};  // (C, H, W)

  void check() const;
  Shape input() const {
    return {static_cast<std::size_t>(input_shape[0]), static_cast<std::size_t>(input_shape[1]),
            static_cast<std::size_t>(input_shape[2])};
  }
  nlohmann::json to_json() const;
  static Skeleton from_json(const nlohmann::json& j);
};

/**
 * Stem conv3x3 + ReLU, then `num_stacks` stacks of `cells_per_stack` cells
 * with a 2x2 max-pool between stacks (channels double per stack), then
 * global average pooling and a linear classifier.
 *
 * Inside a cell every interior node sums its inputs (edges from the cell
 * input pass through a 1x1 projection) and applies its op; conv ops are
 * followed by ReLU. The cell output concatenates the interior nodes wired to
 * it, plus a projected copy of the cell input when the input feeds the
 * output directly.
 */
Network compile(const ArchSpec& spec, const Skeleton& skel);

}  // namespace das
