#pragma once

#include "das/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace das {

inline constexpr double kNegInfinity = -std::numeric_limits<double>::infinity();
inline constexpr std::size_t kDefaultBatchSize = 64;

/// Packed on/off states of every ReLU unit for one input. Bit k is unit k in
/// layer-major (node id), element-major order.
struct ActivationCode {
  std::vector<std::uint64_t> words;
  std::size_t n_a = 0;

  static ActivationCode from_bits(std::span<const std::uint8_t> bits);
  static ActivationCode from_string(std::string_view bits);  // "0110..."
  bool bit(std::size_t k) const { return (words[k / 64] >> (k % 64)) & 1U; }
  void flip(std::size_t k) { words[k / 64] ^= std::uint64_t{1} << (k % 64); }
};

std::size_t hamming_distance(const ActivationCode& a, const ActivationCode& b);

enum class KernelKind { Raw, Normalized };

struct KernelMatrix {
  Eigen::MatrixXd entries;
  KernelKind kind = KernelKind::Raw;
  std::size_t n_a = 0;

  std::size_t n() const noexcept { return static_cast<std::size_t>(entries.rows()); }
};

/**
 * Natural log of det(m) via LU with partial pivoting.
 *
 * Returns -inf when the determinant is not strictly positive, when any entry
 * is non-finite, or when a pivot falls below n * eps * max|m_ij| (numerically
 * singular). The threshold is relative to the matrix scale, so m and c * m
 * agree on singularity for any c > 0.
 */
template <typename Derived>
typename Derived::Scalar log_det(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  Mat lu = m;
  const Eigen::Index n = lu.rows();
  if (n != lu.cols()) return neg_inf;
  if (n == 0) return Scalar(0);
  if (!lu.allFinite()) return neg_inf;
  const Scalar scale = lu.cwiseAbs().maxCoeff();
  const Scalar tol = std::numeric_limits<Scalar>::epsilon() * static_cast<Scalar>(n) * scale;
  if (scale == Scalar(0)) return neg_inf;

  Scalar log_abs(0);
  bool positive = true;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index p;
    lu.col(k).tail(n - k).cwiseAbs().maxCoeff(&p);
    p += k;
    const Scalar pivot = lu(p, k);
    if (!(std::abs(pivot) > tol)) return neg_inf;
    if (p != k) {
      lu.row(k).swap(lu.row(p));
      positive = !positive;
    }
    if (pivot < Scalar(0)) positive = !positive;
    log_abs += std::log(std::abs(pivot));
    const Eigen::Index rest = n - k - 1;
    if (rest == 0) break;
    lu.col(k).tail(rest) /= pivot;
    lu.bottomRightCorner(rest, rest).noalias() -= lu.col(k).tail(rest) * lu.row(k).tail(rest);
  }
  return positive ? log_abs : neg_inf;
}

/// Codes for every input of the batch (forward pass included).
/// Throws ScoringUnsupported for networks without ReLU layers.
std::vector<ActivationCode> extract_codes(Network& net, const Tensor& batch);
/// Codes from an already captured mask buffer.
std::vector<ActivationCode> codes_from_masks(std::span<const ReluMask> masks);

/// K_H[i][j] = N_A - d_H(c_i, c_j).
KernelMatrix hamming_kernel(std::span<const ActivationCode> codes);
/// K_H / N_A.
KernelMatrix normalize_kernel(const KernelMatrix& raw, std::size_t n_a);

double log_det(const KernelMatrix& k);

enum class Method { WOT, DAS };
std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view s);

/// Weight of log(N_A) in the DAS score. `auto` resolves to (2/3) * N.
class Lambda {
 public:
  static Lambda automatic() { return Lambda(true, 0.0); }
  static Lambda fixed(double v);
  static Lambda parse(std::string_view s);

  bool is_auto() const noexcept { return auto_; }
  double resolve(std::size_t batch_size) const noexcept;
  std::string str() const;

 private:
  Lambda(bool a, double v) : auto_(a), value_(v) {}
  bool auto_;
  double value_;
};

/// Both log-determinants for one (network, batch) pair; everything else is a
/// cheap recombination.
struct ScoreComponents {
  double logdet_raw = kNegInfinity;
  double logdet_nk = kNegInfinity;
  std::size_t n = 0;
  std::size_t n_a = 0;

  double log_na() const noexcept { return std::log(static_cast<double>(n_a)); }
};

struct Score {
  double value = kNegInfinity;
  double logdet_nk = kNegInfinity;
  double log_na = 0.0;
  double lambda = 0.0;

  bool finite() const noexcept { return std::isfinite(value); }
};

ScoreComponents score_components(std::span<const ActivationCode> codes);
Score combine(const ScoreComponents& c, Method method, Lambda lambda = Lambda::automatic());

/// log|K_H|.
Score wot_score(Network& net, const Tensor& batch);
/// log|NK_H| + lambda * ln(N_A).
Score das_score(Network& net, const Tensor& batch, Lambda lambda);

/// Writes `<stem>.csv` (full precision) and `<stem>.pgm` (8-bit grayscale,
/// 1.0 after normalization maps to white). Raw kernels are scaled by 1/N_A.
void kernel_dump(const KernelMatrix& k, const std::filesystem::path& stem);
Eigen::MatrixXd read_kernel_csv(const std::filesystem::path& path);

}  // namespace das
