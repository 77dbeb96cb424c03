#pragma once

// Reference implementations used only by tests. Each is the slow, obvious
// formulation of the quantity the library computes another way.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace das::testing {

/// Laplace expansion along the first row.
inline double cofactor_det(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  if (n == 1) return m(0, 0);
  if (n == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  double det = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::MatrixXd minor(n - 1, n - 1);
    for (Eigen::Index i = 1; i < n; ++i)
      for (Eigen::Index j = 0, k = 0; j < n; ++j)
        if (j != c) minor(i - 1, k++) = m(i, j);
    det += ((c % 2) ? -1.0 : 1.0) * m(0, c) * cofactor_det(minor);
  }
  return det;
}

inline Eigen::MatrixXd random_symmetric(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) a(i, j) = a(j, i) = u(rng);
  return a;
}

/// N_A - (number of differing positions), one bit at a time.
inline Eigen::MatrixXd kernel_by_bit_loop(const std::vector<std::vector<std::uint8_t>>& bits) {
  const auto n = static_cast<Eigen::Index>(bits.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      std::size_t diff = 0;
      for (std::size_t b = 0; b < bits[i].size(); ++b) diff += bits[i][b] != bits[j][b];
      k(i, j) = static_cast<double>(bits[i].size() - diff);
    }
  return k;
}

/// Kendall tau-b by enumerating every pair.
inline double kendall_tau_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx) ++ties_x;
      if (ty) ++ties_y;
      if (tx || ty) continue;
      if ((x[i] < x[j]) == (y[i] < y[j]))
        ++concordant;
      else
        ++discordant;
    }
  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  return static_cast<double>(concordant - discordant) /
         std::sqrt(static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y));
}

}  // namespace das::testing
