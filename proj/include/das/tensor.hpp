#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace das {

using Shape = std::vector<std::size_t>;
/// Storage with a fixed base alignment, so vectorized kernels take the same
/// code path (and rounding) on every run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// Dense row-major array of doubles. Invariant: shape_size(shape) == data.size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  VectorMap vec() noexcept { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  ConstVectorMap vec() const noexcept {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  /// View as (rows, size/rows) row-major matrix.
  RowMatrixMap matrix(std::size_t rows);
  ConstRowMatrixMap matrix(std::size_t rows) const;

  void fill(double v);
  void reshape(Shape shape);
  bool all_finite() const noexcept;

  /// Rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Buffer data_;
};

/// Gather rows along axis 0.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

}  // namespace das
