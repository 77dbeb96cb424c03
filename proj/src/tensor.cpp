#include "das/tensor.hpp"

#include "das/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace das {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size())
    throw ConfigError("tensor shape " + shape_str(shape_) + " does not match " +
                      std::to_string(data_.size()) + " elements");
}

RowMatrixMap Tensor::matrix(std::size_t rows) {
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(rows ? data_.size() / rows : 0)};
}

ConstRowMatrixMap Tensor::matrix(std::size_t rows) const {
  return {data_.data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(rows ? data_.size() / rows : 0)};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size())
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0])
    throw ConfigError("row slice out of range for " + shape_str(shape_));
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  Tensor out(std::move(s));
  std::copy(data_.begin() + begin * row, data_.begin() + end * row, out.data_.begin());
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape s = t.shape();
  const std::size_t row = s[0] ? t.size() / s[0] : 0;
  s[0] = rows.size();
  Tensor out(std::move(s));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.extent(0)) throw ConfigError("gather index out of range");
    std::copy_n(t.raw() + rows[i] * row, row, out.raw() + i * row);
  }
  return out;
}

}  // namespace das
