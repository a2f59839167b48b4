#include "tsup/mat.hpp"

#include <algorithm>
#include <cmath>

#include "tsup/error.hpp"

namespace tsup {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ContractError("Mat: " + std::to_string(data_.size()) + " values do not fill " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ContractError("Mat: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::row_vector(std::span<const double> values) {
  return Mat(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Mat::shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

Mat& Mat::operator+=(const Mat& other) {
  if (!same_shape(other)) throw ContractError("Mat +=: shape " + shape() + " vs " + other.shape());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  if (!same_shape(other)) throw ContractError("Mat -=: shape " + shape() + " vs " + other.shape());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

}  // namespace tsup
