#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace shan {

// Dense row-major tensor of doubles. Rank is 1 or 2 everywhere in this
// project; a scalar is a rank-1 tensor of size 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }

  // 2-d accessors; rows()/cols() require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);

  std::string shape_str() const;  // e.g. "[3x4]"

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
  std::size_t cols_ = 0;  // cached for rank-2 indexing
};

// Sums `values` after sorting them ascending (the vector is clobbered).
// The result depends only on the multiset of inputs, so relabelings that
// merely reorder the source data cannot change the rounded sum.
double stable_sum(std::vector<double>& values);

}  // namespace shan
