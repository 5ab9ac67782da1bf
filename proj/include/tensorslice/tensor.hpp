#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tslice {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar holding one element.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor identity(std::size_t n);
  // 2-d convenience: rows given as nested lists.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; no bounds checks beyond debug assertions.
  double& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  std::vector<std::size_t> strides() const;
  std::size_t offset(std::initializer_list<std::size_t> idx) const;
  std::size_t offset(std::span<const std::size_t> idx) const;

  void fill(double v);
  double frobenius_norm() const;
  double squared_norm() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

// Same flat data, new extents. Throws ShapeError when the element counts differ.
Tensor reshape(const Tensor& t, Shape new_shape);

// out[idx permuted by axes] = t[idx]; out.shape[k] = t.shape[axes[k]].
Tensor permute(const Tensor& t, std::span<const std::size_t> axes);
Tensor permute(const Tensor& t, std::initializer_list<std::size_t> axes);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> axes);

using AxisPair = std::pair<std::size_t, std::size_t>;

// Generalized tensordot: sums over each (axis of a, axis of b) pair; the result
// keeps the free axes of a, then the free axes of b, in their original order.
Tensor contract(const Tensor& a, const Tensor& b, std::span<const AxisPair> pairs);
Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<AxisPair> pairs);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

// Mode-n unfolding: [d_mode, product of the remaining extents]. Columns run
// row-major over the remaining axes in ascending original order.
Tensor unfold(const Tensor& t, std::size_t mode);
// Inverse of unfold for a tensor of the given full shape.
Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape);

// t ×_mode m: contracts axis `mode` of t with the columns of m ([new_d, d_mode]),
// putting the new axis back in position `mode`.
Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode);

// Raw row-major GEMM kernel used by contract: c[m,n] (+)= a[m,k] · b[k,n].
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

double max_abs_diff(const Tensor& a, const Tensor& b);
double relative_error(const Tensor& approx, const Tensor& exact);

}  // namespace tslice
