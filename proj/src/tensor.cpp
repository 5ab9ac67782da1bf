#include "tensorslice/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tensorslice/error.hpp"

namespace tslice {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_string(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::vector<std::size_t> Tensor::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t k = shape_.size(); k-- > 1;) s[k - 1] = s[k] * shape_[k];
  return s;
}

std::size_t Tensor::offset(std::span<const std::size_t> idx) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape_.size(); ++k) off = off * shape_[k] + idx[k];
  return off;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  return offset(std::span<const std::size_t>(idx.begin(), idx.size()));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

double Tensor::frobenius_norm() const { return std::sqrt(squared_norm()); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ShapeError("add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ShapeError("subtract: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_size(new_shape) != t.size())
    throw ShapeError("reshape " + shape_string(t.shape()) + " -> " + shape_string(new_shape) +
                     ": element counts differ");
  return Tensor(std::move(new_shape), t.vec());
}

static void check_permutation(std::span<const std::size_t> axes, std::size_t rank) {
  if (axes.size() != rank) throw InvalidArgument("permutation length does not match tensor rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw InvalidArgument("axes are not a permutation of 0..rank-1");
    seen[a] = true;
  }
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) inv[axes[k]] = k;
  return inv;
}

Tensor permute(const Tensor& t, std::span<const std::size_t> axes) {
  const std::size_t rank = t.rank();
  check_permutation(axes, rank);
  bool identity = true;
  for (std::size_t k = 0; k < rank; ++k) identity &= axes[k] == k;
  if (identity) return t;

  Shape out_shape(rank);
  for (std::size_t k = 0; k < rank; ++k) out_shape[k] = t.dim(axes[k]);
  Tensor out(out_shape);

  // Walk the output in row-major order, tracking the matching input offset.
  const auto in_strides = t.strides();
  std::vector<std::size_t> step(rank);
  for (std::size_t k = 0; k < rank; ++k) step[k] = in_strides[axes[k]];
  std::vector<std::size_t> idx(rank, 0);
  const auto& src = t.vec();
  auto& dst = out.vec();
  const std::size_t inner = rank ? out_shape[rank - 1] : 1;
  const std::size_t inner_step = rank ? step[rank - 1] : 0;
  std::size_t in_off = 0;
  for (std::size_t o = 0; o < dst.size(); o += inner) {
    for (std::size_t i = 0; i < inner; ++i) dst[o + i] = src[in_off + i * inner_step];
    // advance the outer odometer (all axes but the last)
    for (std::size_t k = rank - 1; k-- > 0;) {
      in_off += step[k];
      if (++idx[k] < out_shape[k]) break;
      in_off -= step[k] * out_shape[k];
      idx[k] = 0;
    }
  }
  return out;
}

Tensor permute(const Tensor& t, std::initializer_list<std::size_t> axes) {
  return permute(t, std::span<const std::size_t>(axes.begin(), axes.size()));
}

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor contract(const Tensor& a, const Tensor& b, std::span<const AxisPair> pairs) {
  std::vector<bool> used_a(a.rank(), false), used_b(b.rank(), false);
  for (auto [pa, pb] : pairs) {
    if (pa >= a.rank() || pb >= b.rank()) throw InvalidArgument("contract: axis out of range");
    if (used_a[pa] || used_b[pb]) throw InvalidArgument("contract: repeated axis");
    used_a[pa] = used_b[pb] = true;
    if (a.dim(pa) != b.dim(pb))
      throw ShapeError("contract: extent mismatch " + std::to_string(a.dim(pa)) + " vs " +
                       std::to_string(b.dim(pb)));
  }
  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  std::size_t free_a = 1, free_b = 1, inner = 1;
  for (std::size_t k = 0; k < a.rank(); ++k)
    if (!used_a[k]) {
      perm_a.push_back(k);
      out_shape.push_back(a.dim(k));
      free_a *= a.dim(k);
    }
  for (auto [pa, pb] : pairs) {
    perm_a.push_back(pa);
    perm_b.push_back(pb);
    inner *= a.dim(pa);
  }
  for (std::size_t k = 0; k < b.rank(); ++k)
    if (!used_b[k]) {
      perm_b.push_back(k);
      out_shape.push_back(b.dim(k));
      free_b *= b.dim(k);
    }
  const Tensor ap = permute(a, perm_a);
  const Tensor bp = permute(b, perm_b);
  Tensor out(out_shape);
  gemm(ap.data(), bp.data(), out.data(), free_a, inner, free_b);
  return out;
}

Tensor contract(const Tensor& a, const Tensor& b, std::initializer_list<AxisPair> pairs) {
  return contract(a, b, std::span<const AxisPair>(pairs.begin(), pairs.size()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects matrices");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner extents " + std::to_string(a.dim(1)) + " and " +
                     std::to_string(b.dim(0)) + " differ");
  Tensor out({a.dim(0), b.dim(1)});
  gemm(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose expects a matrix");
  return permute(m, {1, 0});
}

static std::vector<std::size_t> mode_first(std::size_t rank, std::size_t mode) {
  std::vector<std::size_t> axes{mode};
  for (std::size_t k = 0; k < rank; ++k)
    if (k != mode) axes.push_back(k);
  return axes;
}

Tensor unfold(const Tensor& t, std::size_t mode) {
  if (mode >= t.rank()) throw InvalidArgument("unfold: mode " + std::to_string(mode) + " out of range");
  const std::size_t d = t.dim(mode);
  return reshape(permute(t, mode_first(t.rank(), mode)), {d, t.size() / d});
}

Tensor fold(const Tensor& m, std::size_t mode, const Shape& shape) {
  if (mode >= shape.size()) throw InvalidArgument("fold: mode out of range");
  const auto axes = mode_first(shape.size(), mode);
  Shape permuted(shape.size());
  for (std::size_t k = 0; k < axes.size(); ++k) permuted[k] = shape[axes[k]];
  if (m.rank() != 2 || m.dim(0) != shape[mode] || m.size() != shape_size(shape))
    throw ShapeError("fold: matrix " + shape_string(m.shape()) + " incompatible with " + shape_string(shape));
  return permute(reshape(m, permuted), inverse_permutation(axes));
}

Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode) {
  if (m.rank() != 2) throw ShapeError("mode_product expects a matrix factor");
  Shape out_shape = t.shape();
  out_shape.at(mode) = m.dim(0);
  return fold(matmul(m, unfold(t, mode)), mode, out_shape);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shapes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

double relative_error(const Tensor& approx, const Tensor& exact) {
  const double denom = exact.frobenius_norm();
  const double num = (approx - exact).frobenius_norm();
  return denom > 0.0 ? num / denom : num;
}

}  // namespace tslice
