#include "tensorslice/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tensorslice/error.hpp"

namespace tslice {

namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i], yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

struct Factorization {
  std::vector<double> u;      // column-major [rows x n]
  std::vector<double> v;      // column-major [n x n]
  std::vector<double> sigma;  // n, already sorted
  std::size_t sweeps = 0;
};

// Replace the columns flagged in `fix` by vectors orthonormal to all others.
void complete_basis(std::vector<double>& u, std::size_t rows, std::size_t n, const std::vector<bool>& fix) {
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!fix[j]) continue;
    double* col = u.data() + j * rows;
    for (; candidate < rows; ++candidate) {
      std::fill(col, col + rows, 0.0);
      col[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t q = 0; q < n; ++q) {
          if (q == j || (fix[q] && q > j)) continue;
          const double* other = u.data() + q * rows;
          const double p = dot(col, other, rows);
          for (std::size_t i = 0; i < rows; ++i) col[i] -= p * other[i];
        }
      const double nrm = std::sqrt(dot(col, col, rows));
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < rows; ++i) col[i] /= nrm;
        ++candidate;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall matrix given column-major as `cols` ([rows x n], rows >= n).
Factorization jacobi(std::vector<double> cols, std::size_t rows, std::size_t n, const SvdOptions& opt) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const std::size_t cap = opt.sweep_factor * std::max<std::size_t>(1, n);
  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = dot(&cols[j * rows], &cols[j * rows], rows);

  std::size_t sweep = 0;
  double off = 0.0;
  for (; sweep < cap; ++sweep) {
    off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = &cols[p * rows];
        double* aq = &cols[q * rows];
        const double alpha = norms[p], beta = norms[q];
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = dot(ap, aq, rows);
        const double cosine = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, cosine);
        if (cosine <= opt.tolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(ap, aq, rows, c, s);
        rotate(&v[p * n], &v[q * n], n, c, s);
        norms[p] = dot(ap, ap, rows);
        norms[q] = dot(aq, aq, rows);
      }
    }
    if (off <= opt.tolerance) break;
  }
  if (off > opt.tolerance) throw ConvergenceError("Jacobi SVD exceeded sweep cap", off);

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(&cols[j * rows], &cols[j * rows], rows));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  Factorization f;
  f.sweeps = sweep + 1;
  f.u.assign(rows * n, 0.0);
  f.v.assign(n * n, 0.0);
  f.sigma.resize(n);
  std::vector<bool> fix(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    f.sigma[j] = sigma[src];
    std::copy_n(&v[src * n], n, &f.v[j * n]);
    if (sigma[src] > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) f.u[j * rows + i] = cols[src * rows + i] / sigma[src];
    } else {
      fix[j] = true;
    }
  }
  if (std::find(fix.begin(), fix.end(), true) != fix.end()) complete_basis(f.u, rows, n, fix);
  return f;
}

}  // namespace

Tensor SvdResult::reconstruct() const {
  Tensor us = u;
  const std::size_t rows = u.dim(0), k = s.size();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) us(i, j) *= s[j];
  return matmul(us, vt);
}

SvdResult truncated_svd(const Tensor& m, std::size_t k, const SvdOptions& options) {
  if (m.rank() != 2) throw ShapeError("truncated_svd expects a matrix, got " + shape_string(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  const std::size_t full = std::min(rows, cols);
  if (k < 1 || k > full)
    throw InvalidArgument("truncated_svd: rank " + std::to_string(k) + " outside [1, " + std::to_string(full) + "]");

  // Work on the tall orientation: tall = m (rows >= cols) or mᵀ.
  const bool flip = rows < cols;
  const std::size_t tr = flip ? cols : rows;
  const std::size_t tn = flip ? rows : cols;
  // Column-major storage of the tall matrix equals row-major storage of its transpose.
  std::vector<double> colmajor = flip ? m.vec() : transpose(m).vec();
  Factorization f = jacobi(std::move(colmajor), tr, tn, options);

  // tall = U S Vᵀ. If flipped, m = V S Uᵀ.
  SvdResult r;
  r.sweeps = f.sweeps;
  r.s.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t j = k; j < full; ++j) r.discarded_energy += f.sigma[j] * f.sigma[j];
  const std::vector<double>& left = flip ? f.v : f.u;   // column-major [rows x n]
  const std::vector<double>& right = flip ? f.u : f.v;  // column-major [cols x n]
  r.u = Tensor({rows, k});
  r.vt = Tensor({k, cols});
  for (std::size_t j = 0; j < k; ++j) {
    const double* ucol = &left[j * rows];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < rows; ++i)
      if (std::abs(ucol[i]) > std::abs(ucol[arg])) arg = i;
    const double sign = ucol[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < rows; ++i) r.u(i, j) = sign * ucol[i];
    for (std::size_t i = 0; i < cols; ++i) r.vt(j, i) = sign * right[j * cols + i];
  }
  return r;
}

SvdResult thin_svd(const Tensor& m, const SvdOptions& options) {
  if (m.rank() != 2) throw ShapeError("thin_svd expects a matrix");
  return truncated_svd(m, std::min(m.dim(0), m.dim(1)), options);
}

}  // namespace tslice
