#pragma once

#include <cstddef>
#include <vector>

#include "tensorslice/tensor.hpp"

namespace tslice {

struct SvdResult {
  Tensor u;               // [rows, k], orthonormal columns
  std::vector<double> s;  // k values, non-increasing, >= 0
  Tensor vt;              // [k, cols], orthonormal rows
  double discarded_energy = 0.0;  // sum of squares of the dropped singular values
  std::size_t sweeps = 0;

  Tensor reconstruct() const;
};

struct SvdOptions {
  double tolerance = 1e-12;    // max |cos| between any two working columns
  std::size_t sweep_factor = 100;  // sweep cap = sweep_factor * min(rows, cols)
};

// Rank-k truncated SVD by one-sided (Hestenes) Jacobi rotations.
//
// Singular values are sorted non-increasing with equal values kept in their
// input order. Each left singular vector is sign-normalised so that its
// largest-magnitude entry is non-negative, which makes factorizations
// reproducible. Throws InvalidArgument for k outside [1, min(rows, cols)] and
// ConvergenceError if the sweep cap is hit.
SvdResult truncated_svd(const Tensor& m, std::size_t k, const SvdOptions& options = {});

// Full thin SVD, k = min(rows, cols).
SvdResult thin_svd(const Tensor& m, const SvdOptions& options = {});

}  // namespace tslice
