#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tensorslice/tensor.hpp"

namespace tslice {

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);

// Matrix product operator replacing a [prod(in_dims), prod(out_dims)] matrix.
// Core n is [bond_{n-1}, in_dims[n], out_dims[n], bond_n] with both boundary
// bonds equal to 1. Row index i maps to (i_1..i_N) and column index j to
// (j_1..j_N), both row-major.
struct MpoLayer {
  std::vector<Tensor> cores;
  Dims in_dims;
  Dims out_dims;
  std::optional<Tensor> bias;  // length prod(out_dims), never factorized

  std::size_t num_cores() const { return cores.size(); }
  std::size_t in_features() const { return product(in_dims); }
  std::size_t out_features() const { return product(out_dims); }
  Dims bonds() const;  // internal bonds, N-1 values
  void validate() const;
};

// Tucker-2 convolution kernel: only the channel modes are factorized.
// kernel[o, i, y, x] = sum core[a, b, y, x] * factor_out[o, a] * factor_in[i, b].
struct TuckerConv {
  Tensor core;        // [r1, r2, s3, s4]
  Tensor factor_out;  // [s1, r1]
  Tensor factor_in;   // [s2, r2]
  std::optional<Tensor> bias;  // length s1

  Shape kernel_shape() const;
  std::size_t rank_out() const { return core.dim(0); }
  std::size_t rank_in() const { return core.dim(1); }
  void validate() const;
};

struct MpoDecomposeInfo {
  Dims requested_bonds;
  Dims applied_bonds;  // requested, clamped to each split's maximal rank
  std::vector<double> discarded_energy;  // per split
  bool clamped() const { return requested_bonds != applied_bonds; }
};

// TT-SVD sweep. Bonds above the maximal rank of a split are clamped; `info`
// receives what was applied.
MpoLayer mpo_decompose(const Tensor& w, const Dims& in_dims, const Dims& out_dims, const Dims& bonds,
                       MpoDecomposeInfo* info = nullptr);
Tensor mpo_to_matrix(const MpoLayer& m);
// y = x · mpo_to_matrix(m) + bias, by sequential core contractions.
Tensor mpo_forward(const MpoLayer& m, const Tensor& x);

// Closed-form 2-site bond dimension for a target compression rate, floored and
// clamped to [1, min(i1*j1, i2*j2)].
std::size_t bond_dim_for_cr(std::size_t i1, std::size_t j1, std::size_t i2, std::size_t j2, double cr);

// a * b = n, a <= b, b - a minimal.
std::pair<std::size_t, std::size_t> balanced_factor(std::size_t n);

// Higher-order SVD. A rank of nullopt leaves that mode untouched (identity
// factor, not stored). Returns the core and one factor per mode (empty tensor
// placeholder for untouched modes).
struct TuckerTensor {
  Tensor core;
  std::vector<std::optional<Tensor>> factors;  // [d_n, r_n]
};
TuckerTensor hosvd(const Tensor& t, const std::vector<std::optional<std::size_t>>& ranks);
Tensor tucker_reconstruct(const TuckerTensor& t);

TuckerConv tucker_decompose(const Tensor& kernel, std::size_t r1, std::size_t r2);
Tensor tucker_to_kernel(const TuckerConv& t);

std::size_t dense_param_count(std::size_t in_features, std::size_t out_features, bool bias);
std::size_t param_count(const MpoLayer& m);
std::size_t param_count(const TuckerConv& t);

// Ranks (r1, r2) for a kernel of `shape` meeting the parameter budget
// dense * (1 - cr), keeping r1/s1 and r2/s2 within one rank step of each
// other and maximizing the parameter count among such pairs. Bias excluded.
std::pair<std::size_t, std::size_t> tucker_ranks_for_cr(const Shape& shape, double cr);
std::size_t tucker_param_count(const Shape& shape, std::size_t r1, std::size_t r2);

enum class PlanMethod { skip, mpo, tucker };

struct LayerPlan {
  std::size_t layer = 0;
  PlanMethod method = PlanMethod::skip;
  Dims in_dims, out_dims, bonds;  // mpo
  std::size_t rank_out = 0, rank_in = 0;  // tucker
};

struct CompressionPlan {
  std::vector<LayerPlan> layers;
  double target_cr = 0.0;

  const LayerPlan* find(std::size_t layer) const;
  std::string to_json() const;
  static CompressionPlan from_json(const std::string& text);
};

std::string to_string(PlanMethod m);

}  // namespace tslice
