#include "tensorslice/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "tensorslice/error.hpp"
#include "tensorslice/svd.hpp"

namespace tslice {

std::size_t product(const Dims& dims) {
  std::size_t p = 1;
  for (auto d : dims) p *= d;
  return p;
}

static std::string dims_string(const Dims& d) { return shape_string(d); }

Dims MpoLayer::bonds() const {
  Dims b;
  for (std::size_t n = 0; n + 1 < cores.size(); ++n) b.push_back(cores[n].dim(3));
  return b;
}

void MpoLayer::validate() const {
  const std::size_t n = cores.size();
  if (n == 0) throw ShapeError("MPO has no cores");
  if (in_dims.size() != n || out_dims.size() != n) throw ShapeError("MPO index lists do not match core count");
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& c = cores[k];
    if (c.rank() != 4) throw ShapeError("MPO core " + std::to_string(k) + " is not rank 4");
    if (c.dim(1) != in_dims[k] || c.dim(2) != out_dims[k])
      throw ShapeError("MPO core " + std::to_string(k) + " physical extents disagree with in/out dims");
    if (k == 0 && c.dim(0) != 1) throw ShapeError("MPO left boundary bond must be 1");
    if (k + 1 == n && c.dim(3) != 1) throw ShapeError("MPO right boundary bond must be 1");
    if (k + 1 < n && c.dim(3) != cores[k + 1].dim(0))
      throw ShapeError("MPO bond mismatch between cores " + std::to_string(k) + " and " + std::to_string(k + 1));
  }
  if (bias && bias->size() != out_features()) throw ShapeError("MPO bias length mismatch");
}

Shape TuckerConv::kernel_shape() const {
  return {factor_out.dim(0), factor_in.dim(0), core.dim(2), core.dim(3)};
}

void TuckerConv::validate() const {
  if (core.rank() != 4 || factor_out.rank() != 2 || factor_in.rank() != 2)
    throw ShapeError("Tucker conv expects a rank-4 core and matrix factors");
  if (factor_out.dim(1) != core.dim(0) || factor_in.dim(1) != core.dim(1))
    throw ShapeError("Tucker factor ranks disagree with core");
  if (core.dim(0) > factor_out.dim(0) || core.dim(1) > factor_in.dim(0))
    throw ShapeError("Tucker ranks exceed channel extents");
  if (bias && bias->size() != factor_out.dim(0)) throw ShapeError("Tucker bias length mismatch");
}

MpoLayer mpo_decompose(const Tensor& w, const Dims& in_dims, const Dims& out_dims, const Dims& bonds,
                       MpoDecomposeInfo* info) {
  const std::size_t n = in_dims.size();
  if (w.rank() != 2) throw ShapeError("mpo_decompose expects a matrix");
  if (n == 0 || out_dims.size() != n)
    throw InvalidArgument("mpo_decompose: in_dims and out_dims must have the same non-zero length");
  if (product(in_dims) != w.dim(0) || product(out_dims) != w.dim(1))
    throw ShapeError("mpo_decompose: dims " + dims_string(in_dims) + "x" + dims_string(out_dims) +
                     " do not factor matrix " + shape_string(w.shape()));
  if (bonds.size() + 1 != n) throw InvalidArgument("mpo_decompose: expected " + std::to_string(n - 1) + " bonds");
  for (auto b : bonds)
    if (b < 1) throw InvalidArgument("mpo_decompose: bond dimensions must be >= 1");

  // [i1..iN, j1..jN] -> [i1, j1, i2, j2, ...]
  Shape split = in_dims;
  split.insert(split.end(), out_dims.begin(), out_dims.end());
  std::vector<std::size_t> interleave;
  for (std::size_t k = 0; k < n; ++k) {
    interleave.push_back(k);
    interleave.push_back(n + k);
  }
  Tensor rest = permute(reshape(w, split), interleave);

  MpoLayer m;
  m.in_dims = in_dims;
  m.out_dims = out_dims;
  MpoDecomposeInfo local;
  local.requested_bonds = bonds;
  std::size_t left = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const std::size_t rows = left * in_dims[k] * out_dims[k];
    const std::size_t cols = rest.size() / rows;
    const std::size_t chi = std::min({bonds[k], rows, cols});
    SvdResult svd = truncated_svd(reshape(rest, {rows, cols}), chi);
    m.cores.push_back(reshape(svd.u, {left, in_dims[k], out_dims[k], chi}));
    Tensor carry = std::move(svd.vt);
    for (std::size_t r = 0; r < chi; ++r)
      for (std::size_t c = 0; c < cols; ++c) carry(r, c) *= svd.s[r];
    rest = std::move(carry);
    local.applied_bonds.push_back(chi);
    local.discarded_energy.push_back(svd.discarded_energy);
    left = chi;
  }
  m.cores.push_back(reshape(rest, {left, in_dims[n - 1], out_dims[n - 1], 1}));
  if (info) *info = std::move(local);
  return m;
}

Tensor mpo_to_matrix(const MpoLayer& m) {
  m.validate();
  const std::size_t n = m.num_cores();
  Tensor chain = m.cores[0];
  for (std::size_t k = 1; k < n; ++k) chain = contract(chain, m.cores[k], {{chain.rank() - 1, 0}});
  // chain: [1, i1, j1, ..., iN, jN, 1]
  Shape interleaved;
  for (std::size_t k = 0; k < n; ++k) {
    interleaved.push_back(m.in_dims[k]);
    interleaved.push_back(m.out_dims[k]);
  }
  std::vector<std::size_t> axes;
  for (std::size_t k = 0; k < n; ++k) axes.push_back(2 * k);
  for (std::size_t k = 0; k < n; ++k) axes.push_back(2 * k + 1);
  return reshape(permute(reshape(chain, interleaved), axes), {m.in_features(), m.out_features()});
}

Tensor mpo_forward(const MpoLayer& m, const Tensor& x) {
  m.validate();
  if (x.rank() != 2 || x.dim(1) != m.in_features())
    throw ShapeError("mpo_forward: input " + shape_string(x.shape()) + " does not match in_features " +
                     std::to_string(m.in_features()));
  const std::size_t batch = x.dim(0);
  const std::size_t n = m.num_cores();
  // state: [batch, J, bond, i_k, I_rest]
  std::size_t done_out = 1;
  std::size_t rest_in = m.in_features() / m.in_dims[0];
  Tensor state = reshape(x, {batch, 1, 1, m.in_dims[0], rest_in});
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& core = m.cores[k];
    // -> [batch, J, I_rest, j_k, bond']
    Tensor next = contract(state, core, {{2, 0}, {3, 1}});
    next = permute(next, {0, 1, 3, 4, 2});
    done_out *= m.out_dims[k];
    const std::size_t bond = core.dim(3);
    if (k + 1 < n) {
      const std::size_t ik = m.in_dims[k + 1];
      rest_in /= ik;
      state = reshape(next, {batch, done_out, bond, ik, rest_in});
    } else {
      state = std::move(next);
    }
  }
  Tensor y = reshape(state, {batch, m.out_features()});
  if (m.bias) {
    const auto& b = m.bias->vec();
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < b.size(); ++c) y(r, c) += b[c];
  }
  return y;
}

std::size_t bond_dim_for_cr(std::size_t i1, std::size_t j1, std::size_t i2, std::size_t j2, double cr) {
  if (!(cr > 0.0 && cr < 1.0)) throw InvalidArgument("bond_dim_for_cr: compression rate must lie in (0, 1)");
  if (i1 == 0 || j1 == 0 || i2 == 0 || j2 == 0) throw InvalidArgument("bond_dim_for_cr: extents must be >= 1");
  const double s1 = static_cast<double>(i1 * j1);
  const double s2 = static_cast<double>(i2 * j2);
  const double raw = (1.0 - cr) * s1 * s2 / (s1 + s2);
  const auto cap = std::min(i1 * j1, i2 * j2);
  const auto chi = static_cast<std::size_t>(std::floor(raw));
  return std::clamp<std::size_t>(chi, 1, cap);
}

std::pair<std::size_t, std::size_t> balanced_factor(std::size_t n) {
  if (n == 0) throw InvalidArgument("balanced_factor: n must be >= 1");
  auto a = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (a * a > n) --a;
  while ((a + 1) * (a + 1) <= n) ++a;
  for (; a > 1; --a)
    if (n % a == 0) break;
  return {a, n / a};
}

namespace {

// Leading r left singular vectors of m, padded with an orthonormal completion
// when r exceeds the matrix's maximal rank.
Tensor leading_left_vectors(const Tensor& m, std::size_t r) {
  const std::size_t rows = m.dim(0);
  const std::size_t k = std::min({r, rows, m.dim(1)});
  Tensor u = truncated_svd(m, k).u;
  if (k == r) return u;
  Tensor out({rows, r});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) out(i, j) = u(i, j);
  std::size_t candidate = 0;
  for (std::size_t j = k; j < r; ++j) {
    for (; candidate < rows; ++candidate) {
      std::vector<double> v(rows, 0.0);
      v[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t q = 0; q < j; ++q) {
          double p = 0.0;
          for (std::size_t i = 0; i < rows; ++i) p += v[i] * out(i, q);
          for (std::size_t i = 0; i < rows; ++i) v[i] -= p * out(i, q);
        }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < rows; ++i) out(i, j) = v[i] / nrm;
        ++candidate;
        break;
      }
    }
  }
  return out;
}

}  // namespace

TuckerTensor hosvd(const Tensor& t, const std::vector<std::optional<std::size_t>>& ranks) {
  if (ranks.size() != t.rank()) throw InvalidArgument("hosvd: one rank per mode required");
  TuckerTensor out;
  out.factors.resize(t.rank());
  for (std::size_t mode = 0; mode < t.rank(); ++mode) {
    if (!ranks[mode]) continue;
    const std::size_t r = *ranks[mode];
    if (r < 1 || r > t.dim(mode))
      throw InvalidArgument("hosvd: rank " + std::to_string(r) + " for mode " + std::to_string(mode) +
                            " outside [1, " + std::to_string(t.dim(mode)) + "]");
    out.factors[mode] = leading_left_vectors(unfold(t, mode), r);
  }
  Tensor core = t;
  for (std::size_t mode = 0; mode < t.rank(); ++mode)
    if (out.factors[mode]) core = mode_product(core, transpose(*out.factors[mode]), mode);
  out.core = std::move(core);
  return out;
}

Tensor tucker_reconstruct(const TuckerTensor& t) {
  Tensor full = t.core;
  for (std::size_t mode = 0; mode < t.factors.size(); ++mode)
    if (t.factors[mode]) full = mode_product(full, *t.factors[mode], mode);
  return full;
}

TuckerConv tucker_decompose(const Tensor& kernel, std::size_t r1, std::size_t r2) {
  if (kernel.rank() != 4) throw ShapeError("tucker_decompose expects a rank-4 kernel");
  if (r1 < 1 || r1 > kernel.dim(0) || r2 < 1 || r2 > kernel.dim(1))
    throw InvalidArgument("tucker_decompose: ranks (" + std::to_string(r1) + ", " + std::to_string(r2) +
                          ") out of range for kernel " + shape_string(kernel.shape()));
  TuckerTensor tt = hosvd(kernel, {r1, r2, std::nullopt, std::nullopt});
  TuckerConv out{std::move(tt.core), std::move(*tt.factors[0]), std::move(*tt.factors[1]), std::nullopt};
  return out;
}

Tensor tucker_to_kernel(const TuckerConv& t) {
  t.validate();
  return mode_product(mode_product(t.core, t.factor_out, 0), t.factor_in, 1);
}

std::size_t dense_param_count(std::size_t in_features, std::size_t out_features, bool bias) {
  return in_features * out_features + (bias ? out_features : 0);
}

std::size_t param_count(const MpoLayer& m) {
  std::size_t n = 0;
  for (const auto& c : m.cores) n += c.size();
  return n + (m.bias ? m.bias->size() : 0);
}

std::size_t param_count(const TuckerConv& t) {
  return t.core.size() + t.factor_out.size() + t.factor_in.size() + (t.bias ? t.bias->size() : 0);
}

std::size_t tucker_param_count(const Shape& shape, std::size_t r1, std::size_t r2) {
  return r1 * r2 * shape[2] * shape[3] + shape[0] * r1 + shape[1] * r2;
}

std::pair<std::size_t, std::size_t> tucker_ranks_for_cr(const Shape& shape, double cr) {
  if (shape.size() != 4) throw ShapeError("tucker_ranks_for_cr expects a rank-4 kernel shape");
  if (!(cr >= 0.0 && cr < 1.0)) throw InvalidArgument("tucker_ranks_for_cr: compression rate must lie in [0, 1)");
  const std::size_t s1 = shape[0], s2 = shape[1];
  if (cr == 0.0) return {s1, s2};
  const double budget = (1.0 - cr) * static_cast<double>(shape_size(shape));
  if (static_cast<double>(tucker_param_count(shape, 1, 1)) > budget)
    throw InfeasibleError("compression rate " + std::to_string(cr) + " infeasible for kernel " + shape_string(shape));

  // Walk r1 along the proportional ray; for each r1 take the largest r2 that
  // stays within one rank step of proportional and within budget.
  const double band = std::max(1.0 / static_cast<double>(s1), 1.0 / static_cast<double>(s2)) + 1e-12;
  std::pair<std::size_t, std::size_t> best{1, 1};
  std::size_t best_params = 0;
  double best_dev = std::numeric_limits<double>::infinity();
  for (std::size_t r1 = 1; r1 <= s1; ++r1) {
    const double ratio = static_cast<double>(r1) / static_cast<double>(s1);
    const auto centre = ratio * static_cast<double>(s2);
    const auto lo = static_cast<std::size_t>(std::max(1.0, std::ceil(centre - band * s2)));
    const auto hi = static_cast<std::size_t>(std::min<double>(s2, std::floor(centre + band * s2)));
    for (std::size_t r2 = hi; r2 >= lo && r2 >= 1; --r2) {
      const double dev = std::abs(ratio - static_cast<double>(r2) / static_cast<double>(s2));
      if (dev > band) continue;
      const std::size_t p = tucker_param_count(shape, r1, r2);
      if (static_cast<double>(p) > budget) continue;
      if (p > best_params || (p == best_params && dev < best_dev)) {
        best = {r1, r2};
        best_params = p;
        best_dev = dev;
      }
      break;  // smaller r2 at this r1 only lowers the count
    }
  }
  if (best_params == 0) throw InfeasibleError("no proportional Tucker ranks fit the budget");
  return best;
}

const LayerPlan* CompressionPlan::find(std::size_t layer) const {
  for (const auto& e : layers)
    if (e.layer == layer) return &e;
  return nullptr;
}

std::string to_string(PlanMethod m) {
  switch (m) {
    case PlanMethod::skip: return "skip";
    case PlanMethod::mpo: return "mpo";
    case PlanMethod::tucker: return "tucker";
  }
  return "skip";
}

static PlanMethod method_from_string(const std::string& s) {
  if (s == "skip") return PlanMethod::skip;
  if (s == "mpo") return PlanMethod::mpo;
  if (s == "tucker") return PlanMethod::tucker;
  throw ConfigError("unknown plan method '" + s + "'");
}

std::string CompressionPlan::to_json() const {
  nlohmann::ordered_json doc;
  doc["target_cr"] = target_cr;
  doc["layers"] = nlohmann::ordered_json::array();
  for (const auto& e : layers) {
    nlohmann::ordered_json j;
    j["layer"] = e.layer;
    j["method"] = to_string(e.method);
    if (e.method == PlanMethod::mpo) {
      j["in_dims"] = e.in_dims;
      j["out_dims"] = e.out_dims;
      j["bonds"] = e.bonds;
    } else if (e.method == PlanMethod::tucker) {
      j["ranks"] = {e.rank_out, e.rank_in};
    }
    doc["layers"].push_back(std::move(j));
  }
  return doc.dump(2);
}

CompressionPlan CompressionPlan::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("plan is not valid JSON: ") + e.what());
  }
  CompressionPlan plan;
  try {
    plan.target_cr = doc.value("target_cr", 0.0);
    for (const auto& j : doc.at("layers")) {
      LayerPlan e;
      e.layer = j.at("layer").get<std::size_t>();
      e.method = method_from_string(j.at("method").get<std::string>());
      if (e.method == PlanMethod::mpo) {
        e.in_dims = j.at("in_dims").get<Dims>();
        e.out_dims = j.at("out_dims").get<Dims>();
        e.bonds = j.at("bonds").get<Dims>();
      } else if (e.method == PlanMethod::tucker) {
        const auto ranks = j.at("ranks").get<Dims>();
        if (ranks.size() != 2) throw ConfigError("tucker entry needs two ranks");
        e.rank_out = ranks[0];
        e.rank_in = ranks[1];
      }
      plan.layers.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed plan: ") + e.what());
  }
  return plan;
}

}  // namespace tslice
