#include "tensorslice/profile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tensorslice/error.hpp"

namespace tslice {

namespace {

struct MpoShape {
  Dims in_dims, out_dims;
  std::size_t max_bond;
};

// Dense w is [out, in]; the MPO factorizes its transpose [in, out].
MpoShape balanced_two_site(const Dense& d) {
  const auto [a, b] = balanced_factor(d.w.dim(1));
  const auto [c, e] = balanced_factor(d.w.dim(0));
  return {{a, b}, {c, e}, std::min(a * c, b * e)};
}

std::size_t bias_size(const std::optional<Tensor>& b) { return b ? b->size() : 0; }

std::size_t mpo_plan_params(const LayerPlan& e) {
  const std::size_t n = e.in_dims.size();
  std::vector<std::size_t> site(n);
  for (std::size_t k = 0; k < n; ++k) site[k] = e.in_dims[k] * e.out_dims[k];
  std::vector<std::size_t> bonds(n + 1, 1);
  for (std::size_t k = 1; k < n; ++k) {
    std::size_t left = 1, right = 1;
    for (std::size_t q = 0; q < k; ++q) left *= site[q];
    for (std::size_t q = k; q < n; ++q) right *= site[q];
    bonds[k] = std::min({e.bonds.at(k - 1), left, right});
  }
  std::size_t total = 0;
  for (std::size_t k = 0; k < n; ++k) total += bonds[k] * site[k] * bonds[k + 1];
  return total;
}

}  // namespace

std::vector<std::size_t> tensorizable_layers(const Network& net) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.size(); ++i)
    if (is_tensorizable(net.layer(i))) out.push_back(i);
  return out;
}

std::set<std::size_t> boundary_layers(const Network& net) {
  const auto t = tensorizable_layers(net);
  if (t.empty()) return {};
  return {t.front(), t.back()};
}

std::vector<SensitivityRecord> layer_sensitivity(const Network& net, const Dataset& test,
                                                 const std::vector<std::size_t>& candidates,
                                                 const ProbeOptions& options) {
  std::vector<SensitivityRecord> records;
  if (candidates.empty()) return records;
  const double baseline = evaluate(net, test).accuracy;
  for (std::size_t idx : candidates) {
    if (idx >= net.size()) throw InvalidArgument("sensitivity: layer " + std::to_string(idx) + " out of range");
    const Layer& layer = net.layer(idx);
    SensitivityRecord rec;
    rec.layer = idx;
    LayerPlan entry;
    entry.layer = idx;
    if (const auto* d = std::get_if<Dense>(&layer)) {
      const MpoShape s = balanced_two_site(*d);
      const std::size_t chi = options.full_rank ? s.max_bond : (s.max_bond + 1) / 2;
      entry.method = PlanMethod::mpo;
      entry.in_dims = s.in_dims;
      entry.out_dims = s.out_dims;
      entry.bonds = {chi};
      rec.weight_shape = d->w.shape();
      rec.ranks = {chi};
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      const std::size_t s1 = c->k.dim(0), s2 = c->k.dim(1);
      entry.method = PlanMethod::tucker;
      entry.rank_out = options.full_rank ? s1 : std::max<std::size_t>(1, s1 / 2);
      entry.rank_in = options.full_rank ? s2 : std::max<std::size_t>(1, s2 / 2);
      rec.weight_shape = c->k.shape();
      rec.ranks = {entry.rank_out, entry.rank_in};
    } else {
      throw InvalidArgument("sensitivity: layer " + std::to_string(idx) + " (" + layer_kind(layer) +
                            ") cannot be tensorized");
    }
    try {
      CompressionPlan single;
      single.layers = {entry};
      Network probed = tensorize_slice(net, {idx, idx + 1}, single);
      rec.accuracy = evaluate(probed, test).accuracy;
    } catch (const Error& e) {
      throw Error("sensitivity probe of layer " + std::to_string(idx) + ": " + e.what());
    }
    rec.delta = rec.accuracy - baseline;
    records.push_back(std::move(rec));
  }
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.delta != b.delta ? a.delta < b.delta : a.layer < b.layer;
  });
  return records;
}

std::set<std::size_t> select_exclusions(const std::vector<SensitivityRecord>& records, std::size_t k) {
  std::vector<const SensitivityRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->delta != b->delta ? a->delta < b->delta : a->layer < b->layer;
  });
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i) out.insert(sorted[i]->layer);
  return out;
}

void write_sensitivity_csv(const std::vector<SensitivityRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer,shape,ranks,accuracy,delta\n";
  out.precision(10);
  for (const auto& r : records) {
    std::string ranks;
    for (std::size_t k = 0; k < r.ranks.size(); ++k) ranks += (k ? "x" : "") + std::to_string(r.ranks[k]);
    std::string shape;
    for (std::size_t k = 0; k < r.weight_shape.size(); ++k) shape += (k ? "x" : "") + std::to_string(r.weight_shape[k]);
    out << r.layer << ',' << shape << ',' << ranks << ',' << r.accuracy << ',' << r.delta << '\n';
  }
}

LayerPlan plan_layer(const Layer& layer, std::size_t index, double cr) {
  if (!(cr > 0.0 && cr < 1.0)) throw InvalidArgument("layer compression rate must lie in (0, 1)");
  LayerPlan e;
  e.layer = index;
  if (const auto* d = std::get_if<Dense>(&layer)) {
    const MpoShape s = balanced_two_site(*d);
    e.method = PlanMethod::mpo;
    e.in_dims = s.in_dims;
    e.out_dims = s.out_dims;
    e.bonds = {bond_dim_for_cr(s.in_dims[0], s.out_dims[0], s.in_dims[1], s.out_dims[1], cr)};
  } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
    const auto [r1, r2] = tucker_ranks_for_cr(c->k.shape(), cr);
    e.method = PlanMethod::tucker;
    e.rank_out = r1;
    e.rank_in = r2;
  } else {
    throw InvalidArgument("layer " + std::to_string(index) + " (" + layer_kind(layer) + ") cannot be tensorized");
  }
  return e;
}

CompressionPlan plan_uniform(const Network& net, double layer_cr, const std::set<std::size_t>& exclude) {
  CompressionPlan plan;
  for (std::size_t i : tensorizable_layers(net)) {
    if (exclude.count(i)) continue;
    try {
      plan.layers.push_back(plan_layer(net.layer(i), i, layer_cr));
    } catch (const InfeasibleError&) {
      // too small to reach the rate at any rank; stays dense
    }
  }
  return plan;
}

std::size_t planned_param_count(const Network& net, const CompressionPlan& plan) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& layer = net.layer(i);
    const LayerPlan* e = plan.find(i);
    if (!e || e->method == PlanMethod::skip) {
      total += param_count(layer);
    } else if (e->method == PlanMethod::mpo) {
      total += mpo_plan_params(*e) + bias_size(std::get<Dense>(layer).b);
    } else {
      const auto& c = std::get<Conv2d>(layer);
      total += tucker_param_count(c.k.shape(), e->rank_out, e->rank_in) + bias_size(c.b);
    }
  }
  return total;
}

CompressionPlan plan_for_target(const Network& net, double target, const std::set<std::size_t>& exclude, double step) {
  if (!(target >= 0.0 && target < 1.0)) throw InvalidArgument("target compression rate must lie in [0, 1)");
  if (!(step > 0.0)) throw InvalidArgument("planner step must be positive");
  const auto p0 = static_cast<double>(net.param_count());
  for (double cr = step; cr < 1.0; cr += step) {
    CompressionPlan plan = plan_uniform(net, cr, exclude);
    const double achieved = (p0 - static_cast<double>(planned_param_count(net, plan))) / p0;
    if (achieved >= target) {
      plan.target_cr = target;
      return plan;
    }
  }
  throw InfeasibleError("no uniform per-layer rate reaches a whole-network compression rate of " +
                        std::to_string(target));
}

}  // namespace tslice
