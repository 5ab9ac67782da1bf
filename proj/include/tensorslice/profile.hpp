#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "tensorslice/decompose.hpp"
#include "tensorslice/model.hpp"

namespace tslice {

struct SensitivityRecord {
  std::size_t layer = 0;
  Shape weight_shape;        // dense [out, in] or conv [s1, s2, s3, s4]
  std::vector<std::size_t> ranks;  // mpo: bond; tucker: r1, r2
  double accuracy = 0.0;
  double delta = 0.0;        // accuracy - baseline
};

struct ProbeOptions {
  bool full_rank = false;  // exact decomposition; every delta should be 0
};

// Tensorizes each candidate alone (conv: Tucker at half channel ranks; dense:
// balanced 2-site MPO at half the maximal bond) and evaluates on `test`
// without any healing. Sorted by delta ascending, ties by layer index.
std::vector<SensitivityRecord> layer_sensitivity(const Network& net, const Dataset& test,
                                                 const std::vector<std::size_t>& candidates,
                                                 const ProbeOptions& options = {});

// Indices of every Dense/Conv2d layer.
std::vector<std::size_t> tensorizable_layers(const Network& net);

// First and last tensorizable layers (input stem and classifier head).
std::set<std::size_t> boundary_layers(const Network& net);

// The k layers with the most negative delta.
std::set<std::size_t> select_exclusions(const std::vector<SensitivityRecord>& records, std::size_t k);

void write_sensitivity_csv(const std::vector<SensitivityRecord>& records, const std::filesystem::path& path);

// Plan entry compressing a single layer at rate `cr`: dense layers become a
// balanced 2-site MPO, conv layers a Tucker-2 kernel.
LayerPlan plan_layer(const Layer& layer, std::size_t index, double cr);

// The same per-layer rate for every tensorizable layer not in `exclude`.
// Layers that cannot reach the rate at any rank are left out of the plan.
CompressionPlan plan_uniform(const Network& net, double layer_cr, const std::set<std::size_t>& exclude = {});

// Parameter count of `net` once `plan` is applied.
std::size_t planned_param_count(const Network& net, const CompressionPlan& plan);

// Smallest uniform per-layer rate (searched in steps of `step`) whose plan
// reaches a whole-network rate of at least `target`. Throws InfeasibleError
// when even the most aggressive rate falls short.
CompressionPlan plan_for_target(const Network& net, double target, const std::set<std::size_t>& exclude = {},
                                double step = 0.005);

}  // namespace tslice
