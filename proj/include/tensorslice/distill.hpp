#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tensorslice/model.hpp"
#include "tensorslice/schedule.hpp"
#include "tensorslice/train.hpp"

namespace tslice {

// Recorded activations around one slice of a pretrained network. Rows of
// `inputs` and `outputs` correspond to `sample_indices` of the source dataset.
struct FeatureCache {
  std::size_t slice_index = 0;
  Slice slice;
  Tensor inputs;   // what the pretrained network feeds into the slice
  Tensor outputs;  // what the pretrained slice produces
  std::vector<std::size_t> sample_indices;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string model_checksum;

  std::size_t sample_count() const { return sample_indices.size(); }
};

// Cuts after every activation that is not the last layer, so each slice ends
// on a post-activation feature map (or the logits).
std::vector<Slice> activation_partition(const Network& net);

// First ceil(fraction * n) entries of a seeded permutation of 0..n-1, so a
// smaller fraction with the same seed picks a subset of a larger one.
std::vector<std::size_t> sample_subset(std::size_t n, double fraction, std::uint64_t seed);

// One forward sweep over the selected samples, recording the activations at
// each requested slice boundary.
std::vector<FeatureCache> capture_features(const Network& net, const Dataset& data, const std::vector<Slice>& slices,
                                           double fraction, std::uint64_t seed);

// <root>/<model-checksum>/slice-<i>/{inputs.bin, outputs.bin, meta}
std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& checksum, std::size_t slice);
void save_cache(const FeatureCache& cache, const std::filesystem::path& root);
// Throws FormatError when the stored checksum is not `checksum`.
FeatureCache load_cache(const std::filesystem::path& root, const std::string& checksum, std::size_t slice);

inline constexpr double kConvergedLoss = 1e-12;

struct SliceResult {
  std::vector<Layer> layers;
  TrainReport report;
};

// Heals the (tensorized) layers of one slice by regressing their output on
// the cached pretrained output with the mean squared error. Every parameter
// of the given layers is trained. The cache must come from the model with
// `model_checksum`. The training seed is mix_seed(config.seed, slice index).
// No steps are taken when the starting loss over the cache is below
// kConvergedLoss.
SliceResult distill_slice(std::vector<Layer> layers, const FeatureCache& cache, const TrainConfig& config,
                          const std::string& model_checksum);

struct LocalOptions {
  std::size_t workers = 1;
  std::optional<std::filesystem::path> cache_root;  // persist captured features here
};

struct LocalResult {
  Network network;
  std::vector<TrainReport> reports;  // one per slice that had plan entries
  ScheduleReport schedule;
};

// Decompose each slice as planned, heal it against the pretrained features and
// splice it back. config.data_fraction selects the captured subset. Slices are
// independent jobs run on options.workers threads.
LocalResult local_tensorize(const Network& net, const Dataset& train, const std::vector<Slice>& slices,
                            const CompressionPlan& plan, const TrainConfig& config, const LocalOptions& options = {});

// End-to-end cross-entropy training of the tensorized layers (all layers when
// config.train_all is set) on a config.data_fraction subset of `train`.
Network global_finetune(const Network& net, const Dataset& train, const TrainConfig& config, TrainReport* report);

struct HybridResult {
  Network network;
  LocalResult local;
  TrainReport global;
};

HybridResult hybrid_local_global(const Network& net, const Dataset& train, const std::vector<Slice>& slices,
                                 const CompressionPlan& plan, const TrainConfig& local_config,
                                 const TrainConfig& global_config, const LocalOptions& options = {});

}  // namespace tslice
