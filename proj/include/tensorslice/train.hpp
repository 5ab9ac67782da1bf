#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensorslice/autodiff.hpp"
#include "tensorslice/model.hpp"

namespace tslice {

enum class LossKind { mse, cross_entropy };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  double data_fraction = 1.0;  // in (0, 1]
  bool train_all = false;      // global fine-tuning: also train non-tensorized layers

  // Every violated constraint, empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;  // throws ConfigError listing problems()

  nlohmann::json to_json() const;
  // Missing keys keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState for_params(const ParamSet& params, double learning_rate);
};

// One bias-corrected Adam update, applied in ParamSet order.
void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state);

void save_adam(const AdamState& state, const std::filesystem::path& dir);
AdamState load_adam(const std::filesystem::path& dir);

// Central differences of f with respect to every parameter coordinate.
// Parameters are restored before returning.
std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, ParamSet& params, double h);

struct LossPoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;  // cumulative forward+backward time
};

struct TrainReport {
  std::string name;  // "slice-<i>", "global", "baseline"
  std::vector<LossPoint> curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // mean over the last epoch
  std::optional<double> best_metric;
  double wall_ms = 0.0;
  std::size_t steps = 0;
  TrainConfig config;

  nlohmann::json summary() const;
};

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

// Regression targets (mse) or class labels (cross_entropy), one per input row.
struct Targets {
  std::optional<Tensor> features;
  std::vector<int> labels;
};

// Adam over shuffled mini-batches of (inputs, targets). Only tensors in
// `params` change. Throws DivergenceError when the loss becomes non-finite or
// exceeds 1e6 times the first batch loss.
TrainReport fit(std::vector<Layer>& layers, ParamSet& params, const Tensor& inputs, const Targets& targets,
                const TrainConfig& config, std::string name);

// Seeded He-style initialization.
Dense init_dense(std::size_t in, std::size_t out, std::uint64_t seed);
Conv2d init_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, ConvGeometry g, std::uint64_t seed);

// The two toy networks: an MLP for 2-d points and a small CNN for 1x8x8 images.
Network toy_mlp(std::uint64_t seed, std::size_t hidden = 64, int num_classes = 2);
Network toy_cnn(std::uint64_t seed, int num_classes);

// Trains every parameter of `net` with cross-entropy on `data`.
Network train_network(const Network& net, const Dataset& data, const TrainConfig& config, TrainReport* report);

}  // namespace tslice
