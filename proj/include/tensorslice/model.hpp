#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tensorslice/conv.hpp"
#include "tensorslice/dataset.hpp"
#include "tensorslice/decompose.hpp"
#include "tensorslice/tensor.hpp"

namespace tslice {

struct Dense {
  Tensor w;  // [out, in]
  std::optional<Tensor> b;
};

struct Conv2d {
  Tensor k;  // [out_ch, in_ch, kh, kw]
  std::optional<Tensor> b;
  ConvGeometry geometry;
};

struct Relu {};
struct Flatten {};

struct MpoDense {
  MpoLayer mpo;
};

struct TuckerConv2d {
  TuckerConv tucker;
  ConvGeometry geometry;
};

using Layer = std::variant<Dense, Conv2d, Relu, Flatten, MpoDense, TuckerConv2d>;

std::string layer_kind(const Layer& layer);
bool is_tensorized(const Layer& layer);
bool is_tensorizable(const Layer& layer);  // Dense or Conv2d
std::size_t param_count(const Layer& layer);

// Trainable tensors of a layer in a fixed order, with stable short names
// ("w", "b", "k", "core0", "factor_out", ...).
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Layer& layer);
std::vector<std::pair<std::string, Tensor*>> named_parameters(Layer& layer);

// Per-sample output shape; throws ShapeError naming the layer index.
Shape output_shape(const Layer& layer, const Shape& input, std::size_t index);

// Batched forward of one layer (x carries a leading batch axis).
Tensor layer_forward(const Layer& layer, const Tensor& x);

struct Slice {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - start; }
  bool contains(std::size_t layer) const { return layer >= start && layer < end; }
  bool operator==(const Slice&) const = default;
};

// Sequential network. Layers are immutable and shared between networks
// derived from one another; shapes are checked when the network is built.
class Network {
 public:
  using LayerPtr = std::shared_ptr<const Layer>;

  Network() = default;
  Network(Shape input_shape, std::vector<Layer> layers);
  Network(Shape input_shape, std::vector<LayerPtr> layers);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return shapes_.back(); }
  // Per-sample shape entering layer i (i == size() gives the output shape).
  const Shape& shape_at(std::size_t i) const { return shapes_.at(i); }
  std::size_t size() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  const LayerPtr& layer_ptr(std::size_t i) const { return layers_.at(i); }
  const std::vector<LayerPtr>& layers() const { return layers_; }
  Slice full() const { return {0, layers_.size()}; }

  std::size_t param_count() const;

 private:
  Shape input_shape_;
  std::vector<LayerPtr> layers_;
  std::vector<Shape> shapes_;
};

Tensor forward(const Network& net, const Tensor& x);
Tensor forward_range(const Network& net, const Slice& slice, const Tensor& x);

// Slices between consecutive cut indices; cuts strictly increasing in (0, L).
std::vector<Slice> partition(const Network& net, const std::vector<std::size_t>& cuts);
// L / layers_per_slice slices of equal length; requires divisibility.
std::vector<Slice> uniform_partition(const Network& net, std::size_t layers_per_slice);

// Replace a Dense by an MpoDense (decomposing wᵀ) or a Conv2d by a
// TuckerConv2d, as the plan entry says.
Layer tensorize_layer(const Layer& layer, const LayerPlan& entry, std::size_t index);
Network tensorize_slice(const Network& net, const Slice& slice, const CompressionPlan& plan);
CompressionPlan restrict_plan(const CompressionPlan& plan, const Slice& slice);
Network replace_slice(const Network& net, const Slice& slice, std::vector<Network::LayerPtr> layers);
Network replace_slice(const Network& net, const Slice& slice, std::vector<Layer> layers);

// (P_orig - P_comp) / P_orig over every parameter of both networks.
double compression_rate(const Network& original, const Network& compressed);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;  // softmax cross-entropy
  std::optional<double> top5;
  std::vector<int> predictions;
};

EvalResult evaluate(const Network& net, const Dataset& data, std::size_t batch_size = 256);

// Mean softmax cross-entropy with log-sum-exp stabilization; optionally writes
// d(loss)/d(logits) into grad.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

// Model directory layout:
//   <dir>/manifest.json          format tag, version, input shape, layer list
//   <dir>/params/LLL_<name>.bin  one tensor blob per parameter
inline constexpr int kModelFormatVersion = 1;
void save(const Network& net, const std::filesystem::path& dir);
Network load(const std::filesystem::path& dir);

// Content hash over the manifest and every parameter blob.
std::string network_checksum(const Network& net);

}  // namespace tslice
