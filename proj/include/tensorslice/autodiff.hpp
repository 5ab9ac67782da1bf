#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensorslice/conv.hpp"
#include "tensorslice/model.hpp"
#include "tensorslice/tensor.hpp"

namespace tslice {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape. Every recorded op stores its output value and a closure
// that maps the output's adjoint onto its inputs' adjoints. A tape serves one
// forward/backward pass and is owned by a single training job.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Var constant(Tensor value);
  Var leaf(Tensor value);  // differentiable input
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Adjoint after backward(); zero tensor of the value's shape if unreached.
  Tensor grad(Var v) const;

  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);

  // Propagates output_grad (shape of output's value) back through the tape.
  void backward(Var output, const Tensor& output_grad);
  void backward(Var scalar_output) { backward(scalar_output, Tensor::scalar(1.0)); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor> grad;
  };
  std::vector<Node> nodes_;
};

namespace ad {

Var reshape(Tape& t, Var x, Shape shape);
Var permute(Tape& t, Var x, std::vector<std::size_t> axes);
Var contract(Tape& t, Var a, Var b, std::vector<AxisPair> pairs);
// Adds b[c] along axis 1 of x (works for [B, n] and [B, C, H, W]).
Var add_bias(Tape& t, Var x, Var b);
Var relu(Tape& t, Var x);
Var conv2d(Tape& t, Var x, Var kernel, ConvGeometry g);
// ||pred - target||_F^2 / batch, target held constant.
Var mse_loss(Tape& t, Var pred, const Tensor& target);
Var cross_entropy_loss(Tape& t, Var logits, std::vector<int> labels);

}  // namespace ad

// Named references to trainable tensors owned by layers the caller keeps alive.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;

  void add(std::string name, Tensor* t);
  std::size_t size() const { return tensors.size(); }
  std::size_t element_count() const;
  std::vector<Tensor> snapshot() const;
};

// Parameters of layers[i] for every i where `trainable(i, layer)` holds; names
// are "layerNNN.<param>" with NNN = index_offset + i.
ParamSet collect_params(std::vector<Layer>& layers, std::size_t index_offset,
                        const std::function<bool(std::size_t, const Layer&)>& trainable);
ParamSet collect_params(std::vector<Layer>& layers, std::size_t index_offset = 0);

// Records the forward pass of `layers` on the tape. Tensors in `params` become
// differentiable leaves; `param_vars` receives them in ParamSet order.
Var forward_on_tape(Tape& tape, const std::vector<Layer>& layers, Var x, const ParamSet& params,
                    std::vector<Var>* param_vars);

// Adjoints of `output` for each parameter leaf, in ParamSet order.
std::vector<Tensor> backward(Tape& tape, Var output, const Tensor& output_grad, const std::vector<Var>& param_vars);

}  // namespace tslice
