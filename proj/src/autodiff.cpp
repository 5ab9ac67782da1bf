#include "tensorslice/autodiff.hpp"

#include <algorithm>
#include <cstdio>

#include "tensorslice/error.hpp"

namespace tslice {

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), false, nullptr, std::nullopt});
  return {nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back({std::move(value), true, nullptr, std::nullopt});
  return {nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (Var v : inputs) needs |= nodes_.at(v.id).requires_grad;
  nodes_.push_back({std::move(value), needs, needs ? std::move(backward) : nullptr, std::nullopt});
  return {nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad ? *n.grad : Tensor(n.value.shape());
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw ShapeError("adjoint shape " + shape_string(g.shape()) + " does not match value " +
                     shape_string(n.value.shape()));
  if (n.grad)
    *n.grad += g;
  else
    n.grad = g;
}

void Tape::accumulate(Var v, Tensor&& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw ShapeError("adjoint shape " + shape_string(g.shape()) + " does not match value " +
                     shape_string(n.value.shape()));
  if (n.grad)
    *n.grad += g;
  else
    n.grad = std::move(g);
}

void Tape::backward(Var output, const Tensor& output_grad) {
  if (output.id >= nodes_.size()) throw InvalidArgument("backward: variable not on this tape");
  if (output_grad.shape() != nodes_[output.id].value.shape())
    throw ShapeError("backward: output gradient " + shape_string(output_grad.shape()) + " does not match output " +
                     shape_string(nodes_[output.id].value.shape()));
  for (auto& n : nodes_) n.grad.reset();
  accumulate(output, output_grad);
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad || !n.backward) continue;
    const Tensor g = *n.grad;  // copy: the closure may append to other nodes' grads
    n.backward(*this, g);
  }
}

namespace ad {

Var reshape(Tape& t, Var x, Shape shape) {
  const Shape original = t.value(x).shape();
  return t.record(tslice::reshape(t.value(x), std::move(shape)), {x},
                  [x, original](Tape& tp, const Tensor& g) { tp.accumulate(x, tslice::reshape(g, original)); });
}

Var permute(Tape& t, Var x, std::vector<std::size_t> axes) {
  Tensor out = tslice::permute(t.value(x), axes);
  return t.record(std::move(out), {x}, [x, inv = inverse_permutation(axes)](Tape& tp, const Tensor& g) {
    tp.accumulate(x, tslice::permute(g, inv));
  });
}

Var contract(Tape& t, Var a, Var b, std::vector<AxisPair> pairs) {
  Tensor out = tslice::contract(t.value(a), t.value(b), pairs);
  const std::size_t ra = t.value(a).rank(), rb = t.value(b).rank();
  return t.record(std::move(out), {a, b}, [a, b, ra, rb, pairs](Tape& tp, const Tensor& g) {
    std::vector<bool> paired_a(ra, false), paired_b(rb, false);
    for (auto [pa, pb] : pairs) paired_a[pa] = paired_b[pb] = true;
    std::vector<std::size_t> free_a, free_b;
    for (std::size_t k = 0; k < ra; ++k)
      if (!paired_a[k]) free_a.push_back(k);
    for (std::size_t k = 0; k < rb; ++k)
      if (!paired_b[k]) free_b.push_back(k);

    if (tp.requires_grad(a)) {
      // dA = g · B over B's free axes; result axes: free_a, then B's paired axes in B order.
      std::vector<AxisPair> p;
      for (std::size_t k = 0; k < free_b.size(); ++k) p.emplace_back(free_a.size() + k, free_b[k]);
      Tensor r = tslice::contract(g, tp.value(b), p);
      std::vector<std::size_t> order = free_a;
      std::vector<AxisPair> by_b = pairs;
      std::sort(by_b.begin(), by_b.end(), [](auto x, auto y) { return x.second < y.second; });
      for (auto [pa, pb] : by_b) order.push_back(pa);
      tp.accumulate(a, tslice::permute(r, inverse_permutation(order)));
    }
    if (tp.requires_grad(b)) {
      // dB = A · g over A's free axes; result axes: A's paired axes (mapped to B) in A order, then free_b.
      std::vector<AxisPair> p;
      for (std::size_t k = 0; k < free_a.size(); ++k) p.emplace_back(free_a[k], k);
      Tensor r = tslice::contract(tp.value(a), g, p);
      std::vector<AxisPair> by_a = pairs;
      std::sort(by_a.begin(), by_a.end());
      std::vector<std::size_t> order;
      for (auto [pa, pb] : by_a) order.push_back(pb);
      order.insert(order.end(), free_b.begin(), free_b.end());
      tp.accumulate(b, tslice::permute(r, inverse_permutation(order)));
    }
  });
}

Var add_bias(Tape& t, Var x, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  if (xv.rank() < 2 || bv.rank() != 1 || bv.size() != xv.dim(1))
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " incompatible with " + shape_string(xv.shape()));
  const std::size_t channels = xv.dim(1);
  const std::size_t inner = xv.size() / (xv.dim(0) * channels);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[(i / inner) % channels];
  return t.record(std::move(out), {x, b}, [x, b, channels, inner](Tape& tp, const Tensor& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(b)) {
      Tensor gb({channels});
      for (std::size_t i = 0; i < g.size(); ++i) gb[(i / inner) % channels] += g[i];
      tp.accumulate(b, std::move(gb));
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor out = t.value(x);
  for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor& in = tp.value(x);
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(in[i] > 0.0)) dx[i] = 0.0;
    tp.accumulate(x, std::move(dx));
  });
}

Var conv2d(Tape& t, Var x, Var kernel, ConvGeometry geo) {
  Tensor out = conv2d_forward(t.value(kernel), std::nullopt, t.value(x), geo);
  return t.record(std::move(out), {x, kernel}, [x, kernel, geo](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, conv2d_grad_input(tp.value(kernel), g, tp.value(x).shape(), geo));
    if (tp.requires_grad(kernel))
      tp.accumulate(kernel, conv2d_grad_kernel(tp.value(x), g, tp.value(kernel).shape(), geo));
  });
}

Var mse_loss(Tape& t, Var pred, const Tensor& target) {
  const Tensor& p = t.value(pred);
  if (p.shape() != target.shape())
    throw ShapeError("mse_loss: prediction " + shape_string(p.shape()) + " vs target " + shape_string(target.shape()));
  if (p.rank() == 0) throw ShapeError("mse_loss needs a batch axis");
  const double batch = static_cast<double>(p.dim(0));
  Tensor diff = p - target;
  const double loss = diff.squared_norm() / batch;
  return t.record(Tensor::scalar(loss), {pred}, [pred, diff = std::move(diff), batch](Tape& tp, const Tensor& g) {
    tp.accumulate(pred, diff * (2.0 * g[0] / batch));
  });
}

Var cross_entropy_loss(Tape& t, Var logits, std::vector<int> labels) {
  Tensor dlogits;
  const double loss = softmax_cross_entropy(t.value(logits), labels, &dlogits);
  return t.record(Tensor::scalar(loss), {logits}, [logits, d = std::move(dlogits)](Tape& tp, const Tensor& g) {
    tp.accumulate(logits, d * g[0]);
  });
}

}  // namespace ad

void ParamSet::add(std::string name, Tensor* t) {
  if (std::find(names.begin(), names.end(), name) != names.end())
    throw InvalidArgument("duplicate parameter name " + name);
  names.push_back(std::move(name));
  tensors.push_back(t);
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors) n += t->size();
  return n;
}

std::vector<Tensor> ParamSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(tensors.size());
  for (const auto* t : tensors) out.push_back(*t);
  return out;
}

ParamSet collect_params(std::vector<Layer>& layers, std::size_t index_offset,
                        const std::function<bool(std::size_t, const Layer&)>& trainable) {
  ParamSet ps;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!trainable(i, layers[i])) continue;
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "layer%03zu.", index_offset + i);
    for (auto& [name, tensor] : named_parameters(layers[i])) ps.add(prefix + name, tensor);
  }
  return ps;
}

ParamSet collect_params(std::vector<Layer>& layers, std::size_t index_offset) {
  return collect_params(layers, index_offset, [](std::size_t, const Layer&) { return true; });
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Binder {
  Tape& tape;
  std::unordered_map<const Tensor*, Var> leaves;

  Var operator()(const Tensor& p) {
    auto it = leaves.find(&p);
    return it != leaves.end() ? it->second : tape.constant(p);
  }
};

Var bias_if(Tape& t, Binder& bind, Var y, const std::optional<Tensor>& b) {
  return b ? ad::add_bias(t, y, bind(*b)) : y;
}

Var mpo_on_tape(Tape& t, Binder& bind, const MpoLayer& m, Var x) {
  const std::size_t batch = t.value(x).dim(0);
  const std::size_t n = m.num_cores();
  std::size_t done_out = 1;
  std::size_t rest_in = m.in_features() / m.in_dims[0];
  Var state = ad::reshape(t, x, {batch, 1, 1, m.in_dims[0], rest_in});
  for (std::size_t k = 0; k < n; ++k) {
    Var next = ad::contract(t, state, bind(m.cores[k]), {{2, 0}, {3, 1}});
    next = ad::permute(t, next, {0, 1, 3, 4, 2});
    done_out *= m.out_dims[k];
    if (k + 1 < n) {
      const std::size_t ik = m.in_dims[k + 1];
      rest_in /= ik;
      state = ad::reshape(t, next, {batch, done_out, m.cores[k].dim(3), ik, rest_in});
    } else {
      state = next;
    }
  }
  return bias_if(t, bind, ad::reshape(t, state, {batch, m.out_features()}), m.bias);
}

Var tucker_kernel_on_tape(Tape& t, Binder& bind, const TuckerConv& tc) {
  // core [r1,r2,h,w] x factor_out [s1,r1] -> [r2,h,w,s1] -> [s1,r2,h,w]
  Var k = ad::contract(t, bind(tc.core), bind(tc.factor_out), {{0, 1}});
  k = ad::permute(t, k, {3, 0, 1, 2});
  // x factor_in [s2,r2] over r2 -> [s1,h,w,s2] -> [s1,s2,h,w]
  k = ad::contract(t, k, bind(tc.factor_in), {{1, 1}});
  return ad::permute(t, k, {0, 3, 1, 2});
}

}  // namespace

Var forward_on_tape(Tape& tape, const std::vector<Layer>& layers, Var x, const ParamSet& params,
                    std::vector<Var>* param_vars) {
  Binder bind{tape, {}};
  std::vector<Var> vars;
  for (const Tensor* p : params.tensors) {
    Var v = tape.leaf(*p);
    bind.leaves.emplace(p, v);
    vars.push_back(v);
  }
  Var h = x;
  for (const Layer& layer : layers) {
    h = std::visit(overloaded{[&](const Dense& l) {
                                return bias_if(tape, bind, ad::contract(tape, h, bind(l.w), {{1, 1}}), l.b);
                              },
                              [&](const Conv2d& l) {
                                return bias_if(tape, bind, ad::conv2d(tape, h, bind(l.k), l.geometry), l.b);
                              },
                              [&](const Relu&) { return ad::relu(tape, h); },
                              [&](const Flatten&) {
                                const Tensor& v = tape.value(h);
                                return ad::reshape(tape, h, {v.dim(0), v.size() / v.dim(0)});
                              },
                              [&](const MpoDense& l) { return mpo_on_tape(tape, bind, l.mpo, h); },
                              [&](const TuckerConv2d& l) {
                                Var k = tucker_kernel_on_tape(tape, bind, l.tucker);
                                return bias_if(tape, bind, ad::conv2d(tape, h, k, l.geometry), l.tucker.bias);
                              }},
                   layer);
  }
  if (param_vars) *param_vars = std::move(vars);
  return h;
}

std::vector<Tensor> backward(Tape& tape, Var output, const Tensor& output_grad, const std::vector<Var>& param_vars) {
  tape.backward(output, output_grad);
  std::vector<Tensor> grads;
  grads.reserve(param_vars.size());
  for (Var v : param_vars) grads.push_back(tape.grad(v));
  return grads;
}

}  // namespace tslice
