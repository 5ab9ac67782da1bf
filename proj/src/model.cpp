#include "tensorslice/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "tensorslice/error.hpp"
#include "tensorslice/hash.hpp"
#include "tensorslice/tensor_io.hpp"

namespace tslice {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string layer_kind(const Layer& layer) {
  return std::visit(overloaded{[](const Dense&) { return "dense"; }, [](const Conv2d&) { return "conv2d"; },
                               [](const Relu&) { return "relu"; }, [](const Flatten&) { return "flatten"; },
                               [](const MpoDense&) { return "mpo_dense"; },
                               [](const TuckerConv2d&) { return "tucker_conv2d"; }},
                    layer);
}

bool is_tensorized(const Layer& layer) {
  return std::holds_alternative<MpoDense>(layer) || std::holds_alternative<TuckerConv2d>(layer);
}

bool is_tensorizable(const Layer& layer) {
  return std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2d>(layer);
}

namespace {

template <typename LayerT, typename Out>
void collect(LayerT& layer, Out& out) {
  auto add_bias = [&](auto& b) {
    if (b) out.emplace_back("b", &*b);
  };
  std::visit(overloaded{[&](auto& l) {
                          using L = std::decay_t<decltype(l)>;
                          if constexpr (std::is_same_v<L, Dense>) {
                            out.emplace_back("w", &l.w);
                            add_bias(l.b);
                          } else if constexpr (std::is_same_v<L, Conv2d>) {
                            out.emplace_back("k", &l.k);
                            add_bias(l.b);
                          } else if constexpr (std::is_same_v<L, MpoDense>) {
                            for (std::size_t n = 0; n < l.mpo.cores.size(); ++n)
                              out.emplace_back("core" + std::to_string(n), &l.mpo.cores[n]);
                            add_bias(l.mpo.bias);
                          } else if constexpr (std::is_same_v<L, TuckerConv2d>) {
                            out.emplace_back("core", &l.tucker.core);
                            out.emplace_back("factor_out", &l.tucker.factor_out);
                            out.emplace_back("factor_in", &l.tucker.factor_in);
                            add_bias(l.tucker.bias);
                          }
                        }},
             layer);
}

}  // namespace

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Layer& layer) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect(layer, out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_parameters(Layer& layer) {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect(layer, out);
  return out;
}

std::size_t param_count(const Layer& layer) {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters(layer)) n += t->size();
  return n;
}

static Shape conv_output(const Shape& in, const Shape& kernel, const ConvGeometry& g, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + ": ";
  if (in.size() != 3) throw ShapeError(where + "convolution expects a [C,H,W] input, got " + shape_string(in));
  if (in[0] != kernel[1])
    throw ShapeError(where + "input has " + std::to_string(in[0]) + " channels, kernel expects " +
                     std::to_string(kernel[1]));
  try {
    return {kernel[0], conv_out_extent(in[1], kernel[2], g), conv_out_extent(in[2], kernel[3], g)};
  } catch (const ShapeError& e) {
    throw ShapeError(where + e.what());
  }
}

static void check_vector_input(const Shape& in, std::size_t features, std::size_t index) {
  if (in.size() != 1 || in[0] != features)
    throw ShapeError("layer " + std::to_string(index) + ": expected input [" + std::to_string(features) + "], got " +
                     shape_string(in));
}

Shape output_shape(const Layer& layer, const Shape& in, std::size_t index) {
  return std::visit(
      overloaded{[&](const Dense& l) -> Shape {
                   if (l.w.rank() != 2) throw ShapeError("layer " + std::to_string(index) + ": dense weight not a matrix");
                   if (l.b && l.b->size() != l.w.dim(0))
                     throw ShapeError("layer " + std::to_string(index) + ": dense bias length mismatch");
                   check_vector_input(in, l.w.dim(1), index);
                   return {l.w.dim(0)};
                 },
                 [&](const Conv2d& l) -> Shape {
                   if (l.k.rank() != 4) throw ShapeError("layer " + std::to_string(index) + ": kernel not rank 4");
                   if (l.b && l.b->size() != l.k.dim(0))
                     throw ShapeError("layer " + std::to_string(index) + ": conv bias length mismatch");
                   return conv_output(in, l.k.shape(), l.geometry, index);
                 },
                 [&](const Relu&) -> Shape { return in; },
                 [&](const Flatten&) -> Shape { return {shape_size(in)}; },
                 [&](const MpoDense& l) -> Shape {
                   l.mpo.validate();
                   check_vector_input(in, l.mpo.in_features(), index);
                   return {l.mpo.out_features()};
                 },
                 [&](const TuckerConv2d& l) -> Shape {
                   l.tucker.validate();
                   return conv_output(in, l.tucker.kernel_shape(), l.geometry, index);
                 }},
      layer);
}

Tensor layer_forward(const Layer& layer, const Tensor& x) {
  return std::visit(overloaded{[&](const Dense& l) {
                                 Tensor y = contract(x, l.w, {{1, 1}});
                                 if (l.b) {
                                   const std::size_t out = l.w.dim(0);
                                   for (std::size_t r = 0; r < y.dim(0); ++r)
                                     for (std::size_t c = 0; c < out; ++c) y(r, c) += (*l.b)[c];
                                 }
                                 return y;
                               },
                               [&](const Conv2d& l) { return conv2d_forward(l.k, l.b, x, l.geometry); },
                               [&](const Relu&) {
                                 Tensor y = x;
                                 for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
                                 return y;
                               },
                               [&](const Flatten&) { return reshape(x, {x.dim(0), x.size() / x.dim(0)}); },
                               [&](const MpoDense& l) { return mpo_forward(l.mpo, x); },
                               [&](const TuckerConv2d& l) {
                                 return conv2d_forward(tucker_to_kernel(l.tucker), l.tucker.bias, x, l.geometry);
                               }},
                    layer);
}

Network::Network(Shape input_shape, std::vector<Layer> layers) : input_shape_(std::move(input_shape)) {
  layers_.reserve(layers.size());
  for (auto& l : layers) layers_.push_back(std::make_shared<const Layer>(std::move(l)));
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) shapes_.push_back(tslice::output_shape(*layers_[i], shapes_.back(), i));
}

Network::Network(Shape input_shape, std::vector<LayerPtr> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i]) throw InvalidArgument("null layer at index " + std::to_string(i));
    shapes_.push_back(tslice::output_shape(*layers_[i], shapes_.back(), i));
  }
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += tslice::param_count(*l);
  return n;
}

Tensor forward_range(const Network& net, const Slice& slice, const Tensor& x) {
  if (slice.start > slice.end || slice.end > net.size()) throw InvalidArgument("slice out of range");
  const Shape& expected = net.shape_at(slice.start);
  if (x.rank() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), x.shape().begin() + 1))
    throw ShapeError("layer " + std::to_string(slice.start) + ": input " + shape_string(x.shape()) +
                     " does not match per-sample shape " + shape_string(expected));
  Tensor h = x;
  for (std::size_t i = slice.start; i < slice.end; ++i) h = layer_forward(net.layer(i), h);
  return h;
}

Tensor forward(const Network& net, const Tensor& x) { return forward_range(net, net.full(), x); }

std::vector<Slice> partition(const Network& net, const std::vector<std::size_t>& cuts) {
  const std::size_t total = net.size();
  if (total == 0) throw InvalidArgument("cannot partition an empty network");
  std::vector<Slice> slices;
  std::size_t start = 0;
  for (auto c : cuts) {
    if (c <= start || c >= total)
      throw InvalidArgument("cut indices must be strictly increasing within (0, " + std::to_string(total) + ")");
    slices.push_back({start, c});
    start = c;
  }
  slices.push_back({start, total});
  return slices;
}

std::vector<Slice> uniform_partition(const Network& net, std::size_t layers_per_slice) {
  if (layers_per_slice == 0 || net.size() % layers_per_slice != 0)
    throw InvalidArgument("network of " + std::to_string(net.size()) + " layers is not divisible into slices of " +
                          std::to_string(layers_per_slice));
  std::vector<std::size_t> cuts;
  for (std::size_t c = layers_per_slice; c < net.size(); c += layers_per_slice) cuts.push_back(c);
  return partition(net, cuts);
}

Layer tensorize_layer(const Layer& layer, const LayerPlan& entry, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + ": ";
  switch (entry.method) {
    case PlanMethod::skip:
      return layer;
    case PlanMethod::mpo: {
      const auto* dense = std::get_if<Dense>(&layer);
      if (!dense) throw InvalidArgument(where + "mpo plan requires a dense layer, found " + layer_kind(layer));
      MpoDense out{mpo_decompose(transpose(dense->w), entry.in_dims, entry.out_dims, entry.bonds)};
      out.mpo.bias = dense->b;
      return out;
    }
    case PlanMethod::tucker: {
      const auto* conv = std::get_if<Conv2d>(&layer);
      if (!conv) throw InvalidArgument(where + "tucker plan requires a conv2d layer, found " + layer_kind(layer));
      TuckerConv2d out{tucker_decompose(conv->k, entry.rank_out, entry.rank_in), conv->geometry};
      out.tucker.bias = conv->b;
      return out;
    }
  }
  return layer;
}

CompressionPlan restrict_plan(const CompressionPlan& plan, const Slice& slice) {
  CompressionPlan out;
  out.target_cr = plan.target_cr;
  for (const auto& e : plan.layers)
    if (slice.contains(e.layer)) out.layers.push_back(e);
  return out;
}

Network tensorize_slice(const Network& net, const Slice& slice, const CompressionPlan& plan) {
  if (slice.start >= slice.end || slice.end > net.size()) throw InvalidArgument("slice out of range");
  for (const auto& e : plan.layers)
    if (!slice.contains(e.layer))
      throw InvalidArgument("plan entry for layer " + std::to_string(e.layer) + " lies outside slice [" +
                            std::to_string(slice.start) + ", " + std::to_string(slice.end) + ")");
  std::vector<Network::LayerPtr> layers = net.layers();
  for (const auto& e : plan.layers) {
    if (e.method == PlanMethod::skip) continue;
    layers[e.layer] = std::make_shared<const Layer>(tensorize_layer(net.layer(e.layer), e, e.layer));
  }
  return Network(net.input_shape(), std::move(layers));
}

Network replace_slice(const Network& net, const Slice& slice, std::vector<Network::LayerPtr> layers) {
  if (slice.start > slice.end || slice.end > net.size()) throw InvalidArgument("slice out of range");
  std::vector<Network::LayerPtr> out(net.layers().begin(), net.layers().begin() + static_cast<std::ptrdiff_t>(slice.start));
  out.insert(out.end(), layers.begin(), layers.end());
  out.insert(out.end(), net.layers().begin() + static_cast<std::ptrdiff_t>(slice.end), net.layers().end());
  return Network(net.input_shape(), std::move(out));
}

Network replace_slice(const Network& net, const Slice& slice, std::vector<Layer> layers) {
  std::vector<Network::LayerPtr> ptrs;
  for (auto& l : layers) ptrs.push_back(std::make_shared<const Layer>(std::move(l)));
  return replace_slice(net, slice, std::move(ptrs));
}

double compression_rate(const Network& original, const Network& compressed) {
  const auto p0 = static_cast<double>(original.param_count());
  if (p0 == 0.0) throw InvalidArgument("original network has no parameters");
  return (p0 - static_cast<double>(compressed.param_count())) / p0;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
  if (logits.rank() != 2) throw ShapeError("cross-entropy expects [batch, classes] logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("cross-entropy: label count does not match batch");
  if (grad) *grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) throw DataError("label out of range");
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits(r, c) - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits(r, static_cast<std::size_t>(label));
    if (grad) {
      for (std::size_t c = 0; c < classes; ++c) (*grad)(r, c) = std::exp(logits(r, c) - lse) / static_cast<double>(batch);
      (*grad)(r, static_cast<std::size_t>(label)) -= 1.0 / static_cast<double>(batch);
    }
  }
  return total / static_cast<double>(batch);
}

EvalResult evaluate(const Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  data.validate();
  EvalResult r;
  std::size_t correct = 0, top5 = 0;
  double loss = 0.0;
  const bool want_top5 = data.num_classes >= 5;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Tensor logits = forward(net, gather_rows(data.inputs, idx));
    if (logits.rank() != 2) throw ShapeError("network output is not [batch, classes]");
    const std::span<const int> labels(data.labels.data() + start, end - start);
    loss += softmax_cross_entropy(logits, labels) * static_cast<double>(end - start);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits(b, c) > logits(b, arg)) arg = c;
      r.predictions.push_back(static_cast<int>(arg));
      if (static_cast<int>(arg) == labels[b]) ++correct;
      if (want_top5) {
        const double own = logits(b, static_cast<std::size_t>(labels[b]));
        std::size_t above = 0;
        for (std::size_t c = 0; c < classes; ++c) above += logits(b, c) > own;
        if (above < 5) ++top5;
      }
    }
  }
  const auto n = static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.mean_loss = loss / n;
  if (want_top5) r.top5 = static_cast<double>(top5) / n;
  return r;
}

// ---- serialization ----

namespace {

struct ModelFiles {
  std::string manifest;
  std::vector<std::pair<std::string, const Tensor*>> blobs;  // relative path -> tensor
};

nlohmann::ordered_json geometry_json(const ConvGeometry& g) {
  return {{"stride", g.stride}, {"padding", g.padding}};
}

ModelFiles model_files(const Network& net) {
  nlohmann::ordered_json doc;
  doc["format"] = "tensorslice-model";
  doc["version"] = kModelFormatVersion;
  doc["input_shape"] = net.input_shape();
  doc["layers"] = nlohmann::ordered_json::array();
  ModelFiles files;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& layer = net.layer(i);
    nlohmann::ordered_json j;
    j["kind"] = layer_kind(layer);
    if (const auto* c = std::get_if<Conv2d>(&layer)) j["geometry"] = geometry_json(c->geometry);
    if (const auto* t = std::get_if<TuckerConv2d>(&layer)) j["geometry"] = geometry_json(t->geometry);
    if (const auto* m = std::get_if<MpoDense>(&layer)) {
      j["in_dims"] = m->mpo.in_dims;
      j["out_dims"] = m->mpo.out_dims;
    }
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    char prefix[8];
    std::snprintf(prefix, sizeof prefix, "%03zu", i);
    for (const auto& [name, tensor] : named_parameters(layer)) {
      const std::string rel = "params/" + std::string(prefix) + "_" + name + ".bin";
      params[name] = rel;
      files.blobs.emplace_back(rel, tensor);
    }
    j["params"] = std::move(params);
    doc["layers"].push_back(std::move(j));
  }
  files.manifest = doc.dump(2) + "\n";
  return files;
}

ConvGeometry geometry_from(const nlohmann::json& j) {
  return {j.at("stride").get<std::size_t>(), j.at("padding").get<std::size_t>()};
}

}  // namespace

void save(const Network& net, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const ModelFiles files = model_files(net);
  fs::create_directories(dir / "params");
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << files.manifest;
  }
  for (const auto& [rel, tensor] : files.blobs) save_tensor(dir / rel, *tensor);
}

Network load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("missing manifest.json in " + dir.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("model manifest is not valid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "tensorslice-model") throw FormatError("not a tensorslice model manifest");
  const int version = doc.value("version", -1);
  if (version != kModelFormatVersion)
    throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kModelFormatVersion) + ")");
  try {
    const Shape input = doc.at("input_shape").get<Shape>();
    std::vector<Layer> layers;
    for (const auto& j : doc.at("layers")) {
      const std::string kind = j.at("kind").get<std::string>();
      const auto& params = j.at("params");
      auto param = [&](const char* name) { return load_tensor(dir / params.at(name).get<std::string>()); };
      auto opt_param = [&](const char* name) -> std::optional<Tensor> {
        if (!params.contains(name)) return std::nullopt;
        return param(name);
      };
      if (kind == "dense") {
        layers.emplace_back(Dense{param("w"), opt_param("b")});
      } else if (kind == "conv2d") {
        layers.emplace_back(Conv2d{param("k"), opt_param("b"), geometry_from(j.at("geometry"))});
      } else if (kind == "relu") {
        layers.emplace_back(Relu{});
      } else if (kind == "flatten") {
        layers.emplace_back(Flatten{});
      } else if (kind == "mpo_dense") {
        MpoDense m;
        m.mpo.in_dims = j.at("in_dims").get<Dims>();
        m.mpo.out_dims = j.at("out_dims").get<Dims>();
        for (std::size_t n = 0; n < m.mpo.in_dims.size(); ++n)
          m.mpo.cores.push_back(param(("core" + std::to_string(n)).c_str()));
        m.mpo.bias = opt_param("b");
        layers.emplace_back(std::move(m));
      } else if (kind == "tucker_conv2d") {
        TuckerConv2d t{{param("core"), param("factor_out"), param("factor_in"), opt_param("b")},
                       geometry_from(j.at("geometry"))};
        layers.emplace_back(std::move(t));
      } else {
        throw FormatError("unknown layer kind '" + kind + "'");
      }
    }
    return Network(input, std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model manifest: ") + e.what());
  }
}

std::string network_checksum(const Network& net) {
  const ModelFiles files = model_files(net);
  std::map<std::string, std::string> hashes;
  hashes["manifest.json"] = git_blob_hash(files.manifest);
  for (const auto& [rel, tensor] : files.blobs) hashes[rel] = git_blob_hash(tensor_bytes(*tensor));
  std::string listing;
  for (const auto& [rel, h] : hashes) listing += rel + ' ' + h + '\n';
  return git_blob_hash(listing);
}

}  // namespace tslice
