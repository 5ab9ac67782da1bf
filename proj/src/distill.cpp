#include "tensorslice/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"
#include "tensorslice/error.hpp"
#include "tensorslice/hash.hpp"
#include "tensorslice/tensor_io.hpp"

namespace tslice {

std::vector<Slice> activation_partition(const Network& net) {
  std::vector<std::size_t> cuts;
  for (std::size_t i = 0; i + 1 < net.size(); ++i)
    if (std::holds_alternative<Relu>(net.layer(i))) cuts.push_back(i + 1);
  return partition(net, cuts);
}

std::vector<std::size_t> sample_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  order.resize(std::min(n, keep));
  return order;
}

namespace {

void append_rows(std::vector<double>& dst, const Tensor& t) { dst.insert(dst.end(), t.vec().begin(), t.vec().end()); }

Tensor stack(std::vector<double> data, std::size_t rows, const Shape& sample) {
  Shape s{rows};
  s.insert(s.end(), sample.begin(), sample.end());
  return Tensor(std::move(s), std::move(data));
}

}  // namespace

std::vector<FeatureCache> capture_features(const Network& net, const Dataset& data, const std::vector<Slice>& slices,
                                           double fraction, std::uint64_t seed) {
  data.validate();
  if (data.sample_shape() != net.input_shape())
    throw ShapeError("dataset samples " + shape_string(data.sample_shape()) + " do not match network input " +
                     shape_string(net.input_shape()));
  for (const auto& s : slices)
    if (s.start >= s.end || s.end > net.size()) throw InvalidArgument("capture: slice out of range");

  const std::string checksum = network_checksum(net);
  const auto indices = sample_subset(data.size(), fraction, seed);

  std::map<std::size_t, std::vector<double>> taps;  // boundary index -> activations
  for (const auto& s : slices) {
    taps[s.start];
    taps[s.end];
  }
  const std::size_t last = taps.rbegin()->first;

  constexpr std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
    std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                 indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), begin + chunk)));
    Tensor h = gather_rows(data.inputs, idx);
    if (taps.count(0)) append_rows(taps[0], h);
    for (std::size_t l = 0; l < last; ++l) {
      h = layer_forward(net.layer(l), h);
      if (auto it = taps.find(l + 1); it != taps.end()) append_rows(it->second, h);
    }
  }

  std::vector<FeatureCache> out;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const Slice& s = slices[i];
    FeatureCache c;
    c.slice_index = i;
    c.slice = s;
    c.inputs = stack(taps[s.start], indices.size(), net.shape_at(s.start));
    c.outputs = stack(taps[s.end], indices.size(), net.shape_at(s.end));
    c.sample_indices = indices;
    c.fraction = fraction;
    c.seed = seed;
    c.model_checksum = checksum;
    out.push_back(std::move(c));
  }
  return out;
}

std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& checksum, std::size_t slice) {
  return root / checksum / ("slice-" + std::to_string(slice));
}

void save_cache(const FeatureCache& c, const std::filesystem::path& root) {
  const auto dir = cache_path(root, c.model_checksum, c.slice_index);
  std::filesystem::create_directories(dir);
  save_tensor(dir / "inputs.bin", c.inputs);
  save_tensor(dir / "outputs.bin", c.outputs);
  nlohmann::json meta = {{"slice_index", c.slice_index},
                         {"slice", {c.slice.start, c.slice.end}},
                         {"sample_indices", c.sample_indices},
                         {"fraction", c.fraction},
                         {"seed", c.seed},
                         {"model_checksum", c.model_checksum}};
  std::ofstream out(dir / "meta");
  if (!out) throw IoError("cannot write " + (dir / "meta").string());
  out << meta.dump(2) << "\n";
}

FeatureCache load_cache(const std::filesystem::path& root, const std::string& checksum, std::size_t slice) {
  const auto dir = cache_path(root, checksum, slice);
  std::ifstream in(dir / "meta");
  if (!in) throw IoError("no feature cache at " + dir.string());
  FeatureCache c;
  try {
    nlohmann::json meta;
    in >> meta;
    c.slice_index = meta.at("slice_index").get<std::size_t>();
    c.slice = {meta.at("slice").at(0).get<std::size_t>(), meta.at("slice").at(1).get<std::size_t>()};
    c.sample_indices = meta.at("sample_indices").get<std::vector<std::size_t>>();
    c.fraction = meta.at("fraction").get<double>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.model_checksum = meta.at("model_checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("feature cache meta: " + std::string(e.what()));
  }
  if (c.model_checksum != checksum)
    throw FormatError("feature cache at " + dir.string() + " was captured from model " + c.model_checksum);
  c.inputs = load_tensor(dir / "inputs.bin");
  c.outputs = load_tensor(dir / "outputs.bin");
  if (c.inputs.rank() == 0 || c.outputs.rank() == 0 || c.inputs.dim(0) != c.sample_count() ||
      c.outputs.dim(0) != c.sample_count())
    throw FormatError("feature cache at " + dir.string() + " has inconsistent row counts");
  return c;
}

namespace {

double slice_loss(const std::vector<Layer>& layers, const FeatureCache& cache) {
  Tensor h = cache.inputs;
  for (const Layer& l : layers) h = layer_forward(l, h);
  Tape tape;
  return tape.value(ad::mse_loss(tape, tape.constant(std::move(h)), cache.outputs))[0];
}

}  // namespace

SliceResult distill_slice(std::vector<Layer> layers, const FeatureCache& cache, const TrainConfig& config,
                          const std::string& model_checksum) {
  if (cache.model_checksum != model_checksum)
    throw InvalidArgument("feature cache for slice " + std::to_string(cache.slice_index) +
                          " was captured from a different model");
  if (layers.size() != cache.slice.size())
    throw ShapeError("slice " + std::to_string(cache.slice_index) + " expects " + std::to_string(cache.slice.size()) +
                     " layers, got " + std::to_string(layers.size()));
  TrainConfig c = config;
  c.loss = LossKind::mse;
  c.seed = mix_seed(config.seed, cache.slice_index);
  ParamSet params = collect_params(layers, cache.slice.start);
  SliceResult r;
  // A slice that already reproduces its features is left alone: Adam would
  // otherwise amplify rounding noise into steps of size lr.
  const double start_loss = slice_loss(layers, cache);
  if (start_loss < kConvergedLoss) {
    r.report.name = "slice-" + std::to_string(cache.slice_index);
    r.report.initial_loss = r.report.final_loss = start_loss;
    r.report.config = config;
    r.layers = std::move(layers);
    return r;
  }
  r.report = fit(layers, params, cache.inputs, {cache.outputs, {}}, c, "slice-" + std::to_string(cache.slice_index));
  r.report.config = config;
  r.layers = std::move(layers);
  return r;
}

LocalResult local_tensorize(const Network& net, const Dataset& train, const std::vector<Slice>& slices,
                            const CompressionPlan& plan, const TrainConfig& config, const LocalOptions& options) {
  config.validate();
  for (const auto& e : plan.layers) {
    bool covered = false;
    for (const auto& s : slices) covered |= s.contains(e.layer);
    if (!covered && e.method != PlanMethod::skip)
      throw InvalidArgument("plan entry for layer " + std::to_string(e.layer) + " is not inside any slice");
  }

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto sub = restrict_plan(plan, slices[i]);
    if (std::any_of(sub.layers.begin(), sub.layers.end(), [](const LayerPlan& e) { return e.method != PlanMethod::skip; }))
      active.push_back(i);
  }

  LocalResult result;
  result.network = net;
  if (active.empty()) return result;

  const std::string checksum = network_checksum(net);
  std::vector<FeatureCache> caches = capture_features(net, train, slices, config.data_fraction, config.seed);
  if (options.cache_root)
    for (std::size_t i : active) save_cache(caches[i], *options.cache_root);

  std::vector<SliceResult> healed(active.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t a = 0; a < active.size(); ++a) {
    jobs.push_back([&, a]() {
      const std::size_t i = active[a];
      const Slice& s = slices[i];
      Network tensorized = tensorize_slice(net, s, restrict_plan(plan, s));
      std::vector<Layer> layers;
      for (std::size_t l = s.start; l < s.end; ++l) layers.push_back(tensorized.layer(l));
      healed[a] = distill_slice(std::move(layers), caches[i], config, checksum);
    });
  }
  result.schedule = run_jobs_or_throw(jobs, options.workers);

  for (std::size_t a = 0; a < active.size(); ++a) {
    result.network = replace_slice(result.network, slices[active[a]], std::move(healed[a].layers));
    result.reports.push_back(std::move(healed[a].report));
  }
  return result;
}

Network global_finetune(const Network& net, const Dataset& train, const TrainConfig& config, TrainReport* report) {
  config.validate();
  std::vector<Layer> layers;
  for (const auto& p : net.layers()) layers.push_back(*p);
  ParamSet params = collect_params(layers, 0, [&](std::size_t, const Layer& l) {
    return config.train_all || is_tensorized(l);
  });
  Dataset data = config.data_fraction < 1.0 ? subset(train, sample_subset(train.size(), config.data_fraction, config.seed))
                                            : train;
  TrainConfig c = config;
  c.loss = LossKind::cross_entropy;
  TrainReport r = fit(layers, params, data.inputs, {std::nullopt, data.labels}, c, "global");
  r.config = config;
  if (report) *report = std::move(r);

  // Untrained layers keep sharing the original storage.
  std::vector<Network::LayerPtr> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool trained = config.train_all || is_tensorized(layers[i]);
    out.push_back(trained ? std::make_shared<const Layer>(std::move(layers[i])) : net.layer_ptr(i));
  }
  return Network(net.input_shape(), std::move(out));
}

HybridResult hybrid_local_global(const Network& net, const Dataset& train, const std::vector<Slice>& slices,
                                 const CompressionPlan& plan, const TrainConfig& local_config,
                                 const TrainConfig& global_config, const LocalOptions& options) {
  HybridResult r;
  r.local = local_tensorize(net, train, slices, plan, local_config, options);
  r.network = global_finetune(r.local.network, train, global_config, &r.global);
  return r;
}

}  // namespace tslice
