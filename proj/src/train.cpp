#include "tensorslice/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "tensorslice/error.hpp"
#include "tensorslice/hash.hpp"
#include "tensorslice/tensor_io.hpp"

namespace tslice {

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "cross_entropy"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + s + "' (expected mse or cross_entropy)");
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (batch_size == 0) out.push_back("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    out.push_back("learning_rate must be a finite non-negative number");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) out.push_back("data_fraction must lie in (0, 1]");
  return out;
}

void TrainConfig::validate() const {
  auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid training config:";
  for (const auto& s : p) msg += "\n  " + s;
  throw ConfigError(msg);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"learning_rate", learning_rate}, {"epochs", epochs},
          {"seed", seed},             {"loss", to_string(loss)},        {"data_fraction", data_fraction},
          {"train_all", train_all}};
}

namespace {

// nlohmann converts -1 to a huge unsigned value without complaint.
std::uint64_t count_field(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(std::string(key) + " must be a non-negative integer, got " + v.dump());
  return v.get<std::uint64_t>();
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  try {
    if (j.contains("batch_size")) c.batch_size = count_field(j, "batch_size");
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("epochs")) c.epochs = count_field(j, "epochs");
    if (j.contains("seed")) c.seed = count_field(j, "seed");
    if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("data_fraction")) c.data_fraction = j.at("data_fraction").get<double>();
    if (j.contains("train_all")) c.train_all = j.at("train_all").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return c;
}

AdamState AdamState::for_params(const ParamSet& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const Tensor* p : params.tensors) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& s) {
  if (grads.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw InvalidArgument("adam_step: parameter, gradient and moment counts differ");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params.tensors[k];
    const Tensor& g = grads[k];
    if (g.shape() != p.shape() || s.m[k].shape() != p.shape())
      throw ShapeError("adam_step: shape mismatch for " + params.names[k]);
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m[k][i] = s.beta1 * s.m[k][i] + (1.0 - s.beta1) * g[i];
      s.v[k][i] = s.beta2 * s.v[k][i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mh = s.m[k][i] / c1;
      const double vh = s.v[k][i] / c2;
      p[i] -= s.learning_rate * mh / (std::sqrt(vh) + s.epsilon);
    }
  }
}

void save_adam(const AdamState& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = {{"learning_rate", s.learning_rate},
                      {"beta1", s.beta1},
                      {"beta2", s.beta2},
                      {"epsilon", s.epsilon},
                      {"step", s.step},
                      {"count", s.m.size()}};
  std::ofstream(dir / "adam.json") << j.dump(2) << "\n";
  for (std::size_t k = 0; k < s.m.size(); ++k) {
    save_tensor(dir / ("m" + std::to_string(k) + ".bin"), s.m[k]);
    save_tensor(dir / ("v" + std::to_string(k) + ".bin"), s.v[k]);
  }
}

AdamState load_adam(const std::filesystem::path& dir) {
  std::ifstream in(dir / "adam.json");
  if (!in) throw IoError("cannot open " + (dir / "adam.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adam.json: ") + e.what());
  }
  AdamState s;
  s.learning_rate = j.at("learning_rate").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<std::uint64_t>();
  const auto count = j.at("count").get<std::size_t>();
  for (std::size_t k = 0; k < count; ++k) {
    s.m.push_back(load_tensor(dir / ("m" + std::to_string(k) + ".bin")));
    s.v.push_back(load_tensor(dir / ("v" + std::to_string(k) + ".bin")));
  }
  return s;
}

std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, ParamSet& params, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: step h must be positive");
  std::vector<Tensor> grads;
  for (Tensor* p : params.tensors) {
    Tensor g(p->shape());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = (*p)[i];
      (*p)[i] = orig + h;
      const double up = f();
      (*p)[i] = orig - h;
      const double down = f();
      (*p)[i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

nlohmann::json TrainReport::summary() const {
  nlohmann::json j = {{"name", name},       {"initial_loss", initial_loss}, {"final_loss", final_loss},
                      {"wall_ms", wall_ms}, {"steps", steps},               {"config", config.to_json()}};
  if (best_metric) j["best_metric"] = *best_metric;
  return j;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,epoch,loss,wall_ms\n";
  out.precision(17);
  for (const auto& p : curve) out << p.step << ',' << p.epoch << ',' << p.loss << ',' << p.wall_ms << '\n';
}

TrainReport fit(std::vector<Layer>& layers, ParamSet& params, const Tensor& inputs, const Targets& targets,
                const TrainConfig& config, std::string name) {
  config.validate();
  const std::size_t n = inputs.rank() ? inputs.dim(0) : 0;
  if (config.loss == LossKind::mse) {
    if (!targets.features || targets.features->rank() == 0 || targets.features->dim(0) != n)
      throw ShapeError("fit: mse needs one target row per input row");
  } else if (targets.labels.size() != n) {
    throw ShapeError("fit: cross-entropy needs one label per input row");
  }

  TrainReport report;
  report.name = std::move(name);
  report.config = config;
  if (n == 0 || config.epochs == 0) return report;

  AdamState adam = AdamState::for_params(params, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  using clock = std::chrono::steady_clock;
  double elapsed_ms = 0.0;
  bool have_initial = false;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      Tensor xb = gather_rows(inputs, idx);
      Tensor yb;
      std::vector<int> lb;
      if (config.loss == LossKind::mse) {
        yb = gather_rows(*targets.features, idx);
      } else {
        for (auto i : idx) lb.push_back(targets.labels[i]);
      }

      const auto t0 = clock::now();
      Tape tape;
      std::vector<Var> pvars;
      Var out = forward_on_tape(tape, layers, tape.constant(std::move(xb)), params, &pvars);
      Var loss = config.loss == LossKind::mse ? ad::mse_loss(tape, out, yb) : ad::cross_entropy_loss(tape, out, lb);
      const double value = tape.value(loss)[0];
      std::vector<Tensor> grads = backward(tape, loss, Tensor::scalar(1.0), pvars);
      elapsed_ms += std::chrono::duration<double, std::milli>(clock::now() - t0).count();

      if (!have_initial) {
        report.initial_loss = value;
        have_initial = true;
      }
      if (!std::isfinite(value) || value > 1e6 * std::max(report.initial_loss, 1e-12))
        throw DivergenceError(report.name + ": loss " + std::to_string(value) + " at step " +
                              std::to_string(report.steps) + " (initial " + std::to_string(report.initial_loss) +
                              ")");
      adam_step(params, grads, adam);
      ++report.steps;
      report.curve.push_back({report.steps, epoch, value, elapsed_ms});
      epoch_loss += value;
      ++epoch_steps;
    }
    report.final_loss = epoch_loss / static_cast<double>(epoch_steps);
  }
  report.wall_ms = elapsed_ms;
  return report;
}

namespace {

Tensor gaussian(const Shape& shape, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.vec()) v = gauss(rng);
  return t;
}

}  // namespace

Dense init_dense(std::size_t in, std::size_t out, std::uint64_t seed) {
  return {gaussian({out, in}, std::sqrt(2.0 / static_cast<double>(in)), seed), Tensor({out})};
}

Conv2d init_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, ConvGeometry g, std::uint64_t seed) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  return {gaussian({out_ch, in_ch, kernel, kernel}, std::sqrt(2.0 / fan_in), seed), Tensor({out_ch}), g};
}

Network toy_mlp(std::uint64_t seed, std::size_t hidden, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<Layer> layers{init_dense(2, hidden, mix_seed(seed, 0)),      Relu{},
                            init_dense(hidden, hidden, mix_seed(seed, 2)), Relu{},
                            init_dense(hidden, hidden, mix_seed(seed, 4)), Relu{},
                            init_dense(hidden, c, mix_seed(seed, 6))};
  return Network({2}, std::move(layers));
}

Network toy_cnn(std::uint64_t seed, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<Layer> layers{init_conv(1, 8, 3, {1, 1}, mix_seed(seed, 0)),   Relu{},
                            init_conv(8, 16, 3, {2, 1}, mix_seed(seed, 2)),  Relu{},
                            init_conv(16, 16, 3, {1, 1}, mix_seed(seed, 4)), Relu{},
                            Flatten{},
                            init_dense(256, 64, mix_seed(seed, 7)),          Relu{},
                            init_dense(64, c, mix_seed(seed, 9))};
  return Network({1, 8, 8}, std::move(layers));
}

Network train_network(const Network& net, const Dataset& data, const TrainConfig& config, TrainReport* report) {
  std::vector<Layer> layers;
  for (const auto& p : net.layers()) layers.push_back(*p);
  ParamSet params = collect_params(layers);
  TrainConfig c = config;
  c.loss = LossKind::cross_entropy;
  TrainReport r = fit(layers, params, data.inputs, {std::nullopt, data.labels}, c, "baseline");
  if (report) *report = std::move(r);
  return Network(net.input_shape(), std::move(layers));
}

}  // namespace tslice
