#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <type_traits>

#include "CLI11.hpp"
#include "json.hpp"
#include "tensorslice/distill.hpp"
#include "tensorslice/error.hpp"
#include "tensorslice/hash.hpp"
#include "tensorslice/profile.hpp"
#include "tensorslice/train.hpp"

namespace tslice::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kDefaultDataSeed = 1234;

json default_document() {
  return {
      {"seed", 0},
      {"workers", 1},
      {"out", "run"},
      {"architecture", "mlp"},
      {"model", nullptr},
      {"plan", nullptr},
      {"dataset",
       {{"kind", "auto"},
        {"train_size", 2000},
        {"test_size", 1000},
        {"classes", 9},
        {"seed", kDefaultDataSeed},
        {"path", nullptr}}},
      {"compress", {{"cr", 0.5}, {"exclude", json::array()}, {"keep_ends", true}, {"exclude_sensitive", 0}}},
      {"slices", {{"cuts", nullptr}}},
      {"train", json::object()},
      {"local", {{"batch_size", 8}, {"learning_rate", 1e-3}, {"epochs", 5}, {"loss", "mse"}}},
      {"global", {{"batch_size", 16}, {"learning_rate", 5e-4}, {"epochs", 5}, {"loss", "cross_entropy"}}},
  };
}

json baseline_defaults(const std::string& arch) {
  if (arch == "cnn") return {{"batch_size", 32}, {"learning_rate", 2e-3}, {"epochs", 20}, {"loss", "cross_entropy"}};
  return {{"batch_size", 16}, {"learning_rate", 3e-3}, {"epochs", 30}, {"loss", "cross_entropy"}};
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::string model;
  std::string plan;
  std::optional<double> cr;
  std::string architecture;
  std::vector<std::string> runs;
};

// Effective settings after defaults, the config document and flags.
struct Settings {
  std::string command;
  json doc;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  fs::path out;
  std::optional<fs::path> model;
  std::optional<fs::path> plan;
  std::optional<fs::path> config_file;
  std::vector<std::string> runs;
};

bool needs_model(const std::string& cmd) {
  return cmd == "profile" || cmd == "compress" || cmd == "distill" || cmd == "finetune" || cmd == "hybrid" ||
         cmd == "eval";
}

bool non_negative_integer(const json& v) { return v.is_number_integer() && (v.is_number_unsigned() || v.get<long long>() >= 0); }

template <class T>
bool representable(const json& v) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    return non_negative_integer(v);
  } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    return v.is_number_integer();
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    return v.is_array() && std::all_of(v.begin(), v.end(), non_negative_integer);
  } else {
    return true;
  }
}

template <class T>
std::optional<T> read(const json& j, const char* key, const std::string& where, std::vector<std::string>& problems) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!representable<T>(j.at(key))) {
    problems.push_back(where + key + ": expected a non-negative integer (list), got " + j.at(key).dump());
    return std::nullopt;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    problems.push_back(where + key + ": wrong type (" + j.at(key).dump() + ")");
    return std::nullopt;
  }
}

TrainConfig section_config(const Settings& s, const char* name, const json& base, std::vector<std::string>* problems) {
  json merged = base;
  if (s.doc.contains(name) && s.doc.at(name).is_object()) merged.update(s.doc.at(name), true);
  if (!merged.contains("seed")) merged["seed"] = s.seed;
  TrainConfig c;
  try {
    c = TrainConfig::from_json(merged, c);
  } catch (const ConfigError& e) {
    if (problems) problems->push_back(std::string(name) + ": " + e.what());
    return c;
  }
  if (problems)
    for (const auto& p : c.problems()) problems->push_back(std::string(name) + "." + p);
  return c;
}

std::vector<std::string> validate(const Settings& s) {
  std::vector<std::string> p;
  const json& d = s.doc;
  if (s.workers == 0) p.push_back("workers must be at least 1");
  if (auto a = read<std::string>(d, "architecture", "", p); a && *a != "mlp" && *a != "cnn")
    p.push_back("architecture must be mlp or cnn, got " + *a);

  const json& ds = d.at("dataset");
  auto kind = read<std::string>(ds, "kind", "dataset.", p);
  if (kind && *kind != "auto" && *kind != "spirals" && *kind != "grid_blobs" && *kind != "dir")
    p.push_back("dataset.kind must be auto, spirals, grid_blobs or dir, got " + *kind);
  for (const char* k : {"train_size", "test_size"})
    if (auto n = read<long long>(ds, k, "dataset.", p); n && *n <= 0) p.push_back(std::string("dataset.") + k + " must be positive");
  if (auto c = read<int>(ds, "classes", "dataset.", p); c && (*c < 2 || *c > 9))
    p.push_back("dataset.classes must lie in [2, 9]");
  read<std::uint64_t>(ds, "seed", "dataset.", p);
  if (kind && *kind == "dir") {
    auto path = read<std::string>(ds, "path", "dataset.", p);
    if (!path)
      p.push_back("dataset.path is required for kind dir");
    else if (!fs::is_directory(fs::path(*path) / "train") || !fs::is_directory(fs::path(*path) / "test"))
      p.push_back("dataset.path " + *path + " needs train/ and test/ subdirectories");
  }

  const json& cp = d.at("compress");
  if (auto cr = read<double>(cp, "cr", "compress.", p); cr && !(*cr >= 0.0 && *cr < 1.0))
    p.push_back("compress.cr must lie in [0, 1)");
  read<std::vector<std::size_t>>(cp, "exclude", "compress.", p);
  read<bool>(cp, "keep_ends", "compress.", p);
  read<std::size_t>(cp, "exclude_sensitive", "compress.", p);
  if (auto cuts = read<std::vector<std::size_t>>(d.at("slices"), "cuts", "slices.", p)) {
    for (std::size_t k = 1; k < cuts->size(); ++k)
      if ((*cuts)[k] <= (*cuts)[k - 1]) {
        p.push_back("slices.cuts must be strictly increasing");
        break;
      }
  }

  section_config(s, "train", baseline_defaults(d.value("architecture", "mlp")), &p);
  section_config(s, "local", default_document().at("local"), &p);
  section_config(s, "global", default_document().at("global"), &p);

  if (needs_model(s.command)) {
    if (!s.model)
      p.push_back("model path is required for " + s.command);
    else if (!fs::exists(*s.model / "manifest.json"))
      p.push_back("model " + s.model->string() + " has no manifest.json");
  }
  if (s.plan && !fs::exists(*s.plan)) p.push_back("plan file " + s.plan->string() + " does not exist");
  if (s.command == "report") {
    if (s.runs.empty()) p.push_back("report needs at least one run directory");
    for (const auto& r : s.runs)
      if (!fs::exists(fs::path(r) / "manifest.json")) p.push_back("run " + r + " has no manifest.json");
  }
  return p;
}

Settings resolve(const std::string& command, const Flags& f) {
  Settings s;
  s.command = command;
  s.doc = default_document();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot open config " + f.config);
    json user;
    try {
      in >> user;
    } catch (const json::exception& e) {
      throw ConfigError("config " + f.config + " is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config " + f.config + " must be a JSON object");
    s.doc.update(user, true);
    s.config_file = f.config;
  }
  if (f.seed) s.doc["seed"] = *f.seed;
  if (f.workers) s.doc["workers"] = *f.workers;
  if (!f.out.empty()) s.doc["out"] = f.out;
  if (!f.model.empty()) s.doc["model"] = f.model;
  if (!f.plan.empty()) s.doc["plan"] = f.plan;
  if (f.cr) s.doc["compress"]["cr"] = *f.cr;
  if (!f.architecture.empty()) s.doc["architecture"] = f.architecture;
  s.runs = f.runs;

  std::vector<std::string> problems;
  s.seed = read<std::uint64_t>(s.doc, "seed", "", problems).value_or(0);
  s.workers = read<std::size_t>(s.doc, "workers", "", problems).value_or(1);
  s.out = read<std::string>(s.doc, "out", "", problems).value_or("run");
  if (auto m = read<std::string>(s.doc, "model", "", problems)) s.model = *m;
  if (auto p = read<std::string>(s.doc, "plan", "", problems)) s.plan = *p;
  for (const auto& p : validate(s)) problems.push_back(p);
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return s;
}

struct Data {
  Dataset train, test;
  std::string description;
};

Data load_data(const Settings& s, const Shape& input_shape, std::optional<std::size_t> classes_hint) {
  const json& ds = s.doc.at("dataset");
  std::string kind = ds.at("kind").get<std::string>();
  if (kind == "auto") kind = input_shape.size() == 1 ? "spirals" : "grid_blobs";
  const auto seed = ds.at("seed").get<std::uint64_t>();
  const auto ntrain = ds.at("train_size").get<std::size_t>();
  const auto ntest = ds.at("test_size").get<std::size_t>();
  Data d;
  if (kind == "spirals") {
    d.train = make_spirals(ntrain, mix_seed(seed, 0));
    d.test = make_spirals(ntest, mix_seed(seed, 1), 0.05, 1.5, Split::test);
  } else if (kind == "grid_blobs") {
    const int classes = classes_hint ? static_cast<int>(*classes_hint) : ds.at("classes").get<int>();
    d.train = make_grid_blobs(ntrain, classes, mix_seed(seed, 0));
    d.test = make_grid_blobs(ntest, classes, mix_seed(seed, 1), 0.25, Split::test);
  } else {
    const fs::path root = ds.at("path").get<std::string>();
    d.train = load_dataset_dir(root / "train", Split::train);
    d.test = load_dataset_dir(root / "test", Split::test);
  }
  if (d.train.sample_shape() != input_shape)
    throw DataError(kind + " samples are " + shape_string(d.train.sample_shape()) + " but the model expects " +
                    shape_string(input_shape));
  d.description = kind;
  return d;
}

std::vector<Slice> slices_for(const Settings& s, const Network& net) {
  const json& cuts = s.doc.at("slices").at("cuts");
  if (cuts.is_null()) return activation_partition(net);
  return partition(net, cuts.get<std::vector<std::size_t>>());
}

// Plan from --plan, else from the compress section (explicit exclusions,
// optional stem/head rule, optional profiling-based exclusions).
CompressionPlan plan_for(const Settings& s, const Network& net, const Dataset& test, json* info) {
  if (s.plan) {
    std::ifstream in(*s.plan);
    std::stringstream buf;
    buf << in.rdbuf();
    return CompressionPlan::from_json(buf.str());
  }
  const json& c = s.doc.at("compress");
  std::set<std::size_t> exclude;
  for (auto i : c.at("exclude").get<std::vector<std::size_t>>()) exclude.insert(i);
  if (c.at("keep_ends").get<bool>())
    for (auto i : boundary_layers(net)) exclude.insert(i);
  const auto k = c.at("exclude_sensitive").get<std::size_t>();
  if (k > 0) {
    auto recs = layer_sensitivity(net, test, tensorizable_layers(net));
    for (auto i : select_exclusions(recs, k)) exclude.insert(i);
  }
  const double cr = c.at("cr").get<double>();
  CompressionPlan plan = cr > 0.0 ? plan_for_target(net, cr, exclude) : CompressionPlan{};
  if (info) (*info)["excluded_layers"] = std::vector<std::size_t>(exclude.begin(), exclude.end());
  return plan;
}

bool has_tensorized(const Network& net) {
  for (std::size_t i = 0; i < net.size(); ++i)
    if (is_tensorized(net.layer(i))) return true;
  return false;
}

std::size_t num_classes(const Network& net) { return net.output_shape().at(0); }

json slice_summary(const std::vector<TrainReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports)
    arr.push_back({{"name", r.name}, {"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"steps", r.steps}});
  return arr;
}

class Run {
 public:
  Run(const Settings& s, std::vector<std::string> argv) : s_(s), argv_(std::move(argv)) {
    fs::create_directories(s_.out);
    if (s_.config_file) add_input("config", *s_.config_file);
    if (s_.model) add_input("model", *s_.model);
    if (s_.plan) add_input("plan", *s_.plan);
  }

  void add_input(const std::string& role, const fs::path& p) {
    inputs_[role] = {{"path", p.string()}, {"hash", fs::is_directory(p) ? hash_tree(p) : hash_file(p)}};
  }
  void add_output(const fs::path& p) { outputs_.push_back(fs::relative(p, s_.out).generic_string()); }

  json metrics = json::object();
  json timing = json::object();

  void finish() {
    std::ofstream(s_.out / "config.json") << s_.doc.dump(2) << "\n";
    json m = {{"format", "tensorslice-run"}, {"version", 1},       {"command", s_.command}, {"argv", argv_},
              {"config", s_.doc},            {"inputs", inputs_},  {"outputs", outputs_},   {"metrics", metrics},
              {"timing", timing}};
    std::ofstream(s_.out / "manifest.json") << m.dump(2) << "\n";
  }

 private:
  const Settings& s_;
  std::vector<std::string> argv_;
  json inputs_ = json::object();
  json outputs_ = json::array();
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void save_model(Run& run, const Network& net, const fs::path& dir, json& metrics) {
  fs::remove_all(dir);
  save(net, dir);
  run.add_output(dir);
  metrics["model_hash"] = hash_tree(dir);
  metrics["params"] = net.param_count();
}

int cmd_train_baseline(const Settings& s, Run& run, std::ostream& out) {
  const std::string arch = s.doc.at("architecture").get<std::string>();
  const int classes = arch == "mlp" ? 2 : s.doc.at("dataset").at("classes").get<int>();
  Network init = arch == "mlp" ? toy_mlp(s.seed) : toy_cnn(s.seed, classes);
  Data data = load_data(s, init.input_shape(), static_cast<std::size_t>(classes));
  TrainConfig cfg = section_config(s, "train", baseline_defaults(arch), nullptr);
  TrainReport report;
  Network net = train_network(init, data.train, cfg, &report);
  save_model(run, net, s.out / "model", run.metrics);
  write_loss_csv(report.curve, s.out / "loss.csv");
  run.add_output(s.out / "loss.csv");
  run.metrics["train_accuracy"] = evaluate(net, data.train).accuracy;
  const EvalResult test = evaluate(net, data.test);
  run.metrics["test_accuracy"] = test.accuracy;
  run.metrics["test_loss"] = test.mean_loss;
  run.metrics["final_train_loss"] = report.final_loss;
  run.timing["train_ms"] = report.wall_ms;
  out << "baseline " << arch << " on " << data.description << ": test accuracy " << test.accuracy << "\n";
  return kOk;
}

int cmd_profile(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  Data data = load_data(s, net.input_shape(), num_classes(net));
  auto records = layer_sensitivity(net, data.test, tensorizable_layers(net));
  write_sensitivity_csv(records, s.out / "sensitivity.csv");
  run.add_output(s.out / "sensitivity.csv");
  run.metrics["baseline_accuracy"] = evaluate(net, data.test).accuracy;
  json arr = json::array();
  for (const auto& r : records)
    arr.push_back({{"layer", r.layer}, {"ranks", r.ranks}, {"accuracy", r.accuracy}, {"delta", r.delta}});
  run.metrics["records"] = arr;
  const auto k = s.doc.at("compress").at("exclude_sensitive").get<std::size_t>();
  const auto excl = select_exclusions(records, k);
  run.metrics["suggested_exclusions"] = std::vector<std::size_t>(excl.begin(), excl.end());
  for (const auto& r : records) out << "layer " << r.layer << " delta " << r.delta << "\n";
  return kOk;
}

int cmd_compress(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  Data data = load_data(s, net.input_shape(), num_classes(net));
  CompressionPlan plan = plan_for(s, net, data.test, &run.metrics);
  Network t = tensorize_slice(net, net.full(), plan);
  std::ofstream(s.out / "plan.json") << plan.to_json() << "\n";
  run.add_output(s.out / "plan.json");
  save_model(run, t, s.out / "model", run.metrics);
  run.metrics["target_cr"] = s.doc.at("compress").at("cr");
  run.metrics["achieved_cr"] = compression_rate(net, t);
  run.metrics["params_before"] = net.param_count();
  run.metrics["test_accuracy"] = evaluate(t, data.test).accuracy;
  out << "compressed to CR " << compression_rate(net, t) << " (target " << s.doc.at("compress").at("cr").get<double>()
      << "), test accuracy without healing " << run.metrics["test_accuracy"].get<double>() << "\n";
  return kOk;
}

void record_local(const Settings& s, Run& run, const LocalResult& r) {
  for (const auto& rep : r.reports) {
    const fs::path p = s.out / "loss" / (rep.name + ".csv");
    write_loss_csv(rep.curve, p);
    run.add_output(p);
  }
  write_timing_summary({r.schedule}, s.out / "schedule.csv");
  run.add_output(s.out / "schedule.csv");
  run.metrics["slices"] = slice_summary(r.reports);
  run.timing["local_makespan_ms"] = r.schedule.makespan_ms;
  run.timing["local_serial_ms"] = r.schedule.serial_ms;
  double train_ms = 0.0;
  for (const auto& rep : r.reports) train_ms += rep.wall_ms;
  run.timing["local_train_ms"] = train_ms;
}

int cmd_distill(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  if (has_tensorized(net)) throw ConfigError("distill expects the pretrained (uncompressed) model");
  Data data = load_data(s, net.input_shape(), num_classes(net));
  CompressionPlan plan = plan_for(s, net, data.test, &run.metrics);
  TrainConfig local = section_config(s, "local", default_document().at("local"), nullptr);
  LocalOptions opts{s.workers, s.out / "cache"};
  LocalResult r = local_tensorize(net, data.train, slices_for(s, net), plan, local, opts);
  record_local(s, run, r);
  save_model(run, r.network, s.out / "model", run.metrics);
  run.metrics["baseline_accuracy"] = evaluate(net, data.test).accuracy;
  run.metrics["test_accuracy"] = evaluate(r.network, data.test).accuracy;
  run.metrics["achieved_cr"] = compression_rate(net, r.network);
  out << "local tensorization: CR " << run.metrics["achieved_cr"].get<double>() << ", test accuracy "
      << run.metrics["test_accuracy"].get<double>() << " (baseline " << run.metrics["baseline_accuracy"].get<double>()
      << ")\n";
  return kOk;
}

int cmd_finetune(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  Data data = load_data(s, net.input_shape(), num_classes(net));
  Network start = net;
  if (s.plan || !has_tensorized(net)) start = tensorize_slice(net, net.full(), plan_for(s, net, data.test, &run.metrics));
  TrainConfig global = section_config(s, "global", default_document().at("global"), nullptr);
  TrainReport rep;
  Network tuned = global_finetune(start, data.train, global, &rep);
  write_loss_csv(rep.curve, s.out / "loss.csv");
  run.add_output(s.out / "loss.csv");
  save_model(run, tuned, s.out / "model", run.metrics);
  run.metrics["test_accuracy"] = evaluate(tuned, data.test).accuracy;
  run.metrics["achieved_cr"] = compression_rate(net, tuned);
  run.metrics["final_train_loss"] = rep.final_loss;
  run.timing["global_train_ms"] = rep.wall_ms;
  out << "global fine-tuning: test accuracy " << run.metrics["test_accuracy"].get<double>() << "\n";
  return kOk;
}

int cmd_hybrid(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  if (has_tensorized(net)) throw ConfigError("hybrid expects the pretrained (uncompressed) model");
  Data data = load_data(s, net.input_shape(), num_classes(net));
  CompressionPlan plan = plan_for(s, net, data.test, &run.metrics);
  TrainConfig local = section_config(s, "local", default_document().at("local"), nullptr);
  TrainConfig global = section_config(s, "global", default_document().at("global"), nullptr);
  HybridResult r = hybrid_local_global(net, data.train, slices_for(s, net), plan, local, global,
                                       {s.workers, s.out / "cache"});
  record_local(s, run, r.local);
  write_loss_csv(r.global.curve, s.out / "loss" / "global.csv");
  run.add_output(s.out / "loss" / "global.csv");
  save_model(run, r.network, s.out / "model", run.metrics);
  run.metrics["baseline_accuracy"] = evaluate(net, data.test).accuracy;
  run.metrics["local_accuracy"] = evaluate(r.local.network, data.test).accuracy;
  run.metrics["test_accuracy"] = evaluate(r.network, data.test).accuracy;
  run.metrics["achieved_cr"] = compression_rate(net, r.network);
  run.timing["global_train_ms"] = r.global.wall_ms;
  out << "hybrid: local " << run.metrics["local_accuracy"].get<double>() << " -> global "
      << run.metrics["test_accuracy"].get<double>() << "\n";
  return kOk;
}

int cmd_eval(const Settings& s, Run& run, std::ostream& out) {
  Network net = load(*s.model);
  Data data = load_data(s, net.input_shape(), num_classes(net));
  const EvalResult r = evaluate(net, data.test);
  run.metrics["test_accuracy"] = r.accuracy;
  run.metrics["test_loss"] = r.mean_loss;
  run.metrics["params"] = net.param_count();
  out << "test accuracy " << r.accuracy << ", loss " << r.mean_loss << "\n";
  return kOk;
}

int cmd_report(const Settings& s, Run& run, std::ostream& out) {
  std::ostringstream csv;
  csv.precision(10);
  csv << "run,command,test_accuracy,achieved_cr,params\n";
  json rows = json::array();
  for (const auto& dir : s.runs) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    json m;
    try {
      in >> m;
    } catch (const json::exception& e) {
      throw DataError("run " + dir + ": unreadable manifest: " + e.what());
    }
    const json& met = m.value("metrics", json::object());
    auto num = [&](const char* k) { return met.contains(k) ? met.at(k).dump() : std::string(); };
    csv << dir << ',' << m.value("command", "") << ',' << num("test_accuracy") << ',' << num("achieved_cr") << ','
        << num("params") << '\n';
    rows.push_back({{"run", dir}, {"command", m.value("command", "")}, {"metrics", met}});
    run.add_input("run:" + dir, fs::path(dir) / "manifest.json");
  }
  std::ofstream(s.out / "report.csv") << csv.str();
  run.add_output(s.out / "report.csv");
  run.metrics["runs"] = rows;
  out << csv.str();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Slice-wise tensorization of small neural networks", "tensorslice"};
  app.require_subcommand(1);
  Flags f;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config document")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "global seed");
    sub->add_option("--workers", f.workers, "parallel slice jobs");
    sub->add_option("--out", f.out, "output directory");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Settings&, Run&, std::ostream&);
  };
  const Command commands[] = {
      {"train-baseline", "train a toy network on a synthetic dataset", cmd_train_baseline},
      {"profile", "single-layer sensitivity without healing", cmd_profile},
      {"compress", "decompose layers to a target compression rate", cmd_compress},
      {"distill", "local slice-wise tensorization", cmd_distill},
      {"finetune", "global end-to-end fine-tuning of tensorized layers", cmd_finetune},
      {"hybrid", "local tensorization followed by global fine-tuning", cmd_hybrid},
      {"eval", "test accuracy of a saved model", cmd_eval},
      {"report", "summarize run directories", cmd_report},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "train-baseline")
      sub->add_option("--arch", f.architecture, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
    if (needs_model(c.name)) sub->add_option("--model", f.model, "model directory");
    if (std::string(c.name) == "compress" || std::string(c.name) == "distill" || std::string(c.name) == "finetune" ||
        std::string(c.name) == "hybrid") {
      sub->add_option("--plan", f.plan, "compression plan JSON");
      sub->add_option("--cr", f.cr, "target whole-network compression rate");
    }
    if (std::string(c.name) == "report") sub->add_option("runs", f.runs, "run directories");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    Settings s = resolve(name, f);
    Run run(s, args);
    int code = kFailure;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& c : commands)
      if (name == c.name) code = c.fn(s, run, out);
    run.timing["total_ms"] = ms_since(t0);
    run.finish();
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const InfeasibleError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace tslice::cli
