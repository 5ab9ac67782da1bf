#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "tensorslice/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Out {
  int code;
  std::string out, err;
};

Out call(std::vector<std::string> args) {
  std::ostringstream o, e;
  int code = tslice::cli::run(args, o, e);
  return {code, o.str(), e.str()};
}

json manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  return json::parse(in);
}

// Small runs keep the suite fast.
fs::path small_config(const fs::path& root) {
  fs::create_directories(root);
  json c = {{"dataset", {{"train_size", 600}, {"test_size", 400}}}, {"train", {{"epochs", 15}}},
            {"local", {{"epochs", 3}}}, {"global", {{"epochs", 2}}}};
  std::ofstream(root / "small.json") << c.dump();
  return root / "small.json";
}

struct Workspace {
  fs::path root = fs::temp_directory_path() / "tslice_cli_test";
  fs::path config;
  Workspace() {
    fs::remove_all(root);
    config = small_config(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string at(const char* name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("baseline training is deterministic and writes a manifest") {
  Workspace w;
  auto a = call({"train-baseline", "--config", w.config.string(), "--seed", "3", "--out", w.at("a/nested")});
  REQUIRE(a.code == 0);
  auto b = call({"train-baseline", "--config", w.config.string(), "--seed", "3", "--out", w.at("b")});
  REQUIRE(b.code == 0);
  json ma = manifest(w.at("a/nested")), mb = manifest(w.at("b"));
  CHECK(ma["format"] == "tensorslice-run");
  CHECK(ma["command"] == "train-baseline");
  CHECK(ma["metrics"] == mb["metrics"]);
  CHECK(ma["metrics"]["test_accuracy"].get<double>() >= 0.95);
  CHECK(tslice::hash_tree(w.root / "a/nested" / "model") == tslice::hash_tree(w.root / "b" / "model"));
  CHECK(fs::exists(w.root / "a/nested" / "loss.csv"));
  CHECK(fs::exists(w.root / "a/nested" / "config.json"));
  CHECK(ma["inputs"]["config"]["hash"] == tslice::hash_file(w.config));

  // the written config reproduces the run
  auto c = call({"train-baseline", "--config", w.at("a/nested/config.json"), "--out", w.at("c")});
  REQUIRE(c.code == 0);
  CHECK(manifest(w.at("c"))["metrics"]["model_hash"] == ma["metrics"]["model_hash"]);
}

TEST_CASE("compress, distill and eval agree with each other") {
  Workspace w;
  REQUIRE(call({"train-baseline", "--config", w.config.string(), "--out", w.at("base")}).code == 0);
  const std::string model = w.at("base/model");

  auto comp = call({"compress", "--config", w.config.string(), "--model", model, "--cr", "0.5", "--out", w.at("comp")});
  REQUIRE(comp.code == 0);
  json mc = manifest(w.at("comp"));
  const double cr = mc["metrics"]["achieved_cr"];
  CHECK(cr >= 0.5);
  CHECK(cr < 0.55);
  CHECK(fs::exists(w.root / "comp" / "plan.json"));

  auto dist = call({"distill", "--config", w.config.string(), "--model", model, "--plan", w.at("comp/plan.json"),
                    "--out", w.at("dist")});
  REQUIRE(dist.code == 0);
  json md = manifest(w.at("dist"));
  CHECK(md["metrics"]["achieved_cr"].get<double>() == cr);
  CHECK(fs::exists(w.root / "dist" / "schedule.csv"));
  CHECK(md["inputs"].contains("plan"));

  auto ev = call({"eval", "--config", w.config.string(), "--model", w.at("dist/model"), "--out", w.at("ev")});
  REQUIRE(ev.code == 0);
  CHECK(manifest(w.at("ev"))["metrics"]["test_accuracy"] == md["metrics"]["test_accuracy"]);

  auto rep = call({"report", "--out", w.at("rep"), w.at("dist"), w.at("ev")});
  REQUIRE(rep.code == 0);
  std::ifstream csv(w.root / "rep" / "report.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("finetune and hybrid run from a baseline model") {
  Workspace w;
  REQUIRE(call({"train-baseline", "--config", w.config.string(), "--out", w.at("base")}).code == 0);
  for (const char* cmd : {"finetune", "hybrid"}) {
    auto r = call({cmd, "--config", w.config.string(), "--model", w.at("base/model"), "--cr", "0.5", "--out",
                   w.at(cmd)});
    REQUIRE(r.code == 0);
    CHECK(manifest(w.at(cmd))["metrics"]["achieved_cr"].get<double>() >= 0.5);
  }
}

TEST_CASE("usage errors exit with 2") {
  CHECK(call({}).code == 2);
  CHECK(call({"bogus"}).code == 2);
  CHECK(call({"eval", "--no-such-flag"}).code == 2);
  CHECK(call({"eval", "--seed", "abc"}).code == 2);
  CHECK(call({"--help"}).code == 0);
}

TEST_CASE("configuration errors list every problem and exit with 3") {
  Workspace w;
  std::ofstream(w.root / "bad.json") << R"({"workers": 0, "compress": {"cr": 1.2}, "local": {"epochs": -1},
                                           "architecture": "rnn"})";
  auto r = call({"compress", "--config", w.at("bad.json"), "--out", w.at("x")});
  CHECK(r.code == 3);
  for (const char* needle : {"workers", "compress.cr", "local", "architecture", "model path"})
    CHECK(r.err.find(needle) != std::string::npos);
  CHECK_FALSE(fs::exists(w.root / "x" / "manifest.json"));

  std::ofstream(w.root / "broken.json") << "{not json";
  CHECK(call({"eval", "--config", w.at("broken.json")}).code == 3);
}

TEST_CASE("an unreachable target rate exits with 3 and a corrupt model with 4") {
  Workspace w;
  REQUIRE(call({"train-baseline", "--config", w.config.string(), "--out", w.at("base")}).code == 0);
  CHECK(call({"compress", "--config", w.config.string(), "--model", w.at("base/model"), "--cr", "0.99", "--out",
              w.at("c")})
            .code == 3);
  fs::path model = w.root / "base" / "model";
  for (const auto& e : fs::recursive_directory_iterator(model))
    if (e.path().extension() == ".bin") {
      std::ofstream(e.path(), std::ios::binary | std::ios::trunc) << "xx";
      break;
    }
  CHECK(call({"eval", "--config", w.config.string(), "--model", model.string(), "--out", w.at("e")}).code == 4);
}

TEST_CASE("a diverging run exits with 5") {
  Workspace w;
  std::ofstream(w.root / "hot.json") << R"({"dataset": {"train_size": 200, "test_size": 50},
                                           "train": {"epochs": 3, "learning_rate": 1e9}})";
  auto r = call({"train-baseline", "--config", w.at("hot.json"), "--out", w.at("h")});
  CHECK(r.code == 5);
}
