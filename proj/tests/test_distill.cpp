#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "tensorslice/distill.hpp"
#include "tensorslice/error.hpp"
#include "tensorslice/profile.hpp"

using namespace tslice;

namespace {

struct Fixture {
  Dataset train = make_spirals(240, 21);
  Dataset test = make_spirals(200, 22, 0.05, 1.5, Split::test);
  Network net;
  std::vector<Slice> slices;

  Fixture() {
    TrainConfig c;
    c.epochs = 8;
    c.batch_size = 16;
    c.learning_rate = 3e-3;
    c.seed = 5;
    net = train_network(toy_mlp(5, 16), train, c, nullptr);
    slices = partition(net, {2, 4});  // [0,2) [2,4) [4,7)
  }

  CompressionPlan full_rank_plan() const {
    CompressionPlan p;
    for (std::size_t i : {2, 4}) {
      LayerPlan e;
      e.layer = i;
      e.method = PlanMethod::mpo;
      e.in_dims = {4, 4};
      e.out_dims = {4, 4};
      e.bonds = {16};
      p.layers.push_back(e);
    }
    return p;
  }

  CompressionPlan truncated_plan() const {
    CompressionPlan p = full_rank_plan();
    for (auto& e : p.layers) e.bonds = {3};
    return p;
  }
};

TrainConfig local_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.seed = 17;
  return c;
}

bool same_params(const Layer& a, const Layer& b) {
  auto pa = named_parameters(a), pb = named_parameters(b);
  if (pa.size() != pb.size() || layer_kind(a) != layer_kind(b)) return false;
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (pa[k].first != pb[k].first || !(*pa[k].second == *pb[k].second)) return false;
  return true;
}

}  // namespace

TEST_CASE("seeded subsets are nested across fractions") {
  auto full = sample_subset(100, 1.0, 9);
  auto part = sample_subset(100, 0.2, 9);
  CHECK(full.size() == 100);
  CHECK(part.size() == 20);
  CHECK(sample_subset(7, 0.5, 1).size() == 4);
  std::set<std::size_t> all(full.begin(), full.end());
  CHECK(all.size() == 100);
  CHECK(std::equal(part.begin(), part.end(), full.begin()));
  CHECK_THROWS_AS(sample_subset(10, 0.0, 1), InvalidArgument);
}

TEST_CASE("capture over the whole network records raw inputs and logits") {
  Fixture f;
  auto caches = capture_features(f.net, f.train, {f.net.full()}, 1.0, 3);
  REQUIRE(caches.size() == 1);
  const auto& c = caches[0];
  CHECK(c.sample_count() == f.train.size());
  CHECK(c.inputs == gather_rows(f.train.inputs, c.sample_indices));
  CHECK(c.outputs == forward(f.net, c.inputs));
  CHECK(c.model_checksum == network_checksum(f.net));
}

TEST_CASE("adjacent slices share their boundary activations bit-exactly") {
  Fixture f;
  auto caches = capture_features(f.net, f.train, f.slices, 0.6, 4);
  REQUIRE(caches.size() == 3);
  CHECK(caches[0].outputs == caches[1].inputs);
  CHECK(caches[1].outputs == caches[2].inputs);
  CHECK(caches[0].sample_count() == 144);
}

TEST_CASE("feature caches round-trip through disk and guard the model checksum") {
  Fixture f;
  auto root = std::filesystem::temp_directory_path() / "tslice_cache_test";
  std::filesystem::remove_all(root);
  auto caches = capture_features(f.net, f.train, f.slices, 0.5, 4);
  save_cache(caches[1], root);
  CHECK(std::filesystem::exists(root / caches[1].model_checksum / "slice-1" / "inputs.bin"));
  CHECK(std::filesystem::exists(root / caches[1].model_checksum / "slice-1" / "meta"));
  FeatureCache back = load_cache(root, caches[1].model_checksum, 1);
  CHECK(back.inputs == caches[1].inputs);
  CHECK(back.outputs == caches[1].outputs);
  CHECK(back.sample_indices == caches[1].sample_indices);
  CHECK(back.slice == caches[1].slice);

  // a meta file claiming another model is rejected
  auto other = root / "deadbeef";
  std::filesystem::create_directories(other);
  std::filesystem::copy(root / caches[1].model_checksum / "slice-1", other / "slice-1");
  CHECK_THROWS_AS(load_cache(root, "deadbeef", 1), FormatError);
  std::filesystem::remove_all(root);
}

TEST_CASE("distilling a full-rank slice is a no-op") {
  Fixture f;
  auto caches = capture_features(f.net, f.train, f.slices, 1.0, 4);
  Network t = tensorize_slice(f.net, f.slices[1], restrict_plan(f.full_rank_plan(), f.slices[1]));
  std::vector<Layer> layers{t.layer(2), t.layer(3)};
  SliceResult r = distill_slice(layers, caches[1], local_config(1), network_checksum(f.net));
  CHECK(r.report.initial_loss < 1e-12);
  CHECK(r.report.final_loss < 1e-12);
  CHECK(r.report.steps == 0);
  const auto& before = std::get<MpoDense>(layers[0]).mpo;
  const auto& after = std::get<MpoDense>(r.layers[0]).mpo;
  for (std::size_t k = 0; k < before.cores.size(); ++k) CHECK(max_abs_diff(before.cores[k], after.cores[k]) < 1e-8);
}

TEST_CASE("a step with the slice's own output as target leaves parameters unchanged") {
  Fixture f;
  Network t = tensorize_slice(f.net, f.slices[1], restrict_plan(f.truncated_plan(), f.slices[1]));
  std::vector<Layer> layers{t.layer(2), t.layer(3)};
  const std::vector<Layer> original = layers;
  FeatureCache c = capture_features(f.net, f.train, f.slices, 0.1, 4)[1];
  ParamSet params = collect_params(layers);
  Tensor own;
  {
    Tape tape;
    own = tape.value(forward_on_tape(tape, layers, tape.constant(c.inputs), params, nullptr));
  }
  TrainConfig cfg = local_config(1);
  cfg.batch_size = c.sample_count();
  TrainReport r = fit(layers, params, c.inputs, {own, {}}, cfg, "self");
  CHECK(r.steps == 1);
  CHECK(r.initial_loss == 0.0);
  CHECK(same_params(layers[0], original[0]));
  CHECK(same_params(layers[1], original[1]));
}

TEST_CASE("truncated slice loss drops during distillation") {
  Fixture f;
  auto caches = capture_features(f.net, f.train, f.slices, 1.0, 4);
  Network t = tensorize_slice(f.net, f.slices[1], restrict_plan(f.truncated_plan(), f.slices[1]));
  SliceResult r = distill_slice({t.layer(2), t.layer(3)}, caches[1], local_config(5), network_checksum(f.net));
  CHECK(r.report.initial_loss > 1e-6);
  CHECK(r.report.final_loss < r.report.initial_loss);
  CHECK(r.report.curve.size() == r.report.steps);
}

TEST_CASE("distill rejects a cache from another model") {
  Fixture f;
  auto caches = capture_features(f.net, f.train, f.slices, 0.2, 4);
  CHECK_THROWS_AS(distill_slice({f.net.layer(2), f.net.layer(3)}, caches[1], local_config(), "0000"),
                  InvalidArgument);
}

TEST_CASE("local tensorization keeps slices independent") {
  Fixture f;
  CompressionPlan plan = f.truncated_plan();
  LocalResult all = local_tensorize(f.net, f.train, f.slices, plan, local_config());
  CHECK(all.reports.size() == 2);
  // slice 0 has no plan entries and keeps the original layers
  CHECK(all.network.layer_ptr(0) == f.net.layer_ptr(0));
  CHECK(all.network.layer_ptr(1) == f.net.layer_ptr(1));

  // healing one slice at a time yields the same layers bit for bit
  for (std::size_t i : {1, 2}) {
    LocalResult one = local_tensorize(f.net, f.train, f.slices, restrict_plan(plan, f.slices[i]), local_config());
    for (std::size_t l = 0; l < f.net.size(); ++l) {
      if (f.slices[i].contains(l))
        CHECK(same_params(one.network.layer(l), all.network.layer(l)));
      else
        CHECK(same_params(one.network.layer(l), f.net.layer(l)));
    }
  }
}

TEST_CASE("local tensorization is identical for any worker count") {
  Fixture f;
  auto a = local_tensorize(f.net, f.train, f.slices, f.truncated_plan(), local_config(), {1, std::nullopt});
  auto b = local_tensorize(f.net, f.train, f.slices, f.truncated_plan(), local_config(), {2, std::nullopt});
  CHECK(network_checksum(a.network) == network_checksum(b.network));
  CHECK(b.schedule.workers == 2);
}

TEST_CASE("skip-all plan returns the original network") {
  Fixture f;
  CompressionPlan plan;
  LayerPlan skip;
  skip.layer = 2;
  plan.layers.push_back(skip);
  auto r = local_tensorize(f.net, f.train, f.slices, plan, local_config());
  CHECK(network_checksum(r.network) == network_checksum(f.net));
  CHECK(r.reports.empty());
}

TEST_CASE("full-rank pipeline predicts exactly like the pretrained network") {
  Fixture f;
  auto r = local_tensorize(f.net, f.train, f.slices, f.full_rank_plan(), local_config(1));
  CHECK(evaluate(r.network, f.test).predictions == evaluate(f.net, f.test).predictions);
}

TEST_CASE("global fine-tuning freezes untensorized layers") {
  Fixture f;
  Network t = tensorize_slice(f.net, f.net.full(), f.truncated_plan());
  TrainConfig g = local_config(2);
  TrainReport rep;
  Network tuned = global_finetune(t, f.train, g, &rep);
  for (std::size_t l : {0, 6}) CHECK(same_params(tuned.layer(l), f.net.layer(l)));
  CHECK_FALSE(same_params(tuned.layer(2), t.layer(2)));
  CHECK(rep.name == "global");

  g.learning_rate = 0.0;
  Network still = global_finetune(t, f.train, g, nullptr);
  CHECK(network_checksum(still) == network_checksum(t));

  g.learning_rate = 1e-3;
  g.train_all = true;
  Network every = global_finetune(t, f.train, g, nullptr);
  CHECK_FALSE(same_params(every.layer(0), f.net.layer(0)));
}

TEST_CASE("hybrid schedule degenerates to its phases") {
  Fixture f;
  TrainConfig local = local_config(1), global = local_config(0);
  auto h = hybrid_local_global(f.net, f.train, f.slices, f.truncated_plan(), local, global);
  auto l = local_tensorize(f.net, f.train, f.slices, f.truncated_plan(), local);
  CHECK(network_checksum(h.network) == network_checksum(l.network));

  TrainConfig none = local_config(0), g1 = local_config(1);
  auto h2 = hybrid_local_global(f.net, f.train, f.slices, f.truncated_plan(), none, g1);
  Network direct = global_finetune(tensorize_slice(f.net, f.net.full(), f.truncated_plan()), f.train, g1, nullptr);
  CHECK(network_checksum(h2.network) == network_checksum(direct));
}

TEST_CASE("local pipeline runs at every feature fraction") {
  Fixture f;
  for (double frac : {0.2, 0.6, 1.0}) {
    TrainConfig c = local_config(1);
    c.data_fraction = frac;
    auto r = local_tensorize(f.net, f.train, f.slices, f.truncated_plan(), c);
    CHECK(r.reports.at(0).config.data_fraction == frac);
    CHECK(r.network.size() == f.net.size());
  }
}
