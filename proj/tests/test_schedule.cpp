#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "doctest.h"
#include "tensorslice/error.hpp"
#include "tensorslice/profile.hpp"
#include "tensorslice/schedule.hpp"
#include "tensorslice/train.hpp"

using namespace tslice;

namespace {

std::function<void()> busy(double ms) {
  return [ms]() {
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double, std::milli>(ms);
    volatile double x = 0;
    while (std::chrono::steady_clock::now() < until) x = x + 1;
  };
}

Network trained_mlp(std::uint64_t seed, const Dataset& train) {
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 16;
  c.learning_rate = 3e-3;
  c.seed = seed;
  return train_network(toy_mlp(seed, 16), train, c, nullptr);
}

}  // namespace

TEST_CASE("a single job has unit speedup") {
  for (std::size_t w : {1, 3}) {
    auto r = run_jobs({busy(20)}, w);
    CHECK(r.ok());
    CHECK(r.speedup == doctest::Approx(1.0).epsilon(0.05));
    CHECK(r.speedup <= 1.0);
  }
}

TEST_CASE("report arithmetic") {
  std::vector<std::function<void()>> jobs{busy(5), busy(10), busy(3), busy(7)};
  for (std::size_t w : {1, 2, 4}) {
    auto r = run_jobs(jobs, w);
    CHECK(r.workers == w);
    CHECK(r.makespan_ms >= r.max_job_ms());
    CHECK(r.serial_ms == std::accumulate(r.job_ms.begin(), r.job_ms.end(), 0.0));
    CHECK(r.efficiency > 0.0);
    CHECK(r.efficiency <= 1.0);
    CHECK(std::all_of(r.completed.begin(), r.completed.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("a failing job stops the hand-out of further jobs") {
  std::atomic<int> ran{0};
  std::vector<std::function<void()>> jobs;
  jobs.push_back([&]() { ++ran; });
  jobs.push_back([&]() { throw DataError("bad slice"); });
  for (int k = 0; k < 5; ++k) jobs.push_back([&]() { ++ran; });
  auto r = run_jobs(jobs, 1);
  CHECK_FALSE(r.ok());
  CHECK(ran == 1);
  CHECK(r.completed[0]);
  CHECK_FALSE(r.completed[1]);
  CHECK_FALSE(r.completed[6]);
  CHECK(r.failure_message.find("bad slice") != std::string::npos);
  CHECK_THROWS_AS(run_jobs_or_throw(jobs, 2), DataError);
  CHECK_THROWS_AS(run_jobs(jobs, 0), InvalidArgument);
}

TEST_CASE("results do not depend on the worker count") {
  std::vector<double> out1(8), out4(8);
  auto make = [](std::vector<double>& out) {
    std::vector<std::function<void()>> jobs;
    for (std::size_t k = 0; k < out.size(); ++k)
      jobs.push_back([&out, k]() {
        double s = 0;
        for (int i = 1; i < 1000; ++i) s += std::sin(static_cast<double>(k * i));
        out[k] = s;
      });
    return jobs;
  };
  run_jobs(make(out1), 1);
  run_jobs(make(out4), 4);
  CHECK(out1 == out4);
}

TEST_CASE("timing summary") {
  auto r = run_jobs({busy(2), busy(2)}, 2);
  std::string csv = timing_summary({r});
  CHECK(csv.rfind("workers,jobs,makespan_ms,serial_ms,max_job_ms,speedup,efficiency\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.find("\n2,2,") != std::string::npos);
}

TEST_CASE("full-rank probe changes nothing and leaves the network intact") {
  Dataset train = make_spirals(200, 1), test = make_spirals(200, 2, 0.05, 1.5, Split::test);
  Network net = trained_mlp(3, train);
  const std::string before = network_checksum(net);
  auto recs = layer_sensitivity(net, test, tensorizable_layers(net), {true});
  CHECK(recs.size() == 4);
  for (const auto& r : recs) CHECK(r.delta == 0.0);
  CHECK(network_checksum(net) == before);
  CHECK(layer_sensitivity(net, test, {}).empty());
  CHECK_THROWS_AS(layer_sensitivity(net, test, {1}), InvalidArgument);
}

TEST_CASE("half-rank probe records") {
  Dataset train = make_spirals(200, 1), test = make_spirals(200, 2, 0.05, 1.5, Split::test);
  Network net = trained_mlp(3, train);
  auto recs = layer_sensitivity(net, test, tensorizable_layers(net));
  const double base = evaluate(net, test).accuracy;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    CHECK(recs[k].delta == doctest::Approx(recs[k].accuracy - base));
    if (k) CHECK(recs[k - 1].delta <= recs[k].delta);
  }
  // hidden 16x16 layers use a 4x4 / 4x4 split with maximal bond 16
  for (const auto& r : recs)
    if (r.layer == 2 || r.layer == 4) CHECK(r.ranks == std::vector<std::size_t>{8});

  Network cnn = toy_cnn(1, 3);
  Dataset img = make_grid_blobs(30, 3, 4);
  auto crec = layer_sensitivity(cnn, img, {2});
  CHECK(crec[0].ranks == std::vector<std::size_t>{8, 4});
}

TEST_CASE("select exclusions picks the most negative deltas") {
  std::vector<SensitivityRecord> recs(5);
  const double deltas[] = {-0.01, 0.0, -0.2, -0.05, 0.01};
  for (std::size_t i = 0; i < 5; ++i) {
    recs[i].layer = i * 2;
    recs[i].delta = deltas[i];
  }
  CHECK(select_exclusions(recs, 0).empty());
  CHECK(select_exclusions(recs, 5).size() == 5);
  CHECK(select_exclusions(recs, 2) == std::set<std::size_t>{4, 6});
  CHECK(select_exclusions(recs, 3) == std::set<std::size_t>{0, 4, 6});
}

TEST_CASE("most sensitive layer is the best single exclusion") {
  Dataset train = make_spirals(400, 5), test = make_spirals(400, 6, 0.05, 1.5, Split::test);
  Network net = trained_mlp(7, train);
  const auto cand = tensorizable_layers(net);
  auto recs = layer_sensitivity(net, test, cand);

  // exhaustive oracle: probe every layer but one, keep the exclusion with the best accuracy
  std::size_t best = cand[0];
  double best_acc = -1.0;
  for (std::size_t skip : cand) {
    Network probed = net;
    for (std::size_t l : cand) {
      if (l == skip) continue;
      CompressionPlan p;
      LayerPlan e;
      e.layer = l;
      const auto& d = std::get<Dense>(net.layer(l));
      const auto [a, b] = balanced_factor(d.w.dim(1));
      const auto [c, f] = balanced_factor(d.w.dim(0));
      e.method = PlanMethod::mpo;
      e.in_dims = {a, b};
      e.out_dims = {c, f};
      e.bonds = {(std::min(a * c, b * f) + 1) / 2};
      p.layers = {e};
      probed = tensorize_slice(probed, {l, l + 1}, p);
    }
    const double acc = evaluate(probed, test).accuracy;
    if (acc > best_acc) {
      best_acc = acc;
      best = skip;
    }
  }
  CHECK(*select_exclusions(recs, 1).begin() == best);
}

TEST_CASE("planned parameter count matches the tensorized network") {
  Dataset train = make_spirals(100, 1);
  Network mlp = toy_mlp(2);
  Network cnn = toy_cnn(2, 9);
  for (const Network* net : {&mlp, &cnn}) {
    for (double target : {0.3, 0.5, 0.7}) {
      CompressionPlan plan = plan_for_target(*net, target, boundary_layers(*net));
      Network t = tensorize_slice(*net, net->full(), plan);
      CHECK(planned_param_count(*net, plan) == t.param_count());
      const double cr = compression_rate(*net, t);
      CHECK(cr >= target);
      CHECK(cr < target + 0.05);
    }
  }
  CHECK_THROWS_AS(plan_for_target(mlp, 0.99, boundary_layers(mlp)), InfeasibleError);
  CHECK_THROWS_AS(plan_layer(Relu{}, 1, 0.5), InvalidArgument);
  CHECK(boundary_layers(cnn) == std::set<std::size_t>{0, 9});
}
