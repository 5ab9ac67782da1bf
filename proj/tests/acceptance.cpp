// Acceptance suite: one PASS/FAIL line per criterion with the measured values
// and the wall time against its limit. Exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tensorslice/distill.hpp"
#include "tensorslice/error.hpp"
#include "tensorslice/hash.hpp"
#include "tensorslice/profile.hpp"
#include "tensorslice/schedule.hpp"

using namespace tslice;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3f", x);
  return s;
}

// Random factorization of n into `parts` factors.
Dims random_split(std::size_t n, std::size_t parts, std::mt19937_64& rng) {
  Dims out(parts, 1);
  std::size_t rest = n;
  for (std::size_t k = 0; k + 1 < parts; ++k) {
    std::vector<std::size_t> divisors;
    for (std::size_t d = 1; d <= rest; ++d)
      if (rest % d == 0) divisors.push_back(d);
    out[k] = divisors[std::uniform_int_distribution<std::size_t>(0, divisors.size() - 1)(rng)];
    rest /= out[k];
  }
  out.back() = rest;
  return out;
}

Outcome exact_reconstruction() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> side(2, 64), ch(1, 8), parts(2, 3);
  double worst_mpo = 0.0, worst_tucker = 0.0;
  for (int k = 0; k < 25; ++k) {
    const std::size_t in = side(rng), out = side(rng), n = parts(rng);
    const Tensor w = oracle::random_tensor({in, out}, rng);
    const Dims id = random_split(in, n, rng), od = random_split(out, n, rng);
    MpoLayer m = mpo_decompose(w, id, od, Dims(n - 1, 4096));
    worst_mpo = std::max(worst_mpo, oracle::frobenius_relative(oracle::mpo_matrix(m), w));
  }
  for (int k = 0; k < 25; ++k) {
    const std::size_t s1 = ch(rng), s2 = ch(rng);
    const Tensor kern = oracle::random_tensor({s1, s2, 3, 3}, rng);
    TuckerConv t = tucker_decompose(kern, s1, s2);
    worst_tucker = std::max(worst_tucker, oracle::frobenius_relative(oracle::tucker_kernel(t), kern));
  }
  const double worst = std::max(worst_mpo, worst_tucker);
  return {worst < 1e-9, fmt("50 instances, max relative error %.2e (mpo %.2e, tucker %.2e) < 1e-9", worst, worst_mpo,
                            worst_tucker)};
}

Outcome eckart_young() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t i1 = dim(rng), i2 = dim(rng), j1 = dim(rng), j2 = dim(rng);
    const Tensor w = oracle::random_tensor({i1 * i2, j1 * j2}, rng);
    const std::size_t max_chi = std::min(i1 * j1, i2 * j2);
    const std::size_t chi = std::uniform_int_distribution<std::size_t>(1, max_chi - 1)(rng);
    MpoDecomposeInfo info;
    MpoLayer m = mpo_decompose(w, {i1, i2}, {j1, j2}, {chi}, &info);
    Tensor diff = oracle::mpo_matrix(m);
    double err2 = 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) err2 += (diff[e] - w[e]) * (diff[e] - w[e]);

    // singular values of the interleaved [i1 j1, i2 j2] matrix from its Gram matrix
    Tensor r({i1 * j1, i2 * j2});
    for (std::size_t a = 0; a < i1; ++a)
      for (std::size_t b = 0; b < i2; ++b)
        for (std::size_t c = 0; c < j1; ++c)
          for (std::size_t d = 0; d < j2; ++d) r(a * j1 + c, b * j2 + d) = w(a * i2 + b, c * j2 + d);
    const Tensor gram = r.dim(0) <= r.dim(1) ? oracle::naive_matmul(r, oracle::naive_transpose(r))
                                             : oracle::naive_matmul(oracle::naive_transpose(r), r);
    const auto ev = oracle::symmetric_eigenvalues(gram);
    double tail = 0.0;
    for (std::size_t e = chi; e < ev.size(); ++e) tail += std::max(ev[e], 0.0);
    worst = std::max(worst, std::abs(err2 - tail) / tail);
    worst = std::max(worst, std::abs(info.discarded_energy.at(0) - tail) / tail);
  }
  return {worst < 1e-8, fmt("20 cases, max relative mismatch %.2e < 1e-8", worst)};
}

Outcome gradient_oracle() {
  double worst = 0.0;
  std::size_t max_params = 0, cases = 0;
  for (const auto& kind : gradcheck::kinds())
    for (LossKind loss : {LossKind::mse, LossKind::cross_entropy})
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        gradcheck::Instance in = gradcheck::make_instance(kind, 1000 + seed);
        ParamSet params = collect_params(in.layers);
        std::size_t count = 0;
        for (const Tensor* t : params.tensors) count += t->size();
        max_params = std::max(max_params, count);
        worst = std::max(worst, gradcheck::check(in, loss, seed));
        ++cases;
      }
  return {worst < 1e-5 && max_params <= 2000,
          fmt("%zu cases (5 kinds x 2 losses x 5 seeds), max relative error %.2e < 1e-5, largest instance %zu params",
              cases, worst, max_params)};
}

Outcome cr_arithmetic() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<std::size_t> ext(1, 8), chan(2, 64);
  const std::size_t ks[] = {1, 3, 5};
  std::size_t checked = 0, infeasible = 0, failures = 0;
  double worst_gap = 0.0;
  for (double cr : {0.3, 0.5, 0.7}) {
    for (int k = 0; k < 20; ++k) {
      // 2-site MPO: params chi * (i1 j1 + i2 j2) within (1 - cr) * dense
      const std::size_t i1 = ext(rng), j1 = ext(rng), i2 = ext(rng), j2 = ext(rng);
      const std::size_t s1 = i1 * j1, s2 = i2 * j2;
      const double budget = (1.0 - cr) * static_cast<double>(s1 * s2);
      const std::size_t chi = bond_dim_for_cr(i1, j1, i2, j2, cr);
      const std::size_t cap = std::min(s1, s2);
      const double params = static_cast<double>(chi * (s1 + s2));
      const bool floor_clamp = chi == 1 && params > budget;
      if (!floor_clamp) {
        if (params > budget) ++failures;
        if (chi < cap && static_cast<double>((chi + 1) * (s1 + s2)) <= budget) ++failures;
        const double achieved = 1.0 - params / static_cast<double>(s1 * s2);
        const double step = static_cast<double>(s1 + s2) / static_cast<double>(s1 * s2);
        if (chi < cap) worst_gap = std::max(worst_gap, (achieved - cr) / step);
      }
      ++checked;

      // Tucker-2: exhaustive scan of proportional rank pairs
      const Shape shape{chan(rng), chan(rng), ks[k % 3], ks[k % 3]};
      const double dense = static_cast<double>(shape_size(shape));
      const double tb = (1.0 - cr) * dense;
      const double band = std::max(1.0 / shape[0], 1.0 / shape[1]) + 1e-12;
      std::size_t best = 0;
      for (std::size_t r1 = 1; r1 <= shape[0]; ++r1)
        for (std::size_t r2 = 1; r2 <= shape[1]; ++r2) {
          const double dev = std::abs(static_cast<double>(r1) / shape[0] - static_cast<double>(r2) / shape[1]);
          const std::size_t p = r1 * r2 * shape[2] * shape[3] + shape[0] * r1 + shape[1] * r2;
          if (dev <= band && static_cast<double>(p) <= tb) best = std::max(best, p);
        }
      ++checked;
      try {
        const auto [r1, r2] = tucker_ranks_for_cr(shape, cr);
        const std::size_t p = tucker_param_count(shape, r1, r2);
        if (static_cast<double>(p) > tb || p != best) ++failures;
        const double achieved = 1.0 - static_cast<double>(p) / dense;
        if (r1 < shape[0] && r2 < shape[1]) {
          const double step =
              static_cast<double>(tucker_param_count(shape, r1 + 1, r2 + 1) - p) / dense;
          worst_gap = std::max(worst_gap, (achieved - cr) / step);
        }
      } catch (const InfeasibleError&) {
        ++infeasible;
        if (best != 0) ++failures;
      }
    }
  }
  return {failures == 0 && worst_gap <= 1.0,
          fmt("%zu shape/rate cases, %zu budget or optimality violations, %zu declared infeasible, "
              "largest overshoot %.2f quantization steps (<= 1)",
              checked, failures, infeasible, worst_gap)};
}

// Shared toy experiments ----------------------------------------------------

struct MlpRun {
  Dataset train, test;
  Network net;
  double baseline = 0.0;
  CompressionPlan plan;
};

TrainConfig make_config(std::size_t epochs, double lr, std::size_t batch, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

std::vector<MlpRun>& mlp_runs() {
  static std::vector<MlpRun> runs = [] {
    std::vector<MlpRun> out;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      MlpRun r;
      r.train = make_spirals(2000, seed * 2 + 1);
      r.test = make_spirals(1000, seed * 2 + 2, 0.05, 1.5, Split::test);
      r.net = train_network(toy_mlp(seed), r.train, make_config(30, 3e-3, 16, seed), nullptr);
      r.baseline = evaluate(r.net, r.test).accuracy;
      r.plan = plan_for_target(r.net, 0.5, boundary_layers(r.net));
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

double mlp_local(const MlpRun& r, std::uint64_t seed, double fraction, std::size_t workers = 1,
                 Network* result = nullptr) {
  TrainConfig c = make_config(10, 1e-3, 8, seed);
  c.data_fraction = fraction;
  LocalResult l = local_tensorize(r.net, r.train, activation_partition(r.net), r.plan, c, {workers, std::nullopt});
  if (result) *result = l.network;
  return evaluate(l.network, r.test).accuracy;
}

Outcome local_recovery() {
  std::vector<double> base, local, cr;
  auto& runs = mlp_runs();
  for (std::size_t s = 0; s < runs.size(); ++s) {
    Network healed;
    local.push_back(mlp_local(runs[s], s, 1.0, 1, &healed));
    base.push_back(runs[s].baseline);
    cr.push_back(compression_rate(runs[s].net, healed));
  }
  const double a = median(base), l = median(local);
  const bool cr_ok = *std::min_element(cr.begin(), cr.end()) >= 0.5;
  return {a >= 0.95 && l >= a - 0.02 && cr_ok,
          fmt("baseline A median %.4f [%s], local median %.4f [%s] >= A - 0.02, CR %.4f..%.4f, 10 local epochs", a,
              join(base).c_str(), l, join(local).c_str(), *std::min_element(cr.begin(), cr.end()),
              *std::max_element(cr.begin(), cr.end()))};
}

struct CnnRun {
  Dataset train, test;
  Network net;
  double baseline = 0.0;
};

std::vector<CnnRun>& cnn_runs() {
  static std::vector<CnnRun> runs = [] {
    std::vector<CnnRun> out;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CnnRun r;
      r.train = make_grid_blobs(2000, 9, seed * 2 + 1);
      r.test = make_grid_blobs(2000, 9, seed * 2 + 2, 0.25, Split::test);
      r.net = train_network(toy_cnn(seed, 9), r.train, make_config(20, 2e-3, 32, seed), nullptr);
      r.baseline = evaluate(r.net, r.test).accuracy;
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

// Equal epoch budget E: local E, global E, hybrid ceil(E/2) local + floor(E/2) global.
constexpr std::size_t kCnnEpochs = 5;

struct CnnScores {
  std::vector<double> local, global, hybrid, cr;
};

CnnScores cnn_compare(double target, bool with_local, bool with_hybrid) {
  CnnScores out;
  auto& runs = cnn_runs();
  for (std::uint64_t s = 0; s < runs.size(); ++s) {
    const CnnRun& r = runs[s];
    CompressionPlan plan = plan_for_target(r.net, target, boundary_layers(r.net));
    const auto slices = activation_partition(r.net);
    const TrainConfig lc = make_config(kCnnEpochs, 1e-3, 8, s);
    const TrainConfig gc = make_config(kCnnEpochs, 5e-4, 16, s);
    Network raw = tensorize_slice(r.net, r.net.full(), plan);
    out.cr.push_back(compression_rate(r.net, raw));
    out.global.push_back(evaluate(global_finetune(raw, r.train, gc, nullptr), r.test).accuracy);
    if (with_local) out.local.push_back(evaluate(local_tensorize(r.net, r.train, slices, plan, lc).network, r.test).accuracy);
    if (with_hybrid) {
      TrainConfig lh = lc, gh = gc;
      lh.epochs = (kCnnEpochs + 1) / 2;
      gh.epochs = kCnnEpochs / 2;
      out.hybrid.push_back(evaluate(hybrid_local_global(r.net, r.train, slices, plan, lh, gh).network, r.test).accuracy);
    }
  }
  return out;
}

std::string baselines() {
  std::vector<double> b;
  for (const auto& r : cnn_runs()) b.push_back(r.baseline);
  return join(b);
}

Outcome local_vs_global() {
  CnnScores s = cnn_compare(0.5, true, false);
  const double l = median(s.local), g = median(s.global);
  return {l >= g, fmt("CR %.4f, local median %.4f [%s] >= global median %.4f [%s], baselines [%s]", median(s.cr), l,
                      join(s.local).c_str(), g, join(s.global).c_str(), baselines().c_str())};
}

Outcome hybrid_vs_global() {
  CnnScores s = cnn_compare(0.75, true, true);
  const double h = median(s.hybrid), g = median(s.global), l = median(s.local);
  return {h >= g, fmt("CR %.4f, hybrid median %.4f [%s] >= global median %.4f [%s] (local-only %.4f)", median(s.cr), h,
                      join(s.hybrid).c_str(), g, join(s.global).c_str(), l)};
}

Outcome data_efficiency() {
  auto& runs = mlp_runs();
  std::vector<double> medians;
  std::string detail;
  for (double f : {1.0, 0.6, 0.2}) {
    std::vector<double> acc;
    for (std::size_t s = 0; s < runs.size(); ++s) acc.push_back(mlp_local(runs[s], s, f));
    medians.push_back(median(acc));
    detail += fmt("f=%.1f median %.4f [%s]; ", f, medians.back(), join(acc).c_str());
  }
  const double spread = *std::max_element(medians.begin(), medians.end()) - *std::min_element(medians.begin(), medians.end());
  return {spread <= 0.02, detail + fmt("spread %.4f <= 0.02", spread)};
}

Outcome scheduler() {
  const MlpRun& r = mlp_runs()[0];
  std::vector<std::string> sums;
  for (std::size_t w : {1, 2, 4}) {
    Network n;
    mlp_local(r, 0, 1.0, w, &n);
    sums.push_back(network_checksum(n));
  }
  const bool same = sums[0] == sums[1] && sums[1] == sums[2];

  // four equal-cost slice jobs: the same distillation repeated
  std::vector<double> eff;
  const auto slices = activation_partition(r.net);
  FeatureCache cache = capture_features(r.net, r.train, {slices[1]}, 1.0, 0)[0];
  Network t = tensorize_slice(r.net, slices[1], restrict_plan(r.plan, slices[1]));
  const std::string sum = network_checksum(r.net);
  const TrainConfig c = make_config(3, 1e-3, 8, 0);
  std::vector<std::function<void()>> jobs;
  for (int k = 0; k < 4; ++k)
    jobs.push_back([&]() {
      std::vector<Layer> layers;
      for (std::size_t l = slices[1].start; l < slices[1].end; ++l) layers.push_back(t.layer(l));
      distill_slice(layers, cache, c, sum);
    });
  for (int rep = 0; rep < 3; ++rep) eff.push_back(run_jobs_or_throw(jobs, 4).efficiency);
  const unsigned hw = std::thread::hardware_concurrency();
  const double e = median(eff);
  std::string detail = fmt("parameters identical for workers 1/2/4: %s; efficiency with 4 jobs on 4 workers %.3f", same ? "yes" : "no", e);
  if (hw >= 4) return {same && e >= 0.6, detail + " (>= 0.6 required)"};
  return {same, detail + fmt(" (efficiency bound not applicable: %u hardware thread%s)", hw, hw == 1 ? "" : "s")};
}

Outcome slice_invariants() {
  Dataset train = make_spirals(400, 31);
  Network net = train_network(toy_mlp(9, 16), train, make_config(8, 3e-3, 16, 9), nullptr);
  const auto slices = partition(net, {2, 4});
  std::size_t violations = 0;

  auto caches = capture_features(net, train, slices, 0.5, 3);
  if (caches.size() != 3) return {false, "expected 3 caches"};
  if (!(caches[0].inputs == gather_rows(train.inputs, caches[0].sample_indices))) ++violations;
  for (std::size_t i = 0; i + 1 < caches.size(); ++i)
    if (!(caches[i].outputs == caches[i + 1].inputs)) ++violations;
  if (!(caches[2].outputs == forward(net, caches[0].inputs))) ++violations;

  CompressionPlan plan;
  for (std::size_t l : {0, 2, 4}) {
    const auto& d = std::get<Dense>(net.layer(l));
    LayerPlan e;
    e.layer = l;
    e.method = PlanMethod::mpo;
    const auto [a, b] = balanced_factor(d.w.dim(1));
    const auto [c, f] = balanced_factor(d.w.dim(0));
    e.in_dims = {a, b};
    e.out_dims = {c, f};
    e.bonds = {2};
    plan.layers.push_back(e);
  }
  const TrainConfig cfg = make_config(2, 1e-3, 8, 4);
  LocalResult all = local_tensorize(net, train, slices, plan, cfg);
  for (std::size_t i = 0; i < slices.size(); ++i) {
    LocalResult one = local_tensorize(net, train, slices, restrict_plan(plan, slices[i]), cfg);
    for (std::size_t l = 0; l < net.size(); ++l) {
      const Layer& expect = slices[i].contains(l) ? all.network.layer(l) : net.layer(l);
      auto pa = named_parameters(one.network.layer(l)), pb = named_parameters(expect);
      bool same = pa.size() == pb.size() && layer_kind(one.network.layer(l)) == layer_kind(expect);
      for (std::size_t k = 0; same && k < pa.size(); ++k) same = *pa[k].second == *pb[k].second;
      if (!same) ++violations;
    }
  }
  return {violations == 0, fmt("3 slices: boundary activations and per-slice healing, %zu bit-level mismatches", violations)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "exact reconstruction", 10, exact_reconstruction},
      {2, "truncation error equals discarded energy", 5, eckart_young},
      {3, "gradient oracle", 60, gradient_oracle},
      {4, "compression-rate arithmetic", 5, cr_arithmetic},
      {5, "local recovery on the toy MLP", 180, local_recovery},
      {6, "local >= global on the toy CNN at CR 0.5", 600, local_vs_global},
      {7, "hybrid >= global on the toy CNN at CR 0.75", 600, hybrid_vs_global},
      {8, "feature-fraction insensitivity", 300, data_efficiency},
      {9, "scheduler determinism and speedup", 300, scheduler},
      {10, "slice independence and boundaries", 30, slice_invariants},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s <= c.limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("criterion %2d %s: %s | %s | %.1f s of %.0f s%s\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), s, c.limit_s, in_time ? "" : " (over time)");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
