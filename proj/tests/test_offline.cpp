#include <doctest.h>

#include "minimal_solver.hpp"
#include "mtk/offline.hpp"
#include "support.hpp"

using namespace mtk;
using namespace mtk::test;

namespace {

InputPoint pt(std::string key, Vector z) { return {std::move(key), normalize(z)}; }

// Assembled saddle system over raw triples, built entry by entry.
double full_system_residual(const Dataset& ds, const MixedEffectConfig& cfg, const OfflineFit& fit) {
  const std::size_t l = ds.triples.size();
  const std::size_t d = cfg.bias.dim();
  double worst = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    const Triple& ti = ds.triples[i];
    double row = cfg.lambda * ti.w * fit.coeffs.a[i];
    for (std::size_t j = 0; j < l; ++j) row += eval_mixed(cfg, ti.x, ti.task, ds.triples[j].x, ds.triples[j].task) * fit.coeffs.a[j];
    const Vector psi = cfg.bias(ti.x);
    for (std::size_t q = 0; q < d; ++q) row += psi[q] * cfg.alpha * fit.coeffs.b[q];
    worst = std::max(worst, std::abs(row - ti.y));
  }
  if (cfg.alpha != 0.0) {
    for (std::size_t q = 0; q < d; ++q) {
      double row = 0.0;
      for (std::size_t j = 0; j < l; ++j) row += cfg.bias(ds.triples[j].x)[q] * fit.coeffs.a[j];
      worst = std::max(worst, std::abs(row));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("offline-solver") {
  TEST_CASE("index structures") {
    const InputPoint x = pt("x", {1, 0});
    const InputPoint y = pt("y", {0, 1});
    Dataset ds{{{0, x, 1, 1}, {0, x, 2, 1}, {0, y, 3, 1}}, 1};
    IndexStructures idx = build_index_structures(ds);
    CHECK(idx.n() == 2);
    CHECK(idx.h[0] == std::vector<std::size_t>{0, 0, 1});
    CHECK(idx.k[0] == std::vector<std::size_t>{0, 1, 2});

    Dataset two{{{0, x, 1, 1}, {1, x, 2, 1}}, 2};
    CHECK(build_index_structures(two).n() == 1);

    const Instance in = random_instance(77, 0.5, 0.1, 0, Shape{4, 5, 6});
    idx = build_index_structures(in.ds);
    for (std::size_t j = 0; j < in.ds.m; ++j) {
      for (std::size_t i = 0; i < idx.k[j].size(); ++i) CHECK(idx.unique[idx.h[j][i]] == in.ds.triples[idx.k[j][i]].x);
    }
  }

  TEST_CASE("merge_repeats uses the harmonic weight and the weighted mean") {
    const InputPoint x = pt("x", {1, 0});
    const InputPoint y = pt("y", {0, 1});
    const Dataset ds{{{0, x, 1, 2}, {0, y, 5, 1}, {0, x, 3, 2}, {1, x, 7, 1}}, 2};
    const Dataset m = merge_repeats(ds);
    REQUIRE(m.triples.size() == 3);
    CHECK(m.triples[0].x.key == "x");
    CHECK(m.triples[0].w == doctest::Approx(1.0));
    CHECK(m.triples[0].y == doctest::Approx(2.0));
    CHECK(m.triples[2].task == 1);
    CHECK(m.triples[2].y == 7);
  }

  TEST_CASE("solve_full_system scalar example") {
    MixedEffectConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda = 1.0;
    const Dataset ds{{{0, pt("x", {1, 0}), 2.0, 1.0}}, 1};
    const OfflineFit fit = solve_full_system(ds, cfg);
    CHECK(fit.coeffs.a[0] == doctest::Approx(1.0));
  }

  TEST_CASE("solve_full_system residual") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      MixedEffectConfig cfg;
      cfg.alpha = rng.uniform(0.1, 0.9);
      cfg.lambda = 0.3;
      cfg.bias = BiasBasis::constant();
      Dataset ds;
      ds.m = 3;
      const auto pool = random_points("p", 8, rng);
      for (TaskId j = 0; j < 3; ++j) {
        for (int i = 0; i < 4; ++i) ds.triples.push_back({j, pool[rng.index(8)], rng.normal(), rng.uniform(0.5, 2)});
      }
      CHECK(full_system_residual(ds, cfg, solve_full_system(ds, cfg)) <= 1e-10);
    }
  }

  TEST_CASE("duplicate tasks at alpha = 1 equal the pooled single-task fit") {
    Rng rng(3);
    const auto pool = random_points("p", 6, rng);
    MixedEffectConfig cfg;
    cfg.alpha = 1.0;
    cfg.lambda = 0.2;
    Dataset one{{}, 1};
    for (int i = 0; i < 6; ++i) one.triples.push_back({0, pool[static_cast<std::size_t>(i)], rng.normal(), 1.0});
    Dataset twice{{}, 3};
    for (TaskId j = 0; j < 3; ++j) {
      for (const auto& t : one.triples) twice.triples.push_back({j, t.x, t.y, t.w});
    }
    const OfflineFit a = solve_full_system(one, cfg);
    const OfflineFit b = solve_full_system(twice, cfg);
    for (const auto& p : pool) {
      for (TaskId j = 0; j < 3; ++j) CHECK(predict(b, cfg, j, p) == doctest::Approx(predict(b, cfg, 0, p)).epsilon(1e-12));
    }
    // Three copies of each triple act like one triple with a third of the weight.
    Dataset thirds = one;
    for (auto& t : thirds.triples) t.w /= 3.0;
    const OfflineFit c = solve_full_system(thirds, cfg);
    for (const auto& p : pool) CHECK(predict(b, cfg, 1, p) == doctest::Approx(predict(c, cfg, 0, p)).epsilon(1e-9));
    (void)a;
  }

  TEST_CASE("solve_backfit without bias solves (K + lambda W) a = y") {
    const Instance in = random_instance(8, 0.4, 0.5, 0, Shape{3, 6, 10});
    const OfflineFit f = solve_backfit(in.ds, in.cfg);
    CHECK(full_system_residual(in.ds, in.cfg, f) <= 1e-10);
  }

  TEST_CASE("solvers agree pairwise on random instances") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const double alphas[] = {0.0, 0.25, 0.5, 1.0};
      const Instance in = random_instance(400 + seed, alphas[seed % 4], seed % 3 ? 0.1 : 1.0, (seed / 4) % 2);
      const OfflineFit full = solve_full_system(in.ds, in.cfg);
      const OfflineFit back = solve_backfit(in.ds, in.cfg);
      const Algorithm1Result alg = algorithm1(in.ds, in.cfg);
      const Vector pf = fit_predictions(full, in.cfg, in.probes);
      CHECK(max_rel_diff(pf, fit_predictions(back, in.cfg, in.probes)) <= 1e-8);
      CHECK(max_rel_diff(pf, fit_predictions(alg.fit, in.cfg, in.probes)) <= 1e-8);

      // ă is the group sum of the oracle's raw coefficients.
      const IndexStructures& idx = alg.fit.index;
      Vector grouped(idx.n(), 0.0);
      const IndexStructures raw = build_index_structures(in.ds);
      for (std::size_t j = 0; j < in.ds.m; ++j) {
        for (std::size_t i = 0; i < raw.k[j].size(); ++i) {
          grouped[find(raw.unique[raw.h[j][i]], idx.unique)] += full.coeffs.a[raw.k[j][i]];
        }
      }
      if (in.cfg.alpha != 0.0) CHECK(max_rel_diff(grouped, alg.fit.coeffs.acheck) <= 1e-8);
    }
  }

  TEST_CASE("alpha = 0 gives independent per-task ridge fits") {
    const Instance in = random_instance(21, 0.0, 0.1, 0, Shape{4, 8, 10});
    const OfflineFit alg = algorithm1(in.ds, in.cfg).fit;
    CHECK(alg.coeffs.b.empty());
    for (std::size_t j = 0; j < in.ds.m; ++j) {
      std::vector<minimal::Example> ex;
      for (const auto& t : in.ds.triples) {
        if (t.task == j) ex.push_back({t.x, t.y, t.w});
      }
      const auto model = minimal::fit(ex, in.cfg.ktilde(static_cast<TaskId>(j)), in.cfg.lambda, BiasBasis::none());
      for (const auto& p : in.probes) CHECK(rel_diff(model(p), predict(alg, in.cfg, static_cast<TaskId>(j), p)) <= 1e-9);
    }
  }

  TEST_CASE("alpha = 1 with bias matches an independent pooled solve") {
    const Instance in = random_instance(22, 1.0, 0.1, 1, Shape{4, 8, 10});
    const OfflineFit back = solve_backfit(in.ds, in.cfg);
    std::vector<minimal::Example> ex;
    for (const auto& t : in.ds.triples) ex.push_back({t.x, t.y, t.w});
    const auto model = minimal::fit(ex, in.cfg.kbar, in.cfg.lambda, in.cfg.bias);
    for (const auto& p : in.probes) CHECK(rel_diff(model(p), predict(back, in.cfg, 0, p)) <= 1e-9);
  }

  TEST_CASE("one example with a constant bias is fit exactly") {
    for (const double alpha : {0.25, 0.5, 1.0}) {
      MixedEffectConfig cfg;
      cfg.alpha = alpha;
      cfg.lambda = 0.7;
      cfg.bias = BiasBasis::constant();
      const InputPoint x = pt("x", {1, 2});
      const Dataset ds{{{0, x, 1.7, 1.3}}, 1};
      // [[k + lambda w, 1], [1, 0]] (a, alpha b) = (y, 0) gives a = 0 and alpha b = y.
      for (const OfflineFit& f : {solve_full_system(ds, cfg), algorithm1(ds, cfg).fit}) {
        CHECK(f.coeffs.a[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(alpha * f.coeffs.b[0] == doctest::Approx(1.7));
        CHECK(predict(f, cfg, 0, pt("other", {-1, 0.3})) == doctest::Approx(1.7));
      }
    }
  }

  TEST_CASE("predict examples") {
    const Instance in = random_instance(30, 1.0, 0.1, 1, Shape{3, 6, 8});
    const OfflineFit f = algorithm1(in.ds, in.cfg).fit;
    for (const auto& p : in.probes) {
      for (std::size_t j = 1; j < in.ds.m; ++j) CHECK(predict(f, in.cfg, static_cast<TaskId>(j), p) == predict(f, in.cfg, 0, p));
    }
    ModelCoefficients zero = f.coeffs;
    std::fill(zero.acheck.begin(), zero.acheck.end(), 0.0);
    std::fill(zero.b.begin(), zero.b.end(), 0.0);
    for (auto& a : zero.a_task) std::fill(a.begin(), a.end(), 0.0);
    CHECK(predict(zero, in.cfg, f.index, 0, in.probes[0]) == 0.0);
    CHECK(error_code([&] { predict(f, in.cfg, static_cast<TaskId>(in.ds.m), in.probes[0]); }) == ErrorCode::UnknownTask);
  }

  TEST_CASE("invalid datasets are rejected") {
    MixedEffectConfig cfg;
    const InputPoint x = pt("x", {1});
    CHECK(error_code([&] { algorithm1(Dataset{{{2, x, 1, 1}}, 2}, cfg); }) == ErrorCode::UnknownTask);
    CHECK(error_code([&] { algorithm1(Dataset{{{0, x, 1, 0}}, 1}, cfg); }) == ErrorCode::NonPositiveWeight);
    CHECK(error_code([&] { solve_full_system(Dataset{{{0, x, NAN, 1}}, 1}, cfg); }) == ErrorCode::InvalidArgument);
  }
}
