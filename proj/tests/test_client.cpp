#include <doctest.h>

#include <cmath>

#include "mtk/client.hpp"
#include "mtk/protocol.hpp"
#include "support.hpp"

using namespace mtk;
using namespace mtk::test;

namespace {

DaemonConfig daemon_config(const MixedEffectConfig& cfg, std::size_t m) {
  DaemonConfig dc;
  dc.model = cfg;
  for (std::size_t j = 0; j < m; ++j) dc.tokens[static_cast<TaskId>(j)] = "secret-" + std::to_string(j);
  return dc;
}

void submit_all(Transport& t, const DaemonConfig& dc, const std::vector<Triple>& triples) {
  for (const auto& tr : triples) ServiceClient(t, tr.task, dc.tokens.at(tr.task)).submit(tr.x, tr.y, tr.w);
}

}  // namespace

TEST_SUITE("client") {
  TEST_CASE("reconstruct_factors") {
    MixedEffectConfig cfg;
    cfg.bias = BiasBasis::constant();
    const FactorSet empty = reconstruct_factors({}, cfg);
    CHECK(empty.order() == 0);
    CHECK(empty.M.rows() == 0);

    Rng rng(1);
    const auto one = random_points("p", 1, rng);
    const FactorSet f1 = reconstruct_factors(one, cfg);
    CHECK(f1.D[0] == doctest::Approx(std::exp(1.0)));
    CHECK(f1.M(0, 0) == doctest::Approx(std::exp(-1.0)));

    const Instance in = random_instance(2, 0.5, 0.1, 1, Shape{3, 4, 5});
    Server s(in.cfg);
    for (const auto& t : in.ds.triples) s.receive_example(t.task, t.x, t.y, t.w);
    CHECK(reconstruct_factors(s.disclosed().xcheck, in.cfg) == s.factors());
  }

  TEST_CASE("compute_bias_and_acheck") {
    const Instance in = random_instance(3, 0.5, 0.1, 1, Shape{3, 6, 8});
    Server s(in.cfg);
    for (const auto& t : in.ds.triples) s.receive_example(t.task, t.x, t.y, t.w);
    const Vector zeros(s.disclosed().n(), 0.0);
    const CondensedSolution z = compute_bias_and_acheck(zeros, s.disclosed().H, s.factors(), in.cfg.alpha);
    CHECK(std::all_of(z.b.begin(), z.b.end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(z.acheck.begin(), z.acheck.end(), [](double v) { return v == 0.0; }));

    // ă equals the group sum of the full-system coefficients.
    const CondensedSolution sol = compute_bias_and_acheck(s.disclosed().ycheck, s.disclosed().H, s.factors(), in.cfg.alpha);
    const OfflineFit full = solve_full_system(in.ds, in.cfg);
    Vector grouped(s.disclosed().n(), 0.0);
    for (std::size_t i = 0; i < in.ds.triples.size(); ++i) grouped[find(in.ds.triples[i].x, s.disclosed().xcheck)] += full.coeffs.a[i];
    CHECK(max_rel_diff(grouped, sol.acheck) <= 1e-8);
    CHECK(rel_diff(sol.b[0], full.coeffs.b[0]) <= 1e-8);
  }

  TEST_CASE("without bias ă solves D L^T ă = H y̆") {
    const Instance in = random_instance(4, 0.5, 0.1, 0, Shape{3, 6, 8});
    Server s(in.cfg);
    for (const auto& t : in.ds.triples) s.receive_example(t.task, t.x, t.y, t.w);
    const auto& db = s.disclosed();
    const CondensedSolution sol = compute_bias_and_acheck(db.ycheck, db.H, s.factors(), in.cfg.alpha);
    CHECK(sol.b.empty());
    const Eigen::VectorXd lhs = Eigen::Map<const Eigen::VectorXd>(s.factors().D.values().data(), static_cast<Eigen::Index>(db.n())).asDiagonal() *
                                to_dense(s.factors().L).transpose() *
                                Eigen::Map<const Eigen::VectorXd>(sol.acheck.data(), static_cast<Eigen::Index>(db.n()));
    const Eigen::VectorXd rhs = dense(db.H) * Eigen::Map<const Eigen::VectorXd>(db.ycheck.data(), static_cast<Eigen::Index>(db.n()));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
  }

  TEST_CASE("active refresh") {
    const Instance in = random_instance(5, 0.5, 0.1, 1, Shape{4, 5, 12});
    const DaemonConfig dc = daemon_config(in.cfg, in.ds.m);
    Daemon daemon(dc);
    LoopbackTransport t(daemon);
    ServiceClient conn(t, 0, dc.tokens.at(0));

    const ClientModel fresh = active_refresh(conn, in.cfg);
    CHECK(fresh.a_task.empty());
    CHECK(predict_client(fresh, in.cfg, in.probes[0]) == 0.0);

    std::vector<Triple> own;
    std::vector<Triple> foreign;
    for (const auto& tr : in.ds.triples) (tr.task == 0 ? own : foreign).push_back(tr);
    submit_all(t, dc, own);
    const ClientModel mine = active_refresh(conn, in.cfg);
    const Dataset own_ds{own, in.ds.m};
    const OfflineFit alone = algorithm1(own_ds, in.cfg).fit;
    for (const auto& p : in.probes) CHECK(rel_diff(predict_client(mine, in.cfg, p), predict(alone, in.cfg, 0, p)) <= 1e-8);

    submit_all(t, dc, foreign);
    const ClientModel all = active_refresh(conn, in.cfg);
    const OfflineFit joint = algorithm1(in.ds, in.cfg).fit;
    for (const auto& p : in.probes) CHECK(rel_diff(predict_client(all, in.cfg, p), predict(joint, in.cfg, 0, p)) <= 1e-8);
    CHECK(condensed_identity_residual(all) <= 1e-10 * std::max(1.0, max_abs(Eigen::Map<const Eigen::VectorXd>(all.disclosed.ycheck.data(), static_cast<Eigen::Index>(all.disclosed.n())))));

    // Idempotence at a fixed epoch.
    CHECK(active_refresh(conn, in.cfg) == all);
  }

  TEST_CASE("passive refresh") {
    const Instance in = random_instance(6, 0.5, 0.1, 0, Shape{4, 6, 10});
    const DaemonConfig dc = daemon_config(in.cfg, in.ds.m + 1);
    Daemon daemon(dc);
    LoopbackTransport t(daemon);
    submit_all(t, dc, in.ds.triples);
    const TaskId me = static_cast<TaskId>(in.ds.m);
    ServiceClient conn(t, me, dc.tokens.at(me));
    const DisclosedDB snap = conn.get_disclosed();

    const ClientModel bare = passive_refresh(me, snap, {}, in.cfg);
    CHECK(bare.a_task.empty());
    CHECK(bare.disclosed == snap);
    const ClientModel downloaded = active_refresh(conn, in.cfg);
    for (const auto& p : in.probes) CHECK(predict_client(bare, in.cfg, p) == predict_client(downloaded, in.cfg, p));

    // Private inputs that the server already knows: n unchanged.
    PrivateData known;
    for (std::size_t i = 0; i < 3; ++i) known.examples.push_back({snap.xcheck[i % snap.n()], 0.5 * static_cast<double>(i), 1.0});
    const ClientModel pm = passive_refresh(me, snap, known, in.cfg);
    CHECK(pm.disclosed.n() == snap.n());
    CHECK(pm.epoch() == snap.epoch);

    Dataset uni = in.ds;
    uni.m += 1;
    for (const auto& e : known.examples) uni.triples.push_back({me, e.x, e.y, e.w});
    const OfflineFit oracle = algorithm1(uni, in.cfg).fit;
    for (const auto& p : in.probes) CHECK(rel_diff(predict_client(pm, in.cfg, p), predict(oracle, in.cfg, me, p)) <= 1e-8);
  }

  TEST_CASE("alpha = 1 makes every client predict the same") {
    const Instance in = random_instance(7, 1.0, 0.1, 1, Shape{4, 6, 10});
    const DaemonConfig dc = daemon_config(in.cfg, in.ds.m);
    Daemon daemon(dc);
    LoopbackTransport t(daemon);
    submit_all(t, dc, in.ds.triples);
    ServiceClient c0(t, 0, dc.tokens.at(0));
    const ClientModel m0 = active_refresh(c0, in.cfg);
    for (std::size_t j = 1; j < in.ds.m; ++j) {
      ServiceClient cj(t, static_cast<TaskId>(j), dc.tokens.at(static_cast<TaskId>(j)));
      const ClientModel mj = active_refresh(cj, in.cfg);
      for (const auto& p : in.probes) CHECK(predict_client(mj, in.cfg, p) == doctest::Approx(predict_client(m0, in.cfg, p)).epsilon(1e-12));
    }
  }

  TEST_CASE("preference scores") {
    CHECK(squash(0.0) == 0.5);
    CHECK(squash(1e6) == doctest::Approx(1.0));
    CHECK(squash(2.0) == doctest::Approx(0.731059).epsilon(1e-6));
  }
}
