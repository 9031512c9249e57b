#include "mtk/client.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mtk/error.hpp"
#include "mtk/parallel.hpp"
#include "mtk/protocol.hpp"

namespace mtk {

FactorSet reconstruct_factors(std::span<const InputPoint> xcheck, const MixedEffectConfig& cfg) {
  return factorize(xcheck, cfg);
}

ClientModel active_refresh(ServiceClient& conn, const MixedEffectConfig& cfg) {
  constexpr int kAttempts = 16;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    DisclosedDB db = conn.get_disclosed();
    msg::TaskCoeffs tc = conn.get_task_coeffs();
    if (tc.epoch != db.epoch) continue;  // a write landed between the two reads

    ClientModel model;
    model.task = conn.task();
    model.factors = reconstruct_factors(db.xcheck, cfg);
    const CondensedSolution sol = compute_bias_and_acheck(db.ycheck, db.H, model.factors, cfg.alpha);
    model.b = sol.b;
    model.acheck = sol.acheck;
    model.a_task = std::move(tc.a);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < db.n(); ++i) index.emplace(db.xcheck[i].key, i);
    for (const auto& key : tc.keys) {
      const auto it = index.find(key);
      if (it == index.end()) throw Error(ErrorCode::UnknownKey, "task input '" + key + "' is not in the disclosed inputs");
      model.task_inputs.push_back(db.xcheck[it->second]);
    }
    model.disclosed = std::move(db);
    return model;
  }
  throw Error(ErrorCode::Transport, "could not read disclosed data and task coefficients at one epoch");
}

ClientModel passive_refresh(TaskId task, const DisclosedDB& snapshot, const PrivateData& data,
                            const MixedEffectConfig& cfg) {
  ServerState local;
  local.cfg = cfg;
  local.disclosed = snapshot;
  local.factors = reconstruct_factors(snapshot.xcheck, cfg);
  Server server(std::move(local));
  for (const auto& ex : data.examples) server.receive_example(task, ex.x, ex.y, ex.w);

  ClientModel model;
  model.task = task;
  model.factors = server.factors();
  model.disclosed = server.get_disclosed();
  model.disclosed.epoch = snapshot.epoch;
  const CondensedSolution sol =
      compute_bias_and_acheck(model.disclosed.ycheck, model.disclosed.H, model.factors, cfg.alpha);
  model.b = sol.b;
  model.acheck = sol.acheck;
  if (const TaskState* t = server.task(task)) {
    model.a_task = task_coefficients(t->R, t->y, t->h, model.factors, model.disclosed.H, sol, cfg.alpha);
    model.task_inputs = server.task_inputs(task);
  }
  return model;
}

double predict_client(const ClientModel& model, const MixedEffectConfig& cfg, const InputPoint& x) {
  return evaluate_estimate(cfg, model.task, model.disclosed.xcheck, model.acheck, model.b, model.task_inputs,
                           model.a_task, x);
}

double squash(double f) noexcept { return 1.0 / (1.0 + std::exp(-f / 2.0)); }

double preference_score(const ClientModel& model, const MixedEffectConfig& cfg, const InputPoint& x) {
  return squash(predict_client(model, cfg, x));
}

double condensed_identity_residual(const ClientModel& model) {
  const auto& f = model.factors;
  const auto& db = model.disclosed;
  const std::size_t n = db.n();
  const std::size_t d = f.M.cols();
  Vector mb(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mb[i] += f.M(i, k) * model.b[k];
  }
  Vector t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = db.ycheck[i] + mb[i];
  Vector ht(n);
  par::sym_matvec(db.H, t, ht);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // (L^T ă)_i = ă_i + sum_{r > i} L(r, i) ă_r
    double lta = model.acheck[i];
    for (std::size_t r = i + 1; r < n; ++r) lta += f.L(r, i) * model.acheck[r];
    const double lhs = f.D[i] * lta;
    worst = std::max(worst, std::abs(lhs - ht[i] + f.D[i] * mb[i]));
  }
  return worst;
}

}  // namespace mtk
