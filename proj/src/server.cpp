#include "mtk/server.hpp"

#include <algorithm>
#include <cmath>

#include "mtk/error.hpp"
#include "mtk/parallel.hpp"

namespace mtk {

namespace {

void add_scaled(Vector& dst, std::span<const double> v, double s) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * v[i];
}

}  // namespace

Server::Server(MixedEffectConfig cfg) {
  cfg.validate();
  state_.cfg = std::move(cfg);
  state_.factors.M = BiasMap(state_.cfg.bias.dim());
}

Server::Server(ServerState state) : state_(std::move(state)) {
  state_.cfg.validate();
  const auto& db = state_.disclosed;
  const auto& f = state_.factors;
  const std::size_t n = db.n();
  if (db.ycheck.size() != n || db.H.order() != n || f.L.order() != n || f.D.size() != n || f.M.rows() != n ||
      f.M.cols() != state_.cfg.bias.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "server state arrays disagree with the number of unique inputs");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!key_index_.emplace(db.xcheck[i].key, i).second) {
      throw Error(ErrorCode::ShapeMismatch, "duplicate key '" + db.xcheck[i].key + "' in unique inputs");
    }
  }
  for (const auto& [j, t] : state_.tasks) {
    const std::size_t l = t.h.size();
    if (t.y.size() != l || t.w.size() != l || t.R.order() != l) {
      throw Error(ErrorCode::ShapeMismatch, "task " + std::to_string(j) + " arrays disagree in length");
    }
    for (std::size_t s : t.h) {
      if (s >= n) throw Error(ErrorCode::ShapeMismatch, "task " + std::to_string(j) + " refers to a missing input");
    }
  }
}

const TaskState* Server::task(TaskId j) const {
  const auto it = state_.tasks.find(j);
  return it == state_.tasks.end() ? nullptr : &it->second;
}

std::vector<InputPoint> Server::task_inputs(TaskId j) const {
  std::vector<InputPoint> out;
  if (const TaskState* t = task(j)) {
    out.reserve(t->size());
    for (std::size_t s : t->h) out.push_back(state_.disclosed.xcheck[s]);
  }
  return out;
}

void Server::check_triple(TaskId j, const InputPoint& x, double y, double w) const {
  if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorCode::NonPositiveWeight, "weight must be positive and finite");
  if (!std::isfinite(y)) throw Error(ErrorCode::InvalidArgument, "output must be finite");
  state_.cfg.kbar.check(x);
  state_.cfg.ktilde(j).check(x);
  (void)state_.cfg.bias(x);
}

UpdateReceipt Server::receive_example(TaskId j, const InputPoint& x, double y, double w) {
  check_triple(j, x, y, w);
  UpdateReceipt receipt;
  const auto found = key_index_.find(x.key);
  if (found == key_index_.end()) {
    apply_case3(j, x, y, w);
    receipt.kind = UpdateCase::NewInput;
  } else {
    const std::size_t s = found->second;
    const TaskState* t = task(j);
    std::size_t p = t ? t->size() : 0;
    if (t) p = static_cast<std::size_t>(std::find(t->h.begin(), t->h.end(), s) - t->h.begin());
    if (t && p < t->size()) {
      apply_case1(j, p, y, w);
      receipt.kind = UpdateCase::RepeatTask;
    } else {
      apply_case2(j, s, y, w);
      receipt.kind = UpdateCase::RepeatGlobal;
    }
  }
  receipt.epoch = ++state_.disclosed.epoch;
  return receipt;
}

void Server::apply_case1(TaskId j, std::size_t p, double y, double w) {
  auto it = state_.tasks.find(j);
  if (it == state_.tasks.end() || p >= it->second.size()) throw Error(ErrorCode::InvalidArgument, "no such task slot");
  if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorCode::NonPositiveWeight, "weight must be positive and finite");
  TaskState& t = it->second;
  const double alpha = state_.cfg.alpha;
  const double lambda = state_.cfg.lambda;

  const double w_old = t.w[p];
  const double y_old = t.y[p];
  const double w_new = w_old * w / (w_old + w);
  const double dy = w_new / w * (y - y_old);

  // The merge lowers the slot's diagonal entry of R^{-1} by
  // c = lambda (w_old - w_new) = lambda w_old^2 / (w_old + w), so by
  // Sherman-Morrison gamma = 1 / (1/c - R_pp).
  const double inv_c = (w_old + w) / (lambda * w_old * w_old);
  const double denom = inv_c - t.R(p, p);
  if (!(denom > kSingularEps)) throw Error(ErrorCode::SingularUpdate, "merged task block is not positive definite");
  const double gamma = 1.0 / denom;

  const Vector u = t.R.column(p);
  Vector y_new = t.y;
  y_new[p] = y_old + dy;
  const double mu = dy + gamma * dot(u, y_new);

  const FactorSet& f = state_.factors;
  Vector v(f.order());
  par::gather_lt(f.L, t.h, u, v);
  SmwPlan plan;
  if (alpha != 0.0) plan = plan_smw(state_.disclosed.H, v, alpha * gamma);

  t.w[p] = w_new;
  t.y = std::move(y_new);
  par::sym_rank_one_update(t.R, u, gamma);
  add_scaled(state_.disclosed.ycheck, v, mu);
  if (alpha != 0.0) apply_smw(state_.disclosed.H, plan);
}

void Server::apply_case2(TaskId j, std::size_t s, double y, double w) {
  auto& db = state_.disclosed;
  if (s >= db.n()) throw Error(ErrorCode::InvalidArgument, "unique input index out of range");
  if (!(w > 0.0) || !std::isfinite(w)) throw Error(ErrorCode::NonPositiveWeight, "weight must be positive and finite");
  const double alpha = state_.cfg.alpha;
  static const TaskState kEmpty{};
  const TaskState* existing = task(j);
  const TaskState& t = existing ? *existing : kEmpty;
  if (std::find(t.h.begin(), t.h.end(), s) != t.h.end()) throw Error(ErrorCode::InvalidArgument, "input already belongs to the task");

  const InputPoint& x = db.xcheck[s];
  const KernelSpec& kt = state_.cfg.ktilde(j);
  Vector ktilde(t.size() + 1);
  for (std::size_t i = 0; i < t.size(); ++i) ktilde[i] = (1.0 - alpha) * kt(x, db.xcheck[t.h[i]]);
  ktilde[t.size()] = (1.0 - alpha) * kt(x, x);

  SchurEnlargement sch = schur_enlarge_inverse(t.R, ktilde, state_.cfg.lambda * w);

  std::vector<std::size_t> h = t.h;
  h.push_back(s);
  Vector yj = t.y;
  yj.push_back(y);
  const double mu = sch.gamma * dot(sch.u, yj);

  const FactorSet& f = state_.factors;
  Vector v(f.order());
  par::gather_lt(f.L, h, sch.u, v);
  SmwPlan plan;
  if (alpha != 0.0) plan = plan_smw(db.H, v, alpha * sch.gamma);

  TaskState& dst = state_.tasks[j];
  dst.h = std::move(h);
  dst.y = std::move(yj);
  dst.w.push_back(w);
  dst.R = std::move(sch.R);
  add_scaled(db.ycheck, v, mu);
  if (alpha != 0.0) apply_smw(db.H, plan);
}

void Server::apply_case3(TaskId j, const InputPoint& x, double y, double w) {
  auto& db = state_.disclosed;
  auto& f = state_.factors;
  if (key_index_.contains(x.key)) throw Error(ErrorCode::InvalidArgument, "input is already known");
  const InputAppend app = plan_input_append(f, db.xcheck, x, state_.cfg);

  const std::size_t s = db.n();
  db.xcheck.push_back(x);
  db.ycheck.push_back(0.0);
  db.H.enlarge(app.step.beta);
  commit_append(f, app.step, app.m_row);
  key_index_.emplace(x.key, s);
  try {
    apply_case2(j, s, y, w);
  } catch (...) {
    key_index_.erase(x.key);
    f.M.pop_row();
    f.D.pop();
    f.L.pop_row();
    db.H.shrink();
    db.ycheck.pop_back();
    db.xcheck.pop_back();
    throw;
  }
}

Vector Server::get_task_coefficients(TaskId j) const {
  const TaskState* t = task(j);
  if (!t) throw Error(ErrorCode::UnknownTask, "task " + std::to_string(j) + " has not sent any data");
  const auto& db = state_.disclosed;
  const CondensedSolution sol = compute_bias_and_acheck(db.ycheck, db.H, state_.factors, state_.cfg.alpha);
  return task_coefficients(t->R, t->y, t->h, state_.factors, db.H, sol, state_.cfg.alpha);
}

Vector Server::predict(TaskId j, std::span<const InputPoint> probes) const {
  const auto& db = state_.disclosed;
  const CondensedSolution sol = compute_bias_and_acheck(db.ycheck, db.H, state_.factors, state_.cfg.alpha);
  Vector a_task;
  std::vector<InputPoint> inputs;
  if (const TaskState* t = task(j)) {
    a_task = task_coefficients(t->R, t->y, t->h, state_.factors, db.H, sol, state_.cfg.alpha);
    inputs = task_inputs(j);
  }
  Vector out(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    out[i] = evaluate_estimate(state_.cfg, j, db.xcheck, sol.acheck, sol.b, inputs, a_task, probes[i]);
  }
  return out;
}

double Server::task_inverse_residual(TaskId j) const {
  const TaskState* t = task(j);
  if (!t) throw Error(ErrorCode::UnknownTask, "task " + std::to_string(j) + " has not sent any data");
  const std::vector<InputPoint> xs = task_inputs(j);
  const std::size_t l = t->size();
  const KernelSpec& kt = state_.cfg.ktilde(j);
  double worst = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t c = 0; c < l; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < l; ++k) {
        double a = (1.0 - state_.cfg.alpha) * kt(xs[k], xs[c]);
        if (k == c) a += state_.cfg.lambda * t->w[c];
        acc += t->R(i, k) * a;
      }
      worst = std::max(worst, std::abs(acc - (i == c ? 1.0 : 0.0)));
    }
  }
  return worst;
}

}  // namespace mtk
