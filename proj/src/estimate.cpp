#include "mtk/estimate.hpp"

#include <Eigen/Dense>

#include "mtk/error.hpp"
#include "mtk/parallel.hpp"

namespace mtk {

InputAppend plan_input_append(const FactorSet& f, std::span<const InputPoint> existing, const InputPoint& x,
                              const MixedEffectConfig& cfg) {
  const Vector kbar = ker_column(x, existing, cfg.kbar);
  InputAppend out;
  out.step = ldl_append(f.L, f.D, kbar, cfg.kbar(x, x));
  const Vector psi = cfg.bias(x);
  out.m_row = bias_map_row(f, out.step, psi);
  return out;
}

FactorSet factorize(std::span<const InputPoint> inputs, const MixedEffectConfig& cfg) {
  FactorSet f;
  f.M = BiasMap(cfg.bias.dim());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const InputAppend app = plan_input_append(f, inputs.first(i), inputs[i], cfg);
    commit_append(f, app.step, app.m_row);
  }
  return f;
}

namespace {

// H * M as an n x d matrix.
Eigen::MatrixXd times_m(const SymMatrix& H, const BiasMap& M) {
  const std::size_t n = H.order();
  const std::size_t d = M.cols();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Vector col(n);
  Vector hm(n);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) col[i] = M(i, k);
    par::sym_matvec(H, col, hm);
    for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = hm[i];
  }
  return out;
}

}  // namespace

CondensedSolution compute_bias_and_acheck(std::span<const double> ycheck, const SymMatrix& H, const FactorSet& f,
                                          double alpha) {
  const std::size_t n = H.order();
  if (ycheck.size() != n || f.order() != n || f.M.rows() != n) {
    throw Error(ErrorCode::ShapeMismatch, "disclosed data and factors disagree in order");
  }
  const std::size_t d = f.M.cols();
  CondensedSolution sol;
  sol.z.assign(n, 0.0);
  par::sym_matvec(H, ycheck, sol.z);
  sol.b.assign(d, 0.0);

  Vector rhs = sol.z;
  if (d > 0 && alpha != 0.0 && n > 0) {
    const Eigen::MatrixXd HM = times_m(H, f.M);
    Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f.M(i, k);
    }
    Eigen::MatrixXd DM = M;
    for (std::size_t i = 0; i < n; ++i) DM.row(static_cast<Eigen::Index>(i)) *= f.D[i];
    const Eigen::MatrixXd S = M.transpose() * (DM - HM);
    const Eigen::Map<const Eigen::VectorXd> z(sol.z.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd mz = M.transpose() * z;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularSystem, "bias system is singular");
    const Eigen::VectorXd b = lu.solve(mz);
    for (std::size_t k = 0; k < d; ++k) sol.b[k] = b(static_cast<Eigen::Index>(k));
    const Eigen::VectorXd corr = (HM - DM) * b;
    for (std::size_t i = 0; i < n; ++i) rhs[i] += corr(static_cast<Eigen::Index>(i));
  }
  sol.acheck = tri_solve_dlt(f.L, f.D, rhs);
  return sol;
}

Vector task_coefficients(const SymMatrix& R, std::span<const double> y, std::span<const std::size_t> h,
                         const FactorSet& f, const SymMatrix& H, const CondensedSolution& sol, double alpha) {
  const std::size_t l = R.order();
  if (y.size() != l || h.size() != l) throw Error(ErrorCode::ShapeMismatch, "task block and task data disagree in size");
  Vector s(y.begin(), y.end());
  if (alpha != 0.0) {
    const std::size_t n = H.order();
    Vector t = sol.z;
    if (f.M.cols() > 0) {
      Vector mb(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < f.M.cols(); ++k) mb[i] += f.M(i, k) * sol.b[k];
      }
      Vector hmb(n);
      par::sym_matvec(H, mb, hmb);
      for (std::size_t i = 0; i < n; ++i) t[i] += hmb[i];
    }
    for (std::size_t i = 0; i < l; ++i) {
      const std::size_t row = h[i];
      const double lt = dot(f.L.row(row), std::span<const double>(t).first(row)) + t[row];
      s[i] -= alpha * lt;
    }
  }
  Vector a(l);
  par::sym_matvec(R, s, a);
  return a;
}

}  // namespace mtk

namespace mtk {

double evaluate_estimate(const MixedEffectConfig& cfg, TaskId j, std::span<const InputPoint> xcheck,
                         std::span<const double> acheck, std::span<const double> b,
                         std::span<const InputPoint> task_inputs, std::span<const double> a_task, const InputPoint& x) {
  double shared = 0.0;
  if (cfg.alpha != 0.0) {
    for (std::size_t i = 0; i < xcheck.size(); ++i) shared += acheck[i] * cfg.kbar(xcheck[i], x);
    if (!b.empty()) {
      const Vector psi = cfg.bias(x);
      for (std::size_t k = 0; k < psi.size(); ++k) shared += b[k] * psi[k];
    }
  }
  double shift = 0.0;
  if (cfg.alpha != 1.0 && !task_inputs.empty()) {
    const KernelSpec& kt = cfg.ktilde(j);
    for (std::size_t i = 0; i < task_inputs.size(); ++i) shift += a_task[i] * kt(task_inputs[i], x);
  }
  return cfg.alpha * shared + (1.0 - cfg.alpha) * shift;
}

}  // namespace mtk
