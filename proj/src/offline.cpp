#include "mtk/offline.hpp"

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "mtk/error.hpp"
#include "mtk/estimate.hpp"

namespace mtk {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

// Mixed-effect kernel matrix over raw triples.
Eigen::MatrixXd mixed_gram(const Dataset& ds, const MixedEffectConfig& cfg) {
  const std::size_t l = ds.triples.size();
  Eigen::MatrixXd K(ix(l), ix(l));
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const auto& a = ds.triples[i];
      const auto& b = ds.triples[j];
      const double v = eval_mixed(cfg, a.x, a.task, b.x, b.task);
      K(ix(i), ix(j)) = v;
      K(ix(j), ix(i)) = v;
    }
  }
  return K;
}

Eigen::MatrixXd raw_bias(const Dataset& ds, const BiasBasis& basis) {
  std::vector<InputPoint> xs;
  xs.reserve(ds.triples.size());
  for (const auto& t : ds.triples) xs.push_back(t.x);
  return bias(xs, basis);
}

ModelCoefficients finish(const Dataset& ds, const IndexStructures& idx, Vector a, Vector b) {
  ModelCoefficients c;
  c.a = std::move(a);
  c.b = std::move(b);
  c.acheck.assign(idx.n(), 0.0);
  c.a_task.resize(ds.m);
  for (std::size_t j = 0; j < ds.m; ++j) {
    for (std::size_t i = 0; i < idx.k[j].size(); ++i) {
      const double ai = c.a[idx.k[j][i]];
      c.a_task[j].push_back(ai);
      c.acheck[idx.h[j][i]] += ai;
    }
  }
  return c;
}

Vector to_vector(const Eigen::VectorXd& v) { return Vector(v.data(), v.data() + v.size()); }

bool has_bias_block(const MixedEffectConfig& cfg) { return cfg.alpha != 0.0 && cfg.bias.dim() > 0; }

}  // namespace

void Dataset::validate() const {
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (t.task >= m) throw Error(ErrorCode::UnknownTask, "triple " + std::to_string(i) + " has task id outside [0, m)");
    if (!(t.w > 0.0) || !std::isfinite(t.w)) throw Error(ErrorCode::NonPositiveWeight, "triple " + std::to_string(i) + " has non-positive weight");
    if (!std::isfinite(t.y)) throw Error(ErrorCode::InvalidArgument, "triple " + std::to_string(i) + " has a non-finite output");
  }
}

IndexStructures build_index_structures(const Dataset& ds) {
  IndexStructures idx;
  idx.k.resize(ds.m);
  idx.h.resize(ds.m);
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < ds.triples.size(); ++i) {
    const auto& t = ds.triples[i];
    auto [it, inserted] = seen.emplace(t.x.key, idx.unique.size());
    if (inserted) idx.unique.push_back(t.x);
    idx.k.at(t.task).push_back(i);
    idx.h.at(t.task).push_back(it->second);
  }
  return idx;
}

Dataset merge_repeats(const Dataset& ds) {
  Dataset out;
  out.m = ds.m;
  std::map<std::pair<TaskId, std::string>, std::size_t> slot;
  std::vector<double> inv_w_sum;
  std::vector<double> y_over_w_sum;
  for (const auto& t : ds.triples) {
    auto [it, inserted] = slot.emplace(std::make_pair(t.task, t.x.key), out.triples.size());
    if (inserted) {
      out.triples.push_back(t);
      inv_w_sum.push_back(1.0 / t.w);
      y_over_w_sum.push_back(t.y / t.w);
    } else {
      inv_w_sum[it->second] += 1.0 / t.w;
      y_over_w_sum[it->second] += t.y / t.w;
    }
  }
  for (std::size_t i = 0; i < out.triples.size(); ++i) {
    out.triples[i].w = 1.0 / inv_w_sum[i];
    out.triples[i].y = out.triples[i].w * y_over_w_sum[i];
  }
  return out;
}

OfflineFit solve_full_system(const Dataset& ds, const MixedEffectConfig& cfg) {
  cfg.validate();
  ds.validate();
  OfflineFit fit{ds, build_index_structures(ds), {}};
  const std::size_t l = ds.triples.size();
  const std::size_t d = has_bias_block(cfg) ? cfg.bias.dim() : 0;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ix(l + d), ix(l + d));
  A.topLeftCorner(ix(l), ix(l)) = mixed_gram(ds, cfg);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(ix(l + d));
  for (std::size_t i = 0; i < l; ++i) {
    A(ix(i), ix(i)) += cfg.lambda * ds.triples[i].w;
    rhs(ix(i)) = ds.triples[i].y;
  }
  if (d > 0) {
    const Eigen::MatrixXd Psi = raw_bias(ds, cfg.bias);
    A.topRightCorner(ix(l), ix(d)) = Psi;
    A.bottomLeftCorner(ix(d), ix(l)) = Psi.transpose();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw Error(ErrorCode::SingularSystem, "full saddle-point system is singular");
  const Eigen::VectorXd sol = lu.solve(rhs);

  Vector a(sol.data(), sol.data() + l);
  Vector b(cfg.bias.dim(), 0.0);
  for (std::size_t k = 0; k < d; ++k) b[k] = sol(ix(l + k)) / cfg.alpha;
  fit.coeffs = finish(ds, fit.index, std::move(a), std::move(b));
  return fit;
}

OfflineFit solve_backfit(const Dataset& ds, const MixedEffectConfig& cfg) {
  cfg.validate();
  ds.validate();
  OfflineFit fit{ds, build_index_structures(ds), {}};
  const std::size_t l = ds.triples.size();

  Eigen::MatrixXd G = mixed_gram(ds, cfg);
  Eigen::VectorXd y(ix(l));
  for (std::size_t i = 0; i < l; ++i) {
    G(ix(i), ix(i)) += cfg.lambda * ds.triples[i].w;
    y(ix(i)) = ds.triples[i].y;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw Error(ErrorCode::SingularSystem, "K + lambda W is not positive definite");
  }
  Vector b(cfg.bias.dim(), 0.0);
  Eigen::VectorXd resid = y;
  if (has_bias_block(cfg)) {
    const Eigen::MatrixXd Psi = raw_bias(ds, cfg.bias);
    const Eigen::MatrixXd GiPsi = ldlt.solve(Psi);
    const Eigen::MatrixXd S = cfg.alpha * (Psi.transpose() * GiPsi);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (!lu.isInvertible()) throw Error(ErrorCode::SingularSystem, "bias back-fitting system is singular");
    const Eigen::VectorXd bb = lu.solve(GiPsi.transpose() * y);
    b = to_vector(bb);
    resid -= cfg.alpha * (Psi * bb);
  }
  const Eigen::VectorXd a = ldlt.solve(resid);
  fit.coeffs = finish(ds, fit.index, to_vector(a), std::move(b));
  return fit;
}

Eigen::MatrixXd to_dense(const UnitLowerFactor& L) {
  const std::size_t n = L.order();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ix(n), ix(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) out(ix(i), ix(j)) = L(i, j);
  }
  return out;
}

Algorithm1Result algorithm1(const Dataset& raw, const MixedEffectConfig& cfg) {
  cfg.validate();
  raw.validate();
  Algorithm1Result res;
  OfflineFit& fit = res.fit;
  fit.data = merge_repeats(raw);
  fit.index = build_index_structures(fit.data);
  const Dataset& ds = fit.data;
  const IndexStructures& idx = fit.index;
  const std::size_t n = idx.n();
  const double alpha = cfg.alpha;

  // Per-task inverse blocks R^j over merged inputs.
  std::vector<Eigen::VectorXd> yj(ds.m);
  res.disclosed.R.resize(ds.m);
  for (std::size_t j = 0; j < ds.m; ++j) {
    const auto& kj = idx.k[j];
    std::vector<InputPoint> xs;
    for (std::size_t i : kj) xs.push_back(ds.triples[i].x);
    Eigen::MatrixXd block = (1.0 - alpha) * ker(xs, xs, cfg.ktilde(static_cast<TaskId>(j)));
    yj[j].resize(ix(kj.size()));
    for (std::size_t i = 0; i < kj.size(); ++i) {
      block(ix(i), ix(i)) += cfg.lambda * ds.triples[kj[i]].w;
      yj[j](ix(i)) = ds.triples[kj[i]].y;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(block);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "task block is not positive definite");
    res.disclosed.R[j] = llt.solve(Eigen::MatrixXd::Identity(block.rows(), block.cols()));
  }

  FactorSet& f = res.disclosed.factors;
  f = factorize(idx.unique, cfg);
  const Eigen::MatrixXd L = to_dense(f.L);
  Eigen::VectorXd ycheck = Eigen::VectorXd::Zero(ix(n));
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(ix(n), ix(n));
  std::vector<Eigen::MatrixXd> Lh(ds.m);  // L(h^j, :)
  for (std::size_t j = 0; j < ds.m; ++j) {
    const auto& hj = idx.h[j];
    Lh[j].resize(ix(hj.size()), ix(n));
    for (std::size_t i = 0; i < hj.size(); ++i) Lh[j].row(ix(i)) = L.row(ix(hj[i]));
    const Eigen::MatrixXd RL = res.disclosed.R[j] * Lh[j];
    ycheck += RL.transpose() * yj[j];
    F += Lh[j].transpose() * RL;
  }
  Eigen::VectorXd dinv(ix(n));
  for (std::size_t i = 0; i < n; ++i) dinv(ix(i)) = 1.0 / f.D[i];
  Eigen::MatrixXd Hinv = alpha * F;
  Hinv.diagonal() += dinv;
  Eigen::LLT<Eigen::MatrixXd> hllt(Hinv);
  if (hllt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "D^{-1} + alpha F is not positive definite");
  Eigen::MatrixXd H = hllt.solve(Eigen::MatrixXd::Identity(ix(n), ix(n)));
  H = 0.5 * (H + H.transpose());
  res.disclosed.ycheck = to_vector(ycheck);
  res.disclosed.H = H;

  const std::size_t d = cfg.bias.dim();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(ix(d));
  Vector a(ds.triples.size(), 0.0);
  if (alpha != 0.0) {
    Eigen::MatrixXd M(ix(n), ix(d));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) M(ix(i), ix(k)) = f.M(i, k);
    }
    if (d > 0 && n > 0) {
      Eigen::MatrixXd DmH = -H;
      DmH.diagonal() += Eigen::Map<const Eigen::VectorXd>(f.D.values().data(), ix(n));
      const Eigen::MatrixXd S = M.transpose() * DmH * M;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
      if (!lu.isInvertible()) throw Error(ErrorCode::SingularSystem, "bias system is singular");
      b = lu.solve(M.transpose() * H * ycheck);
    }
    const Eigen::VectorXd t = H * (ycheck + M * b);
    for (std::size_t j = 0; j < ds.m; ++j) {
      const Eigen::VectorXd aj = res.disclosed.R[j] * (yj[j] - alpha * (Lh[j] * t));
      for (std::size_t i = 0; i < idx.k[j].size(); ++i) a[idx.k[j][i]] = aj(ix(i));
    }
  } else {
    for (std::size_t j = 0; j < ds.m; ++j) {
      const Eigen::VectorXd aj = res.disclosed.R[j] * yj[j];
      for (std::size_t i = 0; i < idx.k[j].size(); ++i) a[idx.k[j][i]] = aj(ix(i));
    }
  }
  fit.coeffs = finish(ds, idx, std::move(a), to_vector(b));
  return res;
}

double predict(const ModelCoefficients& coeffs, const MixedEffectConfig& cfg, const IndexStructures& index, TaskId j,
               const InputPoint& x) {
  if (j >= index.h.size() || j >= coeffs.a_task.size()) throw Error(ErrorCode::UnknownTask, "task " + std::to_string(j) + " is unknown");
  double shared = 0.0;
  if (cfg.alpha != 0.0) {
    for (std::size_t i = 0; i < index.n(); ++i) shared += coeffs.acheck[i] * cfg.kbar(index.unique[i], x);
    const Vector psi = cfg.bias(x);
    for (std::size_t k = 0; k < psi.size(); ++k) shared += coeffs.b[k] * psi[k];
  }
  double shift = 0.0;
  if (cfg.alpha != 1.0) {
    const KernelSpec& kt = cfg.ktilde(j);
    const auto& hj = index.h[j];
    for (std::size_t i = 0; i < hj.size(); ++i) shift += coeffs.a_task[j][i] * kt(index.unique[hj[i]], x);
  }
  return cfg.alpha * shared + (1.0 - cfg.alpha) * shift;
}

double predict(const OfflineFit& fit, const MixedEffectConfig& cfg, TaskId j, const InputPoint& x) {
  return predict(fit.coeffs, cfg, fit.index, j, x);
}

}  // namespace mtk
