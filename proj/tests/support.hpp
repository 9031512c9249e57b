#pragma once

// Seeded generators and comparison helpers shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtk/error.hpp"
#include "mtk/kernels.hpp"
#include "mtk/offline.hpp"
#include "mtk/server.hpp"

namespace mtk::test {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(eng_); }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline InputPoint random_point(const std::string& key, Rng& rng, std::size_t dim = 6) {
  Vector z(dim);
  for (double& v : z) v = rng.normal();
  return {key, normalize(z)};
}

inline std::vector<InputPoint> random_points(const std::string& prefix, std::size_t n, Rng& rng, std::size_t dim = 6) {
  std::vector<InputPoint> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_point(prefix + std::to_string(i), rng, dim));
  return out;
}

struct Shape {
  std::size_t max_tasks = 10;
  std::size_t max_per_task = 20;
  std::size_t max_pool = 30;
};

struct Instance {
  Dataset ds;
  MixedEffectConfig cfg;
  std::vector<InputPoint> pool;
  std::vector<InputPoint> probes;  // pool plus unseen points
};

/// Random multi-task dataset. Inputs are drawn with replacement from a pool,
/// so repeats within and across tasks are common.
inline Instance random_instance(std::uint64_t seed, double alpha, double lambda, std::size_t d, Shape shape = {}) {
  Rng rng(seed);
  Instance in;
  in.cfg.alpha = alpha;
  in.cfg.lambda = lambda;
  in.cfg.kbar = KernelSpec::rbf();
  in.cfg.ktilde_default = KernelSpec::linear();
  if (d == 1) in.cfg.bias = BiasBasis::constant();
  const std::size_t m = 1 + rng.index(shape.max_tasks);
  const std::size_t pool = 1 + rng.index(shape.max_pool);
  in.pool = random_points("x", pool, rng);
  in.ds.m = m;
  for (std::size_t j = 0; j < m; ++j) {
    if (rng.coin(0.3)) in.cfg.ktilde_overrides[static_cast<TaskId>(j)] = KernelSpec::rbf();
    const std::size_t lj = 1 + rng.index(shape.max_per_task);
    for (std::size_t i = 0; i < lj; ++i) {
      in.ds.triples.push_back({static_cast<TaskId>(j), in.pool[rng.index(pool)], rng.normal(), rng.uniform(0.5, 2.0)});
    }
  }
  std::shuffle(in.ds.triples.begin(), in.ds.triples.end(), rng.engine());
  in.probes = in.pool;
  for (auto& p : random_points("probe", 3, rng)) in.probes.push_back(std::move(p));
  return in;
}

inline Dataset prefix(const Dataset& ds, std::size_t len) {
  Dataset out;
  out.m = ds.m;
  out.triples.assign(ds.triples.begin(), ds.triples.begin() + static_cast<std::ptrdiff_t>(len));
  return out;
}

/// |a - b| relative to max(1, |a|, |b|).
inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline double max_rel_diff(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_diff(a[i], b[i]));
  return worst;
}

/// f̂_j(p) for every task j and probe p, task-major.
inline Vector fit_predictions(const OfflineFit& fit, const MixedEffectConfig& cfg, const std::vector<InputPoint>& probes) {
  Vector out;
  for (std::size_t j = 0; j < fit.data.m; ++j) {
    for (const auto& p : probes) out.push_back(predict(fit, cfg, static_cast<TaskId>(j), p));
  }
  return out;
}

inline Vector server_predictions(const Server& s, std::size_t m, const std::vector<InputPoint>& probes) {
  Vector out;
  for (std::size_t j = 0; j < m; ++j) {
    const Vector v = s.predict(static_cast<TaskId>(j), probes);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

inline double max_abs(const Eigen::MatrixXd& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

inline Eigen::MatrixXd dense(const SymMatrix& s) {
  const auto n = static_cast<Eigen::Index>(s.order());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = s(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return out;
}

inline SymMatrix packed(const Eigen::MatrixXd& a) {
  SymMatrix s(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) s.lower(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = a(i, j);
  }
  return s;
}

/// Random SPD matrix with eigenvalues in [0.5, 5].
inline Eigen::MatrixXd random_spd(std::size_t n, Rng& rng) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd ev(g.rows());
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = rng.uniform(0.5, 5.0);
  return q * ev.asDiagonal() * q.transpose();
}

}  // namespace mtk::test

namespace mtk::test {

/// Code of the mtk::Error thrown by f, or nullopt if it returns normally.
template <class F>
std::optional<ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace mtk::test
