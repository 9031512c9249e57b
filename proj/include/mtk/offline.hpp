#pragma once

// Centralized batch solvers.
//
// solve_full_system is the brute-force reference: it assembles the full
// (l+d) x (l+d) saddle-point system over raw triples. solve_backfit solves the
// same system in two stages (bias first, then kernel coefficients).
// algorithm1 merges repeated (task, input) triples and works in the space of
// unique inputs, at O(n^3 m + d^3) cost.

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mtk/kernels.hpp"
#include "mtk/linalg.hpp"

namespace mtk {

struct Triple {
  TaskId task = 0;
  InputPoint x;
  double y = 0.0;
  double w = 1.0;
};

/// Tasks are numbered 0..m-1.
struct Dataset {
  std::vector<Triple> triples;
  std::size_t m = 0;

  void validate() const;
};

struct IndexStructures {
  std::vector<InputPoint> unique;           // x̆, ordered by first appearance
  std::vector<std::vector<std::size_t>> k;  // per task: positions in the triple list
  std::vector<std::vector<std::size_t>> h;  // per task: positions in `unique`

  std::size_t n() const noexcept { return unique.size(); }
};

IndexStructures build_index_structures(const Dataset& ds);

/// Replaces every group of triples sharing (task, key) by one triple with
/// w = (sum 1/w_i)^{-1} and y = w * sum y_i / w_i, at the group's first position.
Dataset merge_repeats(const Dataset& ds);

struct ModelCoefficients {
  Vector a;                   // one per triple of the solved dataset
  Vector acheck;              // group sums of `a` over unique inputs
  Vector b;                   // bias coefficients (zero when alpha == 0)
  std::vector<Vector> a_task; // a restricted to each task, in k^j order
};

/// Everything needed to evaluate the fitted estimates.
struct OfflineFit {
  Dataset data;  // dataset the coefficients refer to (raw or merged)
  IndexStructures index;
  ModelCoefficients coeffs;
};

OfflineFit solve_full_system(const Dataset& ds, const MixedEffectConfig& cfg);
OfflineFit solve_backfit(const Dataset& ds, const MixedEffectConfig& cfg);

/// Disclosed quantities computed in batch; used to check the online server.
struct BatchDisclosed {
  FactorSet factors;
  Vector ycheck;
  Eigen::MatrixXd H;
  std::vector<Eigen::MatrixXd> R;  // per task, merged inputs in h^j order
};

struct Algorithm1Result {
  OfflineFit fit;
  BatchDisclosed disclosed;
};

Algorithm1Result algorithm1(const Dataset& ds, const MixedEffectConfig& cfg);

/// f̂_j(x) = alpha*(sum ă_i Kbar(x̆_i, x) + sum b_i psi_i(x))
///        + (1-alpha)*sum a^j_i Ktilde^j(x̆_{h^j_i}, x)
double predict(const ModelCoefficients& coeffs, const MixedEffectConfig& cfg, const IndexStructures& index,
               TaskId j, const InputPoint& x);
double predict(const OfflineFit& fit, const MixedEffectConfig& cfg, TaskId j, const InputPoint& x);

Eigen::MatrixXd to_dense(const UnitLowerFactor& L);

}  // namespace mtk
