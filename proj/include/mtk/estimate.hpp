#pragma once

// Computations shared by the server, the clients and the batch solver: growth
// of the shared factorization by one input, and recovery of the bias and
// condensed coefficients from disclosed data.

#include <span>

#include "mtk/kernels.hpp"
#include "mtk/linalg.hpp"

namespace mtk {

struct InputAppend {
  LdlStep step;
  Vector m_row;
};

/// Plans appending `x` after `existing` (the current x̆). Does not modify
/// `f`. Throws DegenerateGram if x is numerically dependent on x̆.
InputAppend plan_input_append(const FactorSet& f, std::span<const InputPoint> existing, const InputPoint& x,
                              const MixedEffectConfig& cfg);

/// Factors Gram(Kbar, inputs) by sequential appends in the given order.
FactorSet factorize(std::span<const InputPoint> inputs, const MixedEffectConfig& cfg);

struct CondensedSolution {
  Vector z;       // H * y̆
  Vector b;       // bias coefficients
  Vector acheck;  // condensed coefficients ă
};

/// Solves (M^T (D - H) M) b = M^T z and (D L^T) ă = z + (H - D) M b with z = H y̆.
/// b is zero when the bias space is empty or alpha == 0.
CondensedSolution compute_bias_and_acheck(std::span<const double> ycheck, const SymMatrix& H, const FactorSet& f,
                                          double alpha);

/// a^j = R^j [y^j - alpha L(h^j, :) (z + H M b)]
Vector task_coefficients(const SymMatrix& R, std::span<const double> y, std::span<const std::size_t> h,
                         const FactorSet& f, const SymMatrix& H, const CondensedSolution& sol, double alpha);

}  // namespace mtk

namespace mtk {

/// f̂_j(x) from condensed coefficients over x̆ and task coefficients over the
/// task's merged inputs.
double evaluate_estimate(const MixedEffectConfig& cfg, TaskId j, std::span<const InputPoint> xcheck,
                         std::span<const double> acheck, std::span<const double> b,
                         std::span<const InputPoint> task_inputs, std::span<const double> a_task, const InputPoint& x);

}  // namespace mtk
