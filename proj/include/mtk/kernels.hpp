#pragma once

// Kernel and bias-basis evaluation for mixed-effect kernels
//
//   K((x1,t1),(x2,t2)) = alpha * Kbar(x1,x2) + (1-alpha) * [t1 == t2] * Ktilde^{t1}(x1,x2)
//
// plus the vectorized helpers `find`, `ker` and `bias` used by the solvers.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "mtk/linalg.hpp"

namespace mtk {

using TaskId = std::uint32_t;

/// An input point. Two points are the same input iff their keys are
/// byte-equal; features feed the feature-based kernels.
struct InputPoint {
  std::string key;
  Vector features;

  friend bool operator==(const InputPoint&, const InputPoint&) = default;
};

/// Scales `v` to unit Euclidean norm. Throws InvalidArgument on a zero vector.
Vector normalize(std::span<const double> v);
bool is_unit_norm(std::span<const double> v, double tol = 1e-9) noexcept;

/// Symmetric kernel table indexed by input keys.
class LookupTable {
 public:
  LookupTable() = default;
  LookupTable(std::vector<std::string> keys, SymMatrix values);
  /// Builds from a dense row-major matrix; throws InvalidArgument unless it is exactly symmetric.
  static LookupTable from_dense(std::vector<std::string> keys, std::span<const double> dense);

  double operator()(const std::string& a, const std::string& b) const;
  const std::vector<std::string>& keys() const noexcept { return keys_; }
  const SymMatrix& values() const noexcept { return values_; }

  friend bool operator==(const LookupTable& a, const LookupTable& b) {
    return a.keys_ == b.keys_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> keys_;
  SymMatrix values_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class KernelVariant : std::uint8_t {
  RbfOnTags = 0,     // exp(z1 . z2); on unit vectors equals exp(1 - |z1 - z2|^2 / 2)
  LinearOnTags = 1,  // z1 . z2
  LookupTable = 2,
};

struct KernelSpec {
  KernelVariant variant = KernelVariant::RbfOnTags;
  std::shared_ptr<const LookupTable> table;  // set iff variant == LookupTable

  static KernelSpec rbf() { return {KernelVariant::RbfOnTags, nullptr}; }
  static KernelSpec linear() { return {KernelVariant::LinearOnTags, nullptr}; }
  static KernelSpec lookup(LookupTable t) {
    return {KernelVariant::LookupTable, std::make_shared<const LookupTable>(std::move(t))};
  }

  double operator()(const InputPoint& a, const InputPoint& b) const;
  /// Throws if `x` cannot be evaluated by this kernel.
  void check(const InputPoint& x) const;

  friend bool operator==(const KernelSpec& a, const KernelSpec& b);
};

/// A bias basis function. Constant evaluates to 1; Feature(i) to features[i].
struct BiasTerm {
  enum class Kind : std::uint8_t { Constant = 0, Feature = 1 };
  Kind kind = Kind::Constant;
  std::uint32_t feature = 0;

  double operator()(const InputPoint& x) const;
  friend bool operator==(const BiasTerm&, const BiasTerm&) = default;
};

struct BiasBasis {
  std::vector<BiasTerm> terms;

  static BiasBasis none() { return {}; }
  static BiasBasis constant() { return {{BiasTerm{}}}; }

  std::size_t dim() const noexcept { return terms.size(); }
  Vector operator()(const InputPoint& x) const;

  friend bool operator==(const BiasBasis&, const BiasBasis&) = default;
};

struct MixedEffectConfig {
  double alpha = 0.5;
  double lambda = 1.0;
  KernelSpec kbar = KernelSpec::rbf();
  KernelSpec ktilde_default = KernelSpec::linear();
  std::map<TaskId, KernelSpec> ktilde_overrides;
  BiasBasis bias;

  const KernelSpec& ktilde(TaskId task) const;
  /// Throws InvalidArgument unless 0 <= alpha <= 1 and lambda > 0 (both finite).
  void validate() const;

  friend bool operator==(const MixedEffectConfig&, const MixedEffectConfig&) = default;
};

double eval_kbar(const MixedEffectConfig& cfg, const InputPoint& x1, const InputPoint& x2);
double eval_mixed(const MixedEffectConfig& cfg, const InputPoint& x1, TaskId t1, const InputPoint& x2, TaskId t2);

/// Kernel matrix with entries K(xs_i, ys_j). Rows are evaluated in parallel.
Eigen::MatrixXd ker(std::span<const InputPoint> xs, std::span<const InputPoint> ys, const KernelSpec& k);
/// Serial reference for `ker`.
Eigen::MatrixXd ker_serial(std::span<const InputPoint> xs, std::span<const InputPoint> ys, const KernelSpec& k);
/// Kernel column K(x, xs_i) as a plain vector.
Vector ker_column(const InputPoint& x, std::span<const InputPoint> xs, const KernelSpec& k);

/// n x d matrix with entries psi_j(xs_i).
Eigen::MatrixXd bias(std::span<const InputPoint> xs, const BiasBasis& basis);

/// Zero-based position of the first input in `xs` whose key equals x.key,
/// or xs.size() when there is none.
std::size_t find(const InputPoint& x, std::span<const InputPoint> xs) noexcept;

}  // namespace mtk
