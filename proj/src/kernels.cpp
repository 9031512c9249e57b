#include "mtk/kernels.hpp"

#include <cmath>
#include <exception>

#include "mtk/error.hpp"
#include "mtk/parallel.hpp"

namespace mtk {

Vector normalize(std::span<const double> v) {
  const double norm = std::sqrt(dot(v, v));
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::InvalidArgument, "cannot normalize a zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

bool is_unit_norm(std::span<const double> v, double tol) noexcept {
  return std::abs(std::sqrt(dot(v, v)) - 1.0) <= tol;
}

LookupTable::LookupTable(std::vector<std::string> keys, SymMatrix values)
    : keys_(std::move(keys)), values_(std::move(values)) {
  if (keys_.size() != values_.order()) throw Error(ErrorCode::ShapeMismatch, "lookup table keys and matrix order differ");
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    if (!index_.emplace(keys_[i], i).second) throw Error(ErrorCode::InvalidArgument, "duplicate lookup table key '" + keys_[i] + "'");
  }
}

LookupTable LookupTable::from_dense(std::vector<std::string> keys, std::span<const double> dense) {
  const std::size_t n = keys.size();
  if (dense.size() != n * n) throw Error(ErrorCode::ShapeMismatch, "dense lookup table must be n x n");
  SymMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (dense[i * n + j] != dense[j * n + i]) throw Error(ErrorCode::InvalidArgument, "lookup table is not symmetric");
      m.lower(i, j) = dense[i * n + j];
    }
  }
  return LookupTable(std::move(keys), std::move(m));
}

double LookupTable::operator()(const std::string& a, const std::string& b) const {
  const auto ia = index_.find(a);
  const auto ib = index_.find(b);
  if (ia == index_.end()) throw Error(ErrorCode::UnknownKey, "no lookup table entry for '" + a + "'");
  if (ib == index_.end()) throw Error(ErrorCode::UnknownKey, "no lookup table entry for '" + b + "'");
  return values_(ia->second, ib->second);
}

void KernelSpec::check(const InputPoint& x) const {
  if (variant == KernelVariant::LookupTable) {
    if (!table) throw Error(ErrorCode::InvalidArgument, "lookup kernel without a table");
    (void)(*table)(x.key, x.key);
  } else if (x.features.empty()) {
    throw Error(ErrorCode::MissingFeatures, "input '" + x.key + "' has no feature vector");
  }
}

double KernelSpec::operator()(const InputPoint& a, const InputPoint& b) const {
  switch (variant) {
    case KernelVariant::RbfOnTags:
    case KernelVariant::LinearOnTags: {
      if (a.features.empty() || b.features.empty()) {
        throw Error(ErrorCode::MissingFeatures, "feature kernel needs feature vectors ('" + a.key + "', '" + b.key + "')");
      }
      if (a.features.size() != b.features.size()) throw Error(ErrorCode::ShapeMismatch, "feature vectors differ in length");
      const double s = dot(a.features, b.features);
      return variant == KernelVariant::RbfOnTags ? std::exp(s) : s;
    }
    case KernelVariant::LookupTable:
      if (!table) throw Error(ErrorCode::InvalidArgument, "lookup kernel without a table");
      return (*table)(a.key, b.key);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown kernel variant");
}

bool operator==(const KernelSpec& a, const KernelSpec& b) {
  if (a.variant != b.variant) return false;
  if (!a.table || !b.table) return a.table == b.table;
  return *a.table == *b.table;
}

double BiasTerm::operator()(const InputPoint& x) const {
  if (kind == Kind::Constant) return 1.0;
  if (feature >= x.features.size()) {
    throw Error(ErrorCode::MissingFeatures, "bias term needs feature " + std::to_string(feature) + " of '" + x.key + "'");
  }
  return x.features[feature];
}

Vector BiasBasis::operator()(const InputPoint& x) const {
  Vector out;
  out.reserve(terms.size());
  for (const auto& t : terms) out.push_back(t(x));
  return out;
}

const KernelSpec& MixedEffectConfig::ktilde(TaskId task) const {
  const auto it = ktilde_overrides.find(task);
  return it == ktilde_overrides.end() ? ktilde_default : it->second;
}

void MixedEffectConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive and finite");
  auto check_spec = [](const KernelSpec& k) {
    if (k.variant == KernelVariant::LookupTable && !k.table) throw Error(ErrorCode::InvalidArgument, "lookup kernel without a table");
  };
  check_spec(kbar);
  check_spec(ktilde_default);
  for (const auto& [task, spec] : ktilde_overrides) check_spec(spec);
}

double eval_kbar(const MixedEffectConfig& cfg, const InputPoint& x1, const InputPoint& x2) { return cfg.kbar(x1, x2); }

double eval_mixed(const MixedEffectConfig& cfg, const InputPoint& x1, TaskId t1, const InputPoint& x2, TaskId t2) {
  double k = cfg.alpha * cfg.kbar(x1, x2);
  if (t1 == t2) k += (1.0 - cfg.alpha) * cfg.ktilde(t1)(x1, x2);
  return k;
}

Eigen::MatrixXd ker_serial(std::span<const InputPoint> xs, std::span<const InputPoint> ys, const KernelSpec& k) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < ys.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = k(xs[i], ys[j]);
  }
  return out;
}

Eigen::MatrixXd ker(std::span<const InputPoint> xs, std::span<const InputPoint> ys, const KernelSpec& k) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()));
  const auto rows = static_cast<std::ptrdiff_t>(xs.size());
  const bool go = xs.size() * ys.size() >= par::min_parallel_order() * par::min_parallel_order() / 4;
  std::exception_ptr failure;
#pragma omp parallel for schedule(static) if (go)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    try {
      for (std::size_t j = 0; j < ys.size(); ++j) out(i, static_cast<Eigen::Index>(j)) = k(xs[static_cast<std::size_t>(i)], ys[j]);
    } catch (...) {
#pragma omp critical(mtk_ker_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

Vector ker_column(const InputPoint& x, std::span<const InputPoint> xs, const KernelSpec& k) {
  Vector out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = k(x, xs[i]);
  return out;
}

Eigen::MatrixXd bias(std::span<const InputPoint> xs, const BiasBasis& basis) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(basis.dim()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < basis.dim(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = basis.terms[j](xs[i]);
    }
  }
  return out;
}

std::size_t find(const InputPoint& x, std::span<const InputPoint> xs) noexcept {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].key == x.key) return i;
  }
  return xs.size();
}

}  // namespace mtk
