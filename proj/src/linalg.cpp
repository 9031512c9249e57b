#include "mtk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtk/error.hpp"
#include "mtk/parallel.hpp"

namespace mtk {

SymMatrix::SymMatrix(std::size_t order) : order_(order), data_(offset(order), 0.0) {}

SymMatrix SymMatrix::from_packed(std::size_t order, std::vector<double> packed) {
  if (packed.size() != offset(order)) {
    throw Error(ErrorCode::ShapeMismatch, "packed symmetric matrix of order " + std::to_string(order) +
                                              " needs " + std::to_string(offset(order)) + " values");
  }
  SymMatrix m;
  m.order_ = order;
  m.data_ = std::move(packed);
  return m;
}

SymMatrix SymMatrix::identity(std::size_t order) {
  SymMatrix m(order);
  for (std::size_t i = 0; i < order; ++i) m.lower(i, i) = 1.0;
  return m;
}

void SymMatrix::enlarge(double diag) {
  data_.resize(data_.size() + order_, 0.0);
  data_.push_back(diag);
  ++order_;
}

void SymMatrix::shrink() {
  if (order_ == 0) return;
  --order_;
  data_.resize(offset(order_));
}

Vector SymMatrix::column(std::size_t p) const {
  Vector c(order_);
  for (std::size_t i = 0; i < order_; ++i) c[i] = (*this)(i, p);
  return c;
}

void UnitLowerFactor::append_row(std::span<const double> r) {
  if (r.size() != order_) throw Error(ErrorCode::ShapeMismatch, "L row length must equal current order");
  data_.insert(data_.end(), r.begin(), r.end());
  ++order_;
}

void UnitLowerFactor::pop_row() {
  if (order_ == 0) return;
  --order_;
  data_.resize(offset(order_));
}

UnitLowerFactor UnitLowerFactor::from_packed(std::size_t order, std::vector<double> packed) {
  if (packed.size() != offset(order)) throw Error(ErrorCode::ShapeMismatch, "packed L has wrong length");
  UnitLowerFactor L;
  L.order_ = order;
  L.data_ = std::move(packed);
  return L;
}

BiasMap BiasMap::from_values(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw Error(ErrorCode::ShapeMismatch, "bias map has wrong length");
  BiasMap m(cols);
  m.rows_ = rows;
  m.data_ = std::move(values);
  return m;
}

void BiasMap::append_row(std::span<const double> row) {
  if (row.size() != cols_) throw Error(ErrorCode::ShapeMismatch, "bias map row has wrong length");
  data_.insert(data_.end(), row.begin(), row.end());
  ++rows_;
}

void BiasMap::pop_row() {
  if (rows_ == 0) return;
  --rows_;
  data_.resize(rows_ * cols_);
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

namespace {

void require_positive(const DiagonalFactor& D) {
  for (std::size_t i = 0; i < D.size(); ++i) {
    if (!(D[i] > 0.0)) throw Error(ErrorCode::DegenerateGram, "diagonal factor entry " + std::to_string(i) + " is not positive");
  }
}

// Solves L y = b in place.
void forward_unit(const UnitLowerFactor& L, Vector& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= dot(L.row(i), std::span<const double>(y).first(i));
}

}  // namespace

LdlStep ldl_append(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> kbar,
                   double kbar_nn) {
  if (kbar.size() != L.order() || D.size() != L.order()) {
    throw Error(ErrorCode::ShapeMismatch, "kernel column length must equal the factor order");
  }
  LdlStep step;
  step.r = tri_solve_ldl(L, D, kbar);
  double quad = 0.0;
  for (std::size_t i = 0; i < step.r.size(); ++i) quad += step.r[i] * D[i] * step.r[i];
  step.beta = kbar_nn - quad;
  const double beta_min = kBetaMinRelative * std::max(1.0, kbar_nn);
  if (!(step.beta > beta_min)) {
    throw Error(ErrorCode::DegenerateGram,
                "new pivot " + std::to_string(step.beta) + " is below the positivity threshold; input is numerically dependent");
  }
  return step;
}

Vector bias_map_row(const FactorSet& f, const LdlStep& step, std::span<const double> psi) {
  const std::size_t d = f.M.cols();
  if (psi.size() != d) throw Error(ErrorCode::ShapeMismatch, "bias vector length must equal bias dimension");
  Vector row(d);
  for (std::size_t k = 0; k < d; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < step.r.size(); ++i) acc += step.r[i] * f.D[i] * f.M(i, k);
    row[k] = (psi[k] - acc) / step.beta;
  }
  return row;
}

void commit_append(FactorSet& f, const LdlStep& step, std::span<const double> m_row) {
  f.L.append_row(step.r);
  f.D.append(step.beta);
  f.M.append_row(m_row);
}

SmwPlan plan_smw(const SymMatrix& H, std::span<const double> v, double sigma) {
  if (v.size() != H.order()) throw Error(ErrorCode::ShapeMismatch, "update vector length must equal matrix order");
  if (!(sigma != 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::SingularUpdate, "rank-one weight must be finite and nonzero");
  }
  SmwPlan plan;
  plan.z.resize(v.size());
  par::sym_matvec(H, v, plan.z);
  plan.denom = 1.0 / sigma + dot(v, plan.z);
  if (!(std::abs(plan.denom) >= kSingularEps)) {
    throw Error(ErrorCode::SingularUpdate, "rank-one inverse update has a vanishing denominator");
  }
  return plan;
}

void apply_smw(SymMatrix& H, const SmwPlan& plan) { par::sym_rank_one_update(H, plan.z, -1.0 / plan.denom); }

SymMatrix smw_rank_one_inverse_update(const SymMatrix& H, std::span<const double> v, double sigma) {
  const SmwPlan plan = plan_smw(H, v, sigma);
  SymMatrix out = H;
  apply_smw(out, plan);
  return out;
}

SchurEnlargement schur_enlarge_inverse(const SymMatrix& R, std::span<const double> ktilde, double lambda_w) {
  const std::size_t l = ktilde.size();
  if (l != R.order() + 1) throw Error(ErrorCode::ShapeMismatch, "kernel column must be one longer than the block order");
  const auto head = ktilde.first(l - 1);

  SchurEnlargement out;
  out.u.resize(l);
  par::sym_matvec(R, head, std::span<double>(out.u).first(l - 1));
  out.u[l - 1] = -1.0;

  const double denom = lambda_w - dot(out.u, ktilde);
  if (!(denom > kSingularEps)) {
    throw Error(ErrorCode::SingularUpdate, "enlarged block is not positive definite");
  }
  out.gamma = 1.0 / denom;
  out.R = R;
  out.R.enlarge(0.0);
  par::sym_rank_one_update(out.R, out.u, out.gamma);
  return out;
}

Vector tri_solve_ldl(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> b) {
  if (b.size() != L.order() || D.size() != L.order()) throw Error(ErrorCode::ShapeMismatch, "rhs length must equal factor order");
  require_positive(D);
  Vector x(b.begin(), b.end());
  forward_unit(L, x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] /= D[i];
  return x;
}

Vector tri_solve_dlt(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> b) {
  if (b.size() != L.order() || D.size() != L.order()) throw Error(ErrorCode::ShapeMismatch, "rhs length must equal factor order");
  require_positive(D);
  const std::size_t n = b.size();
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / D[i];
  // L^T is upper unit-triangular: column i of L holds the entries below the diagonal.
  for (std::size_t ii = n; ii-- > 0;) {
    const double xi = x[ii];
    const auto row = L.row(ii);
    for (std::size_t j = 0; j < ii; ++j) x[j] -= row[j] * xi;
  }
  return x;
}

}  // namespace mtk
