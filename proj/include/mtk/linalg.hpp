#pragma once

// Dense, append-only linear algebra used by the incremental engine.
//
// Every structure here only ever grows by one row/column at a time, so the
// storage layouts are packed and row-appendable: growing an order-n object to
// order n+1 appends n+1 values and never moves existing ones. Shrinking by one
// (used to roll back a rejected update) is the exact inverse of growing.

#include <cstddef>
#include <span>
#include <vector>

namespace mtk {

using Vector = std::vector<double>;

/// Symmetric matrix stored as its packed lower triangle, row by row:
/// entry (i, j) with j <= i lives at i*(i+1)/2 + j.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t order);
  static SymMatrix from_packed(std::size_t order, std::vector<double> packed);
  static SymMatrix identity(std::size_t order);

  std::size_t order() const noexcept { return order_; }
  bool empty() const noexcept { return order_ == 0; }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    return i >= j ? data_[offset(i) + j] : data_[offset(j) + i];
  }
  double& lower(std::size_t i, std::size_t j) noexcept { return data_[offset(i) + j]; }

  /// blockdiag(this, diag)
  void enlarge(double diag);
  /// Drops the last row/column.
  void shrink();

  Vector column(std::size_t p) const;

  std::span<const double> packed() const noexcept { return data_; }
  std::span<double> packed_mut() noexcept { return data_; }

  static constexpr std::size_t offset(std::size_t i) noexcept { return i * (i + 1) / 2; }

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  std::size_t order_ = 0;
  std::vector<double> data_;
};

/// Unit lower-triangular factor. Only the strictly-lower part is stored;
/// row i holds exactly i entries.
class UnitLowerFactor {
 public:
  std::size_t order() const noexcept { return order_; }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    if (j > i) return 0.0;
    if (j == i) return 1.0;
    return data_[offset(i) + j];
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(offset(i), i);
  }

  /// Appends the row (r^T, 1); r must have exactly order() entries.
  void append_row(std::span<const double> r);
  void pop_row();

  std::span<const double> packed() const noexcept { return data_; }
  static UnitLowerFactor from_packed(std::size_t order, std::vector<double> packed);

  friend bool operator==(const UnitLowerFactor&, const UnitLowerFactor&) = default;

 private:
  static constexpr std::size_t offset(std::size_t i) noexcept { return i == 0 ? 0 : i * (i - 1) / 2; }

  std::size_t order_ = 0;
  std::vector<double> data_;
};

/// Diagonal of an LDL^T factorization; entries are strictly positive.
class DiagonalFactor {
 public:
  DiagonalFactor() = default;
  explicit DiagonalFactor(std::vector<double> d) : d_(std::move(d)) {}

  std::size_t size() const noexcept { return d_.size(); }
  double operator[](std::size_t i) const noexcept { return d_[i]; }
  void append(double beta) { d_.push_back(beta); }
  void pop() { d_.pop_back(); }
  std::span<const double> values() const noexcept { return d_; }

  friend bool operator==(const DiagonalFactor&, const DiagonalFactor&) = default;

 private:
  std::vector<double> d_;
};

/// Row-major n x d matrix M with L*D*M equal to the bias design matrix over
/// the unique inputs.
class BiasMap {
 public:
  BiasMap() = default;
  explicit BiasMap(std::size_t cols) : cols_(cols) {}
  static BiasMap from_values(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t i, std::size_t k) const noexcept { return data_[i * cols_ + k]; }
  std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  std::span<const double> values() const noexcept { return data_; }

  void append_row(std::span<const double> row);
  void pop_row();

  friend bool operator==(const BiasMap&, const BiasMap&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// The shared-kernel factorization L*D*L^T = Gram(x̆) together with the bias
/// map M. Server and clients grow it with identical append sequences.
struct FactorSet {
  UnitLowerFactor L;
  DiagonalFactor D;
  BiasMap M;

  std::size_t order() const noexcept { return L.order(); }
  friend bool operator==(const FactorSet&, const FactorSet&) = default;
};

// Numerical thresholds.
inline constexpr double kBetaMinRelative = 1e-10;  // scaled by max(1, kbar_nn)
inline constexpr double kSingularEps = 1e-12;      // absolute, update denominators
inline constexpr double kSolveRelEps = 1e-10;      // relative residual bound for triangular solves

struct LdlStep {
  Vector r;
  double beta = 0.0;
};

/// Computes the next row of an incremental LDL^T factorization. `kbar` holds
/// the kernel between the new input and the existing n-1 inputs and
/// `kbar_nn` its self-kernel. Throws DegenerateGram when the new pivot is not
/// safely positive. Does not modify the factors.
LdlStep ldl_append(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> kbar,
                   double kbar_nn);

/// Appends an LdlStep plus the matching bias-map row for bias values `psi`.
/// Returns the new M row.
Vector bias_map_row(const FactorSet& f, const LdlStep& step, std::span<const double> psi);
void commit_append(FactorSet& f, const LdlStep& step, std::span<const double> m_row);

/// Prepared Sherman-Morrison-Woodbury correction H <- H - z z^T / denom.
struct SmwPlan {
  Vector z;
  double denom = 0.0;
};

/// Plans (H^{-1} + sigma v v^T)^{-1}. Throws SingularUpdate on a vanishing
/// denominator; sigma must be nonzero.
SmwPlan plan_smw(const SymMatrix& H, std::span<const double> v, double sigma);
void apply_smw(SymMatrix& H, const SmwPlan& plan);

/// Value form of plan_smw + apply_smw.
SymMatrix smw_rank_one_inverse_update(const SymMatrix& H, std::span<const double> v, double sigma);

struct SchurEnlargement {
  Vector u;
  double gamma = 0.0;
  SymMatrix R;
};

/// Given R = A^{-1}, returns the inverse of [[A, k], [k^T, k_l + lambda_w]]
/// where k = ktilde[0..l-2] and k_l = ktilde[l-1].
SchurEnlargement schur_enlarge_inverse(const SymMatrix& R, std::span<const double> ktilde, double lambda_w);

/// Solves L*D*x = b.
Vector tri_solve_ldl(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> b);
/// Solves D*L^T*x = b.
Vector tri_solve_dlt(const UnitLowerFactor& L, const DiagonalFactor& D, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b) noexcept;

}  // namespace mtk
