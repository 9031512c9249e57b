#include "mtk/parallel.hpp"

#include <atomic>
#include <cassert>

namespace mtk::par {

namespace {
std::atomic<std::size_t> g_min_order{192};

inline double lt_entry(const UnitLowerFactor& L, std::size_t row, std::size_t k) noexcept {
  if (row == k) return 1.0;
  return row > k ? L.row(row)[k] : 0.0;
}
}  // namespace

std::size_t min_parallel_order() noexcept { return g_min_order.load(std::memory_order_relaxed); }
void set_min_parallel_order(std::size_t order) noexcept { g_min_order.store(order, std::memory_order_relaxed); }

namespace serial {

void sym_rank_one_update(SymMatrix& A, std::span<const double> u, double scale) {
  assert(u.size() == A.order());
  auto data = A.packed_mut();
  const std::size_t n = A.order();
  for (std::size_t i = 0; i < n; ++i) {
    const double si = scale * u[i];
    double* row = data.data() + SymMatrix::offset(i);
    for (std::size_t j = 0; j <= i; ++j) row[j] += si * u[j];
  }
}

void sym_matvec(const SymMatrix& A, std::span<const double> x, std::span<double> y) {
  assert(x.size() == A.order() && y.size() == A.order());
  const std::size_t n = A.order();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += A(i, j) * x[j];
    y[i] = acc;
  }
}

void gather_lt(const UnitLowerFactor& L, std::span<const std::size_t> rows, std::span<const double> u,
               std::span<double> v) {
  assert(rows.size() == u.size() && v.size() == L.order());
  const std::size_t n = L.order();
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) acc += lt_entry(L, rows[i], k) * u[i];
    v[k] = acc;
  }
}

}  // namespace serial

void sym_rank_one_update(SymMatrix& A, std::span<const double> u, double scale) {
  assert(u.size() == A.order());
  auto data = A.packed_mut();
  const auto n = static_cast<std::ptrdiff_t>(A.order());
  const bool go = A.order() >= min_parallel_order();
#pragma omp parallel for schedule(dynamic, 16) if (go)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double si = scale * u[i];
    double* row = data.data() + SymMatrix::offset(i);
    for (std::size_t j = 0; j <= i; ++j) row[j] += si * u[j];
  }
}

void sym_matvec(const SymMatrix& A, std::span<const double> x, std::span<double> y) {
  assert(x.size() == A.order() && y.size() == A.order());
  const std::size_t order = A.order();
  const auto n = static_cast<std::ptrdiff_t>(order);
  const bool go = order >= min_parallel_order();
#pragma omp parallel for schedule(static) if (go)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double acc = 0.0;
    for (std::size_t j = 0; j < order; ++j) acc += A(i, j) * x[j];
    y[i] = acc;
  }
}

void gather_lt(const UnitLowerFactor& L, std::span<const std::size_t> rows, std::span<const double> u,
               std::span<double> v) {
  assert(rows.size() == u.size() && v.size() == L.order());
  const auto n = static_cast<std::ptrdiff_t>(L.order());
  const bool go = L.order() >= min_parallel_order();
#pragma omp parallel for schedule(static) if (go)
  for (std::ptrdiff_t kk = 0; kk < n; ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) acc += lt_entry(L, rows[i], k) * u[i];
    v[k] = acc;
  }
}

}  // namespace mtk::par
