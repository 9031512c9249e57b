#pragma once

// Data-parallel inner kernels of the engine. Each kernel has an OpenMP
// version (mtk::par) and a serial reference (mtk::par::serial) that is kept
// for tests and benchmarks. Every parallel kernel partitions work by output
// row and performs each row's reduction in the same order as the reference,
// so both produce bit-identical results.

#include <cstddef>
#include <span>

#include "mtk/linalg.hpp"

namespace mtk::par {

/// Below this order kernels run serially; thread startup dominates otherwise.
std::size_t min_parallel_order() noexcept;
void set_min_parallel_order(std::size_t order) noexcept;

/// A += scale * u u^T
void sym_rank_one_update(SymMatrix& A, std::span<const double> u, double scale);
/// y = A x
void sym_matvec(const SymMatrix& A, std::span<const double> x, std::span<double> y);
/// v = L^T(:, rows) u, i.e. v_k = sum_i L(rows_i, k) u_i; v has L.order() entries.
void gather_lt(const UnitLowerFactor& L, std::span<const std::size_t> rows, std::span<const double> u,
               std::span<double> v);

namespace serial {
void sym_rank_one_update(SymMatrix& A, std::span<const double> u, double scale);
void sym_matvec(const SymMatrix& A, std::span<const double> x, std::span<double> y);
void gather_lt(const UnitLowerFactor& L, std::span<const std::size_t> rows, std::span<const double> u,
               std::span<double> v);
}  // namespace serial

}  // namespace mtk::par
