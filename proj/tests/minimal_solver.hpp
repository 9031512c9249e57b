#pragma once

// Independent single-task kernel ridge solver used to check the shrinkage
// endpoints. Plain Gaussian elimination with partial pivoting; deliberately
// shares no code with the library's solvers.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mtk/kernels.hpp"

namespace mtk::test::minimal {

struct Example {
  InputPoint x;
  double y;
  double w;
};

inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (a[piv][c] == 0.0) throw std::runtime_error("singular system");
    std::swap(a[piv], a[c]);
    std::swap(b[piv], b[c]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

struct Model {
  std::vector<Example> ex;
  KernelSpec k;
  BiasBasis basis;
  std::vector<double> a;
  std::vector<double> b;

  double operator()(const InputPoint& x) const {
    double f = 0.0;
    for (std::size_t i = 0; i < ex.size(); ++i) f += a[i] * k(ex[i].x, x);
    const Vector psi = basis(x);
    for (std::size_t q = 0; q < psi.size(); ++q) f += b[q] * psi[q];
    return f;
  }
};

/// min sum (y_i - f(x_i))^2 / (2 w_i) + lambda/2 |g|^2 with f = g + sum b_q psi_q.
inline Model fit(const std::vector<Example>& ex, const KernelSpec& k, double lambda, const BiasBasis& basis) {
  Model m{ex, k, basis, {}, {}};
  const std::size_t n = ex.size();
  const std::size_t d = ex.empty() ? 0 : basis.dim();
  std::vector<std::vector<double>> a(n + d, std::vector<double>(n + d, 0.0));
  std::vector<double> rhs(n + d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i][j] = k(ex[i].x, ex[j].x);
    a[i][i] += lambda * ex[i].w;
    const Vector psi = basis(ex[i].x);
    for (std::size_t q = 0; q < d; ++q) {
      a[i][n + q] = psi[q];
      a[n + q][i] = psi[q];
    }
    rhs[i] = ex[i].y;
  }
  const std::vector<double> sol = n + d == 0 ? std::vector<double>{} : gauss_solve(a, rhs);
  m.a.assign(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(n));
  m.b.assign(sol.begin() + static_cast<std::ptrdiff_t>(n), sol.end());
  if (m.b.size() < basis.dim()) m.b.resize(basis.dim(), 0.0);
  return m;
}

}  // namespace mtk::test::minimal
