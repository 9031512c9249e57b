// Parallel kernels against their serial references.

#include <random>

#include <benchmark/benchmark.h>

#include "mtk/kernels.hpp"
#include "mtk/parallel.hpp"

namespace {

mtk::SymMatrix random_sym(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  mtk::SymMatrix a(n);
  for (double& v : a.packed_mut()) v = u(rng);
  return a;
}

mtk::Vector random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  mtk::Vector v(n);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<mtk::InputPoint> random_points(std::size_t n, std::mt19937_64& rng) {
  std::vector<mtk::InputPoint> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"p" + std::to_string(i), mtk::normalize(random_vec(19, rng))});
  return out;
}

template <bool Parallel>
void BM_RankOne(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  std::mt19937_64 rng(1);
  mtk::SymMatrix a = random_sym(n, rng);
  const mtk::Vector u = random_vec(n, rng);
  for (auto _ : st) {
    if constexpr (Parallel) {
      mtk::par::sym_rank_one_update(a, u, 1e-9);
    } else {
      mtk::par::serial::sym_rank_one_update(a, u, 1e-9);
    }
    benchmark::DoNotOptimize(a.packed().data());
  }
}

template <bool Parallel>
void BM_Matvec(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  std::mt19937_64 rng(2);
  const mtk::SymMatrix a = random_sym(n, rng);
  const mtk::Vector x = random_vec(n, rng);
  mtk::Vector y(n);
  for (auto _ : st) {
    if constexpr (Parallel) {
      mtk::par::sym_matvec(a, x, y);
    } else {
      mtk::par::serial::sym_matvec(a, x, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Ker(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  std::mt19937_64 rng(3);
  const auto xs = random_points(n, rng);
  const auto k = mtk::KernelSpec::rbf();
  for (auto _ : st) {
    auto m = Parallel ? mtk::ker(xs, xs, k) : mtk::ker_serial(xs, xs, k);
    benchmark::DoNotOptimize(m.data());
  }
}

}  // namespace

BENCHMARK(BM_RankOne<true>)->Arg(128)->Arg(512)->Arg(2048);
BENCHMARK(BM_RankOne<false>)->Arg(128)->Arg(512)->Arg(2048);
BENCHMARK(BM_Matvec<true>)->Arg(128)->Arg(512)->Arg(2048);
BENCHMARK(BM_Matvec<false>)->Arg(128)->Arg(512)->Arg(2048);
BENCHMARK(BM_Ker<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Ker<false>)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
