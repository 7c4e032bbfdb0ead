// Serial references against the OpenMP kernels, on training-sized shapes.
#include "mine/assignment.hpp"
#include "mine/nn/kernels.hpp"
#include "mine/rng.hpp"

#include <benchmark/benchmark.h>

namespace {

using mine::RowMatrix;
namespace k = mine::nn::kernels;

RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  mine::Rng rng(seed);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

template <RowMatrix (*F)(const RowMatrix&, const RowMatrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = state.range(0);
  const RowMatrix a = random_matrix(n, 64, 1), b = random_matrix(64, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
}

template <RowMatrix (*F)(const RowMatrix&, const RowMatrix&)>
void bm_matmul_tn(benchmark::State& state) {
  const auto n = state.range(0);
  const RowMatrix a = random_matrix(n, 64, 1), b = random_matrix(n, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
}

template <RowMatrix (*F)(const RowMatrix&, const RowMatrix&, Eigen::Index)>
void bm_block_nt(benchmark::State& state) {
  const auto n = state.range(0);
  const RowMatrix a = random_matrix(n * 11, 32, 1), b = random_matrix(n * 11, 32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b, 11));
}

template <RowMatrix (*F)(const RowMatrix&, const RowMatrix&)>
void bm_sqdist(benchmark::State& state) {
  const auto n = state.range(0);
  const RowMatrix a = random_matrix(n, 4, 1), b = random_matrix(n, 4, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
}

}  // namespace

BENCHMARK(bm_matmul<k::matmul_serial>)->Name("matmul/serial")->Arg(256)->Arg(2816);
BENCHMARK(bm_matmul<k::matmul>)->Name("matmul/omp")->Arg(256)->Arg(2816);
BENCHMARK(bm_matmul_tn<k::matmul_tn_serial>)->Name("matmul_tn/serial")->Arg(256)->Arg(2816);
BENCHMARK(bm_matmul_tn<k::matmul_tn>)->Name("matmul_tn/omp")->Arg(256)->Arg(2816);
BENCHMARK(bm_block_nt<k::block_matmul_nt_serial>)->Name("block_matmul_nt/serial")->Arg(256);
BENCHMARK(bm_block_nt<k::block_matmul_nt>)->Name("block_matmul_nt/omp")->Arg(256);
BENCHMARK(bm_sqdist<mine::ot::squared_distances_serial>)->Name("squared_distances/serial")->Arg(512);
BENCHMARK(bm_sqdist<mine::ot::squared_distances>)->Name("squared_distances/omp")->Arg(512);

int main(int argc, char** argv) {
  mine::configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
