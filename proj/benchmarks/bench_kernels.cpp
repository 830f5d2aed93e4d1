#include <benchmark/benchmark.h>

#include <random>

#include "parot/geom.hpp"
#include "parot/tensor.hpp"

using namespace parot;

namespace {

geom::PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  geom::PointCloud c;
  c.points.resize(n);
  for (auto& p : c.points) p = {u(rng), u(rng), u(rng)};
  return c;
}

void BM_fps(benchmark::State& state) {
  auto cloud = random_cloud(std::size_t(state.range(0)), 1);
  for (auto _ : state) {
    std::mt19937_64 rng(2);
    benchmark::DoNotOptimize(geom::fps(cloud, std::size_t(state.range(0)) / 4, rng));
  }
}
BENCHMARK(BM_fps)->Arg(256)->Arg(1024);

void BM_knn(benchmark::State& state) {
  auto cloud = random_cloud(std::size_t(state.range(0)), 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(geom::knn(cloud.points, cloud.points, 32));
}
BENCHMARK(BM_knn)->Arg(256)->Arg(1024);

void BM_matmul_forward_backward(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> av(n * n), bv(n * n);
  for (auto& v : av) v = u(rng);
  for (auto& v : bv) v = u(rng);
  auto A = num::Tensor<float>::from({n, n}, av, true);
  auto B = num::Tensor<float>::from({n, n}, bv, true);
  for (auto _ : state) {
    auto loss = num::sumsq(num::matmul(A, B));
    benchmark::DoNotOptimize(num::backward(loss));
  }
}
BENCHMARK(BM_matmul_forward_backward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
