// Serial reference vs OpenMP kernels. Thread count is the second argument
// of the parallel cases.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "metamask/eval.hpp"
#include "metamask/kernels.hpp"

using namespace metamask;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

eval::RepresentationSet random_set(std::size_t n, std::size_t d, std::uint64_t seed)
{
    eval::RepresentationSet s{Tensor(Shape{n, d}, random_values(n * d, seed)), {}};
    for (std::size_t i = 0; i < n; ++i) s.labels.push_back(i % 10);
    return s;
}

void bm_matmul_serial(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        kernels::serial::matmul(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void bm_matmul_parallel(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    kernels::set_max_threads(static_cast<int>(state.range(1)));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        kernels::parallel::matmul(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void bm_cosine_serial(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const auto q = random_values(n * d, 3), r = random_values(n * d, 4);
    std::vector<double> out(n * n);
    for (auto _ : state) {
        kernels::serial::cosine_similarity(q, r, out, n, n, d);
        benchmark::DoNotOptimize(out.data());
    }
}

void bm_cosine_parallel(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    kernels::set_max_threads(static_cast<int>(state.range(1)));
    const auto q = random_values(n * d, 3), r = random_values(n * d, 4);
    std::vector<double> out(n * n);
    for (auto _ : state) {
        kernels::parallel::cosine_similarity(q, r, out, n, n, d);
        benchmark::DoNotOptimize(out.data());
    }
}

void bm_knn_serial(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto train = random_set(n, 64, 5), test = random_set(n / 2, 64, 6);
    for (auto _ : state) benchmark::DoNotOptimize(eval::knn_eval_serial(train, test, 5));
}

void bm_knn_parallel(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    kernels::set_max_threads(static_cast<int>(state.range(1)));
    const auto train = random_set(n, 64, 5), test = random_set(n / 2, 64, 6);
    for (auto _ : state) benchmark::DoNotOptimize(eval::knn_eval(train, test, 5));
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_matmul_parallel)->ArgsProduct({{64, 256}, {1, 2, 4, 8}})->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(bm_cosine_serial)->Arg(512)->Arg(2000)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_cosine_parallel)->ArgsProduct({{512, 2000}, {1, 2, 4, 8}})->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(bm_knn_serial)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn_parallel)->ArgsProduct({{2000}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
