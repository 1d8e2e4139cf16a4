#include <omp.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "kernel_common.hpp"
#include "metamask/kernels.hpp"

namespace metamask::kernels {

namespace {

std::atomic<int> g_max_threads{0};

// Below this many scalar operations the fork/join cost dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

int team_size()
{
    const int cap = g_max_threads.load(std::memory_order_relaxed);
    return cap > 0 ? cap : omp_get_max_threads();
}

}  // namespace

void set_max_threads(int threads) { g_max_threads.store(threads < 0 ? 0 : threads); }

int max_threads() { return team_size(); }

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t p)
{
    const auto rows = static_cast<std::int64_t>(n);
    const bool go_parallel = n * k * p >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
    for (std::int64_t i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        detail::matmul_row(a.data() + r * k, b.data(), c.data() + r * p, k, p);
    }
}

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols)
{
    const auto n = static_cast<std::int64_t>(rows);
    const bool go_parallel = rows * cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
    }
}

void unary(Unary op, std::span<const double> a, std::span<double> out, double param)
{
    const auto n = static_cast<std::int64_t>(a.size());
    const bool go_parallel = a.size() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
    for (std::int64_t i = 0; i < n; ++i) out[i] = detail::apply(op, a[i], param);
}

void binary(Binary op, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::size_t b_row_len)
{
    const auto n = static_cast<std::int64_t>(a.size());
    const bool go_parallel = a.size() >= kParallelThreshold;
    if (b_row_len == 0) {
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
        for (std::int64_t i = 0; i < n; ++i) out[i] = detail::apply(op, a[i], b[i]);
        return;
    }
    const auto len = static_cast<std::int64_t>(b_row_len);
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
    for (std::int64_t i = 0; i < n; ++i) out[i] = detail::apply(op, a[i], b[i % len]);
}

void cosine_similarity(std::span<const double> q, std::span<const double> r,
                       std::span<double> out, std::size_t nq, std::size_t nr,
                       std::size_t d)
{
    std::vector<double> r_norm(nr);
    for (std::size_t j = 0; j < nr; ++j) {
        const double* rj = r.data() + j * d;
        r_norm[j] = std::sqrt(detail::dot(rj, rj, d));
    }
    const auto n = static_cast<std::int64_t>(nq);
    const bool go_parallel = nq * nr * d >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel) num_threads(team_size())
    for (std::int64_t ii = 0; ii < n; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* qi = q.data() + i * d;
        const double q_norm = std::sqrt(detail::dot(qi, qi, d));
        for (std::size_t j = 0; j < nr; ++j) {
            const double denom = q_norm * r_norm[j];
            out[i * nr + j] =
                denom > 0.0 ? detail::dot(qi, r.data() + j * d, d) / denom : 0.0;
        }
    }
}

}  // namespace parallel
}  // namespace metamask::kernels
