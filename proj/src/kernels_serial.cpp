#include <cmath>
#include <vector>

#include "kernel_common.hpp"
#include "metamask/kernels.hpp"

namespace metamask::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t p)
{
    for (std::size_t i = 0; i < n; ++i) {
        detail::matmul_row(a.data() + i * k, b.data(), c.data() + i * p, k, p);
    }
}

void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
    }
}

void unary(Unary op, std::span<const double> a, std::span<double> out, double param)
{
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], param);
}

void binary(Binary op, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::size_t b_row_len)
{
    if (b_row_len == 0) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = detail::apply(op, a[i], b[i]);
        return;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = detail::apply(op, a[i], b[i % b_row_len]);
    }
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
    for (std::size_t i = 0; i < nq; ++i) {
        const double* qi = q.data() + i * d;
        const double q_norm = std::sqrt(detail::dot(qi, qi, d));
        for (std::size_t j = 0; j < nr; ++j) {
            const double denom = q_norm * r_norm[j];
            out[i * nr + j] =
                denom > 0.0 ? detail::dot(qi, r.data() + j * d, d) / denom : 0.0;
        }
    }
}

}  // namespace metamask::kernels::serial
