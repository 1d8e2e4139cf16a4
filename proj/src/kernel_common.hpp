#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "metamask/kernels.hpp"

namespace metamask::kernels::detail {

inline double apply(Unary op, double x, double param)
{
    switch (op) {
    case Unary::exp: return std::exp(x);
    case Unary::log: return std::log(x);
    case Unary::pow2: return x * x;
    case Unary::neg: return -x;
    case Unary::relu: return x > 0.0 ? x : 0.0;
    case Unary::sqrt: return std::sqrt(x);
    case Unary::scale: return x * param;
    case Unary::add_scalar: return x + param;
    }
    return x;
}

inline double apply(Binary op, double a, double b)
{
    switch (op) {
    case Binary::add: return a + b;
    case Binary::sub: return a - b;
    case Binary::mul: return a * b;
    case Binary::div: return a / b;
    }
    return a;
}

/// One output row of a matmul: c_row = a_row * b, accumulated over k in order.
inline void matmul_row(const double* __restrict a_row, const double* __restrict b, double* __restrict c_row, std::size_t k,
                       std::size_t p)
{
    for (std::size_t j = 0; j < p; ++j) c_row[j] = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
        const double s = a_row[l];
        const double* b_row = b + l * p;
        for (std::size_t j = 0; j < p; ++j) c_row[j] += s * b_row[j];
    }
}

inline double dot(const double* x, const double* y, std::size_t d)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += x[i] * y[i];
    return acc;
}

}  // namespace metamask::kernels::detail
