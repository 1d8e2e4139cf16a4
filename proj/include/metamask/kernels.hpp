#pragma once

#include <cstddef>
#include <span>

// Raw kernels behind the tensor ops. Each kernel exists twice: a serial
// reference and an OpenMP version. The parallel versions only split work
// across independent output elements; every output element is accumulated
// in the same order as the serial reference, so both produce bit-identical
// results for any thread count.

namespace metamask::kernels {

enum class Unary { exp, log, pow2, neg, relu, sqrt, scale, add_scalar };
enum class Binary { add, sub, mul, div };

namespace serial {

/// c[n x p] = a[n x k] * b[k x p]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t p);
void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols);
void unary(Unary op, std::span<const double> a, std::span<double> out, double param = 0.0);
/// `b_row_len` == 0: same-shape operands; otherwise `b` is one row repeated.
void binary(Binary op, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::size_t b_row_len);
/// out[i, j] = <q_i, r_j> / (|q_i| |r_j|) over the rows of `q` and `r`;
/// 0 when either row is zero.
void cosine_similarity(std::span<const double> q, std::span<const double> r,
                       std::span<double> out, std::size_t nq, std::size_t nr,
                       std::size_t d);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t n, std::size_t k, std::size_t p);
void transpose(std::span<const double> a, std::span<double> out, std::size_t rows,
               std::size_t cols);
void unary(Unary op, std::span<const double> a, std::span<double> out, double param = 0.0);
void binary(Binary op, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::size_t b_row_len);
void cosine_similarity(std::span<const double> q, std::span<const double> r,
                       std::span<double> out, std::size_t nq, std::size_t nr,
                       std::size_t d);

}  // namespace parallel

/// Thread cap used by the parallel kernels; 0 leaves the OpenMP default.
void set_max_threads(int threads);
int max_threads();

}  // namespace metamask::kernels
