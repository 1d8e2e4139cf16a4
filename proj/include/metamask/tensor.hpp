#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace metamask {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() : shape_{0} {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Extent of a rank-2 tensor along rows / columns.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    /// Value of a single-element tensor.
    double item() const;

    /// Same data, new shape of equal size.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

enum class UnaryOp { exp, log, pow2, neg, relu, sqrt };
enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean };

std::string to_string(UnaryOp op);
std::string to_string(BinaryOp op);

namespace ops {

/// Matrix product with a fixed left-to-right summation order over the
/// inner dimension.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor elementwise(UnaryOp op, const Tensor& a);

/// Binary elementwise op. `b` must have the shape of `a`, or `a` must be
/// N x D and `b` a length-D vector broadcast over every row.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// Reduction over all elements (no axis) or along one axis.
Tensor reduce(ReduceOp op, const Tensor& a, std::optional<std::size_t> axis = std::nullopt);

/// Euclidean norm of each column of an N x D matrix.
Tensor l2_norm_cols(const Tensor& a);

/// Largest entry of each row of an N x D matrix, skipping entries whose
/// `keep` flag is zero. Rows with nothing kept yield 0.
Tensor row_max(const Tensor& a, const Tensor& keep);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
/// Embeds `a` at row offset `begin` of a zero matrix with `total_rows` rows.
Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows);

}  // namespace ops
}  // namespace metamask
