#include "metamask/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "metamask/errors.hpp"
#include "metamask/kernels.hpp"

namespace metamask {

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(UnaryOp op)
{
    switch (op) {
    case UnaryOp::exp: return "exp";
    case UnaryOp::log: return "log";
    case UnaryOp::pow2: return "pow2";
    case UnaryOp::neg: return "neg";
    case UnaryOp::relu: return "relu";
    case UnaryOp::sqrt: return "sqrt";
    }
    return "?";
}

std::string to_string(BinaryOp op)
{
    switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
    }
    return "?";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values)
{
    const auto n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const
{
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + to_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (rank() != 2) throw ShapeError("expected a matrix, got shape " + to_string(shape_));
    return shape_[1];
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw ShapeError("item() on tensor of shape " + to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace ops {

namespace {

kernels::Unary to_kernel(UnaryOp op)
{
    switch (op) {
    case UnaryOp::exp: return kernels::Unary::exp;
    case UnaryOp::log: return kernels::Unary::log;
    case UnaryOp::pow2: return kernels::Unary::pow2;
    case UnaryOp::neg: return kernels::Unary::neg;
    case UnaryOp::relu: return kernels::Unary::relu;
    case UnaryOp::sqrt: return kernels::Unary::sqrt;
    }
    return kernels::Unary::neg;
}

kernels::Binary to_kernel(BinaryOp op)
{
    switch (op) {
    case BinaryOp::add: return kernels::Binary::add;
    case BinaryOp::sub: return kernels::Binary::sub;
    case BinaryOp::mul: return kernels::Binary::mul;
    case BinaryOp::div: return kernels::Binary::div;
    }
    return kernels::Binary::add;
}

void require_matrix(const Tensor& a, const char* what)
{
    if (a.rank() != 2) {
        throw ShapeError(std::string(what) + " expects a matrix, got " + to_string(a.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " * " +
                         to_string(b.shape()));
    }
    const std::size_t n = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
    Tensor c(Shape{n, p});
    kernels::parallel::matmul(a.data(), b.data(), c.data(), n, k, p);
    return c;
}

Tensor transpose(const Tensor& a)
{
    require_matrix(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(Shape{c, r});
    kernels::parallel::transpose(a.data(), out.data(), r, c);
    return out;
}

Tensor elementwise(UnaryOp op, const Tensor& a)
{
    if (op == UnaryOp::log) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!(a[i] > 0.0)) {
                throw DomainError("log of nonpositive value " + std::to_string(a[i]) +
                                  " at flat index " + std::to_string(i));
            }
        }
    } else if (op == UnaryOp::sqrt) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] < 0.0) {
                throw DomainError("sqrt of negative value at flat index " + std::to_string(i));
            }
        }
    }
    Tensor out(a.shape());
    kernels::parallel::unary(to_kernel(op), a.data(), out.data());
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b)
{
    std::size_t row_len = 0;
    if (a.shape() != b.shape()) {
        const bool row_broadcast =
            a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1];
        if (!row_broadcast) {
            throw ShapeError(to_string(op) + " shape mismatch: " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
        }
        row_len = b.shape()[0];
        if (row_len == 0) return Tensor(a.shape());
    }
    if (op == BinaryOp::div) {
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (b[i] == 0.0) {
                throw DomainError("division by zero at flat index " + std::to_string(i));
            }
        }
    }
    Tensor out(a.shape());
    kernels::parallel::binary(to_kernel(op), a.data(), b.data(), out.data(), row_len);
    return out;
}

Tensor scale(const Tensor& a, double factor)
{
    Tensor out(a.shape());
    kernels::parallel::unary(kernels::Unary::scale, a.data(), out.data(), factor);
    return out;
}

Tensor add_scalar(const Tensor& a, double value)
{
    Tensor out(a.shape());
    kernels::parallel::unary(kernels::Unary::add_scalar, a.data(), out.data(), value);
    return out;
}

Tensor reduce(ReduceOp op, const Tensor& a, std::optional<std::size_t> axis)
{
    if (!axis) {
        double acc = 0.0;
        for (double v : a.data()) acc += v;
        if (op == ReduceOp::mean) {
            acc = a.empty() ? 0.0 : acc / static_cast<double>(a.size());
        }
        return Tensor::scalar(acc);
    }
    if (*axis >= a.rank()) {
        throw ShapeError("reduce axis " + std::to_string(*axis) + " out of range for shape " +
                         to_string(a.shape()));
    }
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < *axis; ++i) outer *= s[i];
    for (std::size_t i = *axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t extent = s[*axis];

    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != *axis) out_shape.push_back(s[i]);
    }
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t e = 0; e < extent; ++e) {
            const double* src = a.data().data() + (o * extent + e) * inner;
            double* dst = out.data().data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    if (op == ReduceOp::mean && extent > 0) {
        const double inv = static_cast<double>(extent);
        for (double& v : out.data()) v /= inv;
    }
    return out;
}

Tensor l2_norm_cols(const Tensor& a)
{
    require_matrix(a, "l2_norm_cols");
    const std::size_t n = a.shape()[0], d = a.shape()[1];
    Tensor out(Shape{d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) out[k] += a(i, k) * a(i, k);
    }
    for (double& v : out.data()) v = std::sqrt(v);
    return out;
}

Tensor row_max(const Tensor& a, const Tensor& keep)
{
    require_matrix(a, "row_max");
    if (keep.shape() != a.shape()) {
        throw ShapeError("row_max mask shape " + to_string(keep.shape()) + " vs " +
                         to_string(a.shape()));
    }
    const std::size_t n = a.shape()[0], d = a.shape()[1];
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d; ++k) {
            if (keep(i, k) != 0.0) m = std::max(m, a(i, k));
        }
        out[i] = std::isfinite(m) ? m : 0.0;
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts)
{
    if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
    const std::size_t d = parts.front().cols();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.cols() != d) {
            throw ShapeError("concat_rows column mismatch: " + to_string(parts.front().shape()) +
                             " vs " + to_string(p.shape()));
        }
        n += p.rows();
    }
    std::vector<double> data;
    data.reserve(n * d);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor(Shape{n, d}, std::move(data));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count)
{
    require_matrix(a, "slice_rows");
    if (begin + count > a.rows()) {
        throw ShapeError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         to_string(a.shape()));
    }
    const std::size_t d = a.cols();
    auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * d);
    return Tensor(Shape{count, d},
                  std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * d)));
}

Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows)
{
    require_matrix(a, "pad_rows");
    if (begin + a.rows() > total_rows) {
        throw ShapeError("pad_rows target too small for " + to_string(a.shape()));
    }
    const std::size_t d = a.cols();
    Tensor out(Shape{total_rows, d});
    std::copy(a.data().begin(), a.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
    return out;
}

}  // namespace ops
}  // namespace metamask
