#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metamask/tensor.hpp"

// Reverse-mode differentiation on an append-only tape.
//
// Backward passes are recorded onto the same tape with the same
// differentiable ops as the forward pass, so a gradient can itself be
// differentiated. grad(..., create_graph = false) runs exactly the same
// arithmetic and then detaches the results.

namespace metamask::autograd {

using NodeId = std::size_t;

enum class OpKind {
    leaf,
    constant,
    add,
    sub,
    mul,
    div,
    add_row,
    sub_row,
    mul_row,
    div_row,
    exp,
    log,
    pow2,
    neg,
    relu,
    sqrt,
    scale,
    add_scalar,
    matmul,
    transpose,
    sum_all,
    sum_rows,  // N x D -> D (axis 0)
    sum_cols,  // N x D -> N (axis 1)
    broadcast_scalar,
    expand_rows,
    concat_rows,
    slice_rows,
    pad_rows,
};

const char* to_string(OpKind kind);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    NodeId id() const noexcept { return id_; }
    Graph* graph() const noexcept { return graph_; }
    bool requires_grad() const;
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    NodeId id_ = 0;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Differentiable input.
    Var leaf(Tensor value, bool requires_grad = true);
    /// Non-differentiable input.
    Var constant(Tensor value);

    std::size_t size() const noexcept { return nodes_.size(); }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }

    struct Node {
        OpKind kind;
        std::vector<NodeId> inputs;
        Tensor value;
        bool requires_grad = false;
        double param = 0.0;
        std::size_t offset = 0;  // slice/pad row offset
        std::size_t extent = 0;  // expand/pad row count
    };

    const Node& node(NodeId id) const { return nodes_.at(id); }
    Var handle(NodeId id);

    /// Appends an op node; requires_grad is inherited from the inputs.
    Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, double param = 0.0,
               std::size_t offset = 0, std::size_t extent = 0);

private:
    std::vector<Node> nodes_;
};

// Differentiable ops. Binary ops accept equal shapes or an N x D matrix
// against a length-D vector broadcast over rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var exp(const Var& a);
Var log(const Var& a);
Var pow2(const Var& a);
Var neg(const Var& a);
Var relu(const Var& a);
Var sqrt(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var sum(const Var& a);
/// axis 0: N x D -> D; axis 1: N x D -> N.
Var sum(const Var& a, std::size_t axis);
Var mean(const Var& a);
/// Scalar to a tensor of `shape` filled with it.
Var broadcast_scalar(const Var& a, const Shape& shape);
/// Length-D vector to an rows x D matrix.
Var expand_rows(const Var& a, std::size_t rows);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var pad_rows(const Var& a, std::size_t begin, std::size_t total_rows);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

/// Gradients of a scalar `loss` with respect to each of `wrt`.
///
/// With `create_graph` the results are live graph nodes and can be
/// differentiated again; otherwise they are detached constants holding the
/// same values. A target with no path to the loss raises LineageError
/// unless `allow_unused`, in which case its gradient is zero.
std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph,
                      bool allow_unused = false);

/// Fresh leaves holding the values of `params`, with no path back to them.
std::vector<Var> checkpoint(std::span<const Var> params);

}  // namespace metamask::autograd
