#include "metamask/autograd.hpp"

#include <optional>
#include <string>

#include "metamask/errors.hpp"

namespace metamask::autograd {

using metamask::to_string;

const char* to_string(OpKind kind)
{
    switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::add_row: return "add_row";
    case OpKind::sub_row: return "sub_row";
    case OpKind::mul_row: return "mul_row";
    case OpKind::div_row: return "div_row";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::pow2: return "pow2";
    case OpKind::neg: return "neg";
    case OpKind::relu: return "relu";
    case OpKind::sqrt: return "sqrt";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::sum_all: return "sum_all";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::sum_cols: return "sum_cols";
    case OpKind::broadcast_scalar: return "broadcast_scalar";
    case OpKind::expand_rows: return "expand_rows";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::pad_rows: return "pad_rows";
    }
    return "?";
}

const Tensor& Var::value() const
{
    if (!graph_) throw LineageError("use of an unbound Var");
    return graph_->node(id_).value;
}

bool Var::requires_grad() const { return graph_ && graph_->node(id_).requires_grad; }

Var Graph::leaf(Tensor value, bool requires_grad)
{
    nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value)
{
    nodes_.push_back(Node{OpKind::constant, {}, std::move(value), false});
    return Var(this, nodes_.size() - 1);
}

Var Graph::handle(NodeId id)
{
    if (id >= nodes_.size()) throw LineageError("node " + std::to_string(id) + " not in graph");
    return Var(this, id);
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, double param,
                  std::size_t offset, std::size_t extent)
{
    bool needs_grad = false;
    for (auto id : inputs) needs_grad = needs_grad || nodes_[id].requires_grad;
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), needs_grad, param, offset, extent});
    return Var(this, nodes_.size() - 1);
}

namespace {

Graph& graph_of(const Var& a)
{
    if (!a.graph()) throw LineageError("use of an unbound Var");
    return *a.graph();
}

Graph& graph_of(const Var& a, const Var& b)
{
    Graph& g = graph_of(a);
    if (b.graph() != &g) throw LineageError("operands belong to different graphs");
    return g;
}

bool is_row_broadcast(const Tensor& a, const Tensor& b)
{
    return a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1];
}

Var binary(BinaryOp op, OpKind same, OpKind row, const Var& a, const Var& b)
{
    Graph& g = graph_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    OpKind kind = same;
    if (av.shape() != bv.shape()) {
        if (!is_row_broadcast(av, bv)) {
            throw ShapeError(std::string(to_string(same)) + " shape mismatch: " +
                             to_string(av.shape()) + " vs " + to_string(bv.shape()));
        }
        kind = row;
    }
    Tensor out = ops::elementwise(op, av, bv);
    return g.record(kind, {a.id(), b.id()}, std::move(out));
}

Var unary(UnaryOp op, OpKind kind, const Var& a)
{
    Graph& g = graph_of(a);
    Tensor out = ops::elementwise(op, a.value());
    return g.record(kind, {a.id()}, std::move(out));
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(BinaryOp::add, OpKind::add, OpKind::add_row, a, b); }
Var sub(const Var& a, const Var& b) { return binary(BinaryOp::sub, OpKind::sub, OpKind::sub_row, a, b); }
Var mul(const Var& a, const Var& b) { return binary(BinaryOp::mul, OpKind::mul, OpKind::mul_row, a, b); }
Var div(const Var& a, const Var& b) { return binary(BinaryOp::div, OpKind::div, OpKind::div_row, a, b); }

Var exp(const Var& a) { return unary(UnaryOp::exp, OpKind::exp, a); }
Var log(const Var& a) { return unary(UnaryOp::log, OpKind::log, a); }
Var pow2(const Var& a) { return unary(UnaryOp::pow2, OpKind::pow2, a); }
Var neg(const Var& a) { return unary(UnaryOp::neg, OpKind::neg, a); }
Var relu(const Var& a) { return unary(UnaryOp::relu, OpKind::relu, a); }
Var sqrt(const Var& a) { return unary(UnaryOp::sqrt, OpKind::sqrt, a); }

Var scale(const Var& a, double factor)
{
    return graph_of(a).record(OpKind::scale, {a.id()}, ops::scale(a.value(), factor), factor);
}

Var add_scalar(const Var& a, double value)
{
    return graph_of(a).record(OpKind::add_scalar, {a.id()}, ops::add_scalar(a.value(), value), value);
}

Var matmul(const Var& a, const Var& b)
{
    Graph& g = graph_of(a, b);
    return g.record(OpKind::matmul, {a.id(), b.id()}, ops::matmul(a.value(), b.value()));
}

Var transpose(const Var& a)
{
    return graph_of(a).record(OpKind::transpose, {a.id()}, ops::transpose(a.value()));
}

Var sum(const Var& a)
{
    return graph_of(a).record(OpKind::sum_all, {a.id()}, ops::reduce(ReduceOp::sum, a.value()));
}

Var sum(const Var& a, std::size_t axis)
{
    if (a.value().rank() != 2 || axis > 1) {
        throw ShapeError("axis sum needs a matrix and axis 0 or 1, got shape " +
                         to_string(a.shape()) + " axis " + std::to_string(axis));
    }
    const OpKind kind = axis == 0 ? OpKind::sum_rows : OpKind::sum_cols;
    return graph_of(a).record(kind, {a.id()}, ops::reduce(ReduceOp::sum, a.value(), axis));
}

Var mean(const Var& a)
{
    const auto n = a.value().size();
    return scale(sum(a), n ? 1.0 / static_cast<double>(n) : 0.0);
}

Var broadcast_scalar(const Var& a, const Shape& shape)
{
    if (a.value().rank() != 0) {
        throw ShapeError("broadcast_scalar needs a rank-0 input, got " + to_string(a.shape()));
    }
    return graph_of(a).record(OpKind::broadcast_scalar, {a.id()}, Tensor(shape, a.value().item()));
}

Var expand_rows(const Var& a, std::size_t rows)
{
    const Tensor& v = a.value();
    if (v.rank() != 1) throw ShapeError("expand_rows needs a vector, got " + to_string(v.shape()));
    const std::size_t d = v.size();
    Tensor out(Shape{rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < d; ++k) out(r, k) = v[k];
    }
    return graph_of(a).record(OpKind::expand_rows, {a.id()}, std::move(out), 0.0, 0, rows);
}

Var concat_rows(std::span<const Var> parts)
{
    if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
    Graph& g = graph_of(parts.front());
    std::vector<Tensor> values;
    std::vector<NodeId> ids;
    values.reserve(parts.size());
    for (const auto& p : parts) {
        graph_of(parts.front(), p);
        values.push_back(p.value());
        ids.push_back(p.id());
    }
    return g.record(OpKind::concat_rows, std::move(ids), ops::concat_rows(values));
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count)
{
    return graph_of(a).record(OpKind::slice_rows, {a.id()}, ops::slice_rows(a.value(), begin, count),
                              0.0, begin, count);
}

Var pad_rows(const Var& a, std::size_t begin, std::size_t total_rows)
{
    return graph_of(a).record(OpKind::pad_rows, {a.id()}, ops::pad_rows(a.value(), begin, total_rows),
                              0.0, begin, total_rows);
}

namespace {

/// Contribution of node `id`'s upstream gradient `g_out` to its input
/// number `which`.
Var backward_rule(Graph& g, NodeId id, std::size_t which, const Var& g_out)
{
    // Copy what we need: recording new nodes may reallocate the node list.
    const OpKind kind = g.node(id).kind;
    const std::vector<NodeId> inputs = g.node(id).inputs;
    const double param = g.node(id).param;
    const std::size_t offset = g.node(id).offset;
    const Var y = g.handle(id);
    const Var a = g.handle(inputs[0]);
    const Var b = inputs.size() > 1 ? g.handle(inputs[1]) : Var{};

    switch (kind) {
    case OpKind::add:
    case OpKind::add_scalar: return g_out;
    case OpKind::sub: return which == 0 ? g_out : neg(g_out);
    case OpKind::mul: return which == 0 ? mul(g_out, b) : mul(g_out, a);
    case OpKind::div: return which == 0 ? div(g_out, b) : neg(div(mul(g_out, y), b));
    case OpKind::add_row: return which == 0 ? g_out : sum(g_out, 0);
    case OpKind::sub_row: return which == 0 ? g_out : neg(sum(g_out, 0));
    case OpKind::mul_row: return which == 0 ? mul(g_out, b) : sum(mul(g_out, a), 0);
    case OpKind::div_row:
        return which == 0 ? div(g_out, b) : neg(div(sum(mul(g_out, y), 0), b));
    case OpKind::exp: return mul(g_out, y);
    case OpKind::log: return div(g_out, a);
    case OpKind::pow2: return scale(mul(g_out, a), 2.0);
    case OpKind::neg: return neg(g_out);
    case OpKind::relu: {
        Tensor step(a.shape());
        const Tensor& av = a.value();
        for (std::size_t i = 0; i < av.size(); ++i) step[i] = av[i] > 0.0 ? 1.0 : 0.0;
        return mul(g_out, g.constant(std::move(step)));
    }
    case OpKind::sqrt: return div(g_out, scale(y, 2.0));
    case OpKind::scale: return scale(g_out, param);
    case OpKind::matmul:
        return which == 0 ? matmul(g_out, transpose(b)) : matmul(transpose(a), g_out);
    case OpKind::transpose: return transpose(g_out);
    case OpKind::sum_all: return broadcast_scalar(g_out, a.shape());
    case OpKind::sum_rows: return expand_rows(g_out, a.shape()[0]);
    case OpKind::sum_cols: return transpose(expand_rows(g_out, a.shape()[1]));
    case OpKind::broadcast_scalar: return sum(g_out);
    case OpKind::expand_rows: return sum(g_out, 0);
    case OpKind::concat_rows: {
        std::size_t begin = 0;
        for (std::size_t i = 0; i < which; ++i) begin += g.node(inputs[i]).value.shape()[0];
        return slice_rows(g_out, begin, g.node(inputs[which]).value.shape()[0]);
    }
    case OpKind::slice_rows: return pad_rows(g_out, offset, a.shape()[0]);
    case OpKind::pad_rows: return slice_rows(g_out, offset, a.shape()[0]);
    case OpKind::leaf:
    case OpKind::constant: break;
    }
    throw Error(std::string("no backward rule for op ") + to_string(kind));
}

}  // namespace

std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph, bool allow_unused)
{
    Graph& g = graph_of(loss);
    if (loss.value().size() != 1) {
        throw ShapeError("grad needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    const NodeId top = loss.id();

    std::vector<char> is_target(top + 1, 0);
    for (const auto& w : wrt) {
        if (w.graph() != &g) throw LineageError("gradient target belongs to a different graph");
        if (w.id() <= top) is_target[w.id()] = 1;
    }

    // Ancestors of the loss.
    std::vector<char> upstream(top + 1, 0);
    upstream[top] = 1;
    for (NodeId id = top + 1; id-- > 0;) {
        if (!upstream[id]) continue;
        for (auto in : g.node(id).inputs) upstream[in] = 1;
    }

    // Nodes that depend on some target; only these need a gradient.
    std::vector<char> needed(top + 1, 0);
    for (NodeId id = 0; id <= top; ++id) {
        if (!upstream[id]) continue;
        if (is_target[id]) {
            needed[id] = 1;
            continue;
        }
        for (auto in : g.node(id).inputs) {
            if (needed[in]) {
                needed[id] = 1;
                break;
            }
        }
    }

    for (const auto& w : wrt) {
        if ((w.id() > top || !upstream[w.id()]) && !allow_unused) {
            throw LineageError("gradient target node " + std::to_string(w.id()) +
                               " has no path to the loss");
        }
    }

    std::vector<std::optional<Var>> grads(top + 1);
    grads[top] = g.constant(Tensor(loss.shape(), 1.0));
    for (NodeId id = top + 1; id-- > 0;) {
        if (!grads[id] || !needed[id]) continue;
        const OpKind kind = g.node(id).kind;
        if (kind == OpKind::leaf || kind == OpKind::constant) continue;
        const Var g_out = *grads[id];
        const std::size_t n_inputs = g.node(id).inputs.size();
        for (std::size_t which = 0; which < n_inputs; ++which) {
            const NodeId in = g.node(id).inputs[which];
            if (!needed[in]) continue;
            Var contribution = backward_rule(g, id, which, g_out);
            if (contribution.shape() != g.node(in).value.shape()) {
                throw ShapeError(std::string("backward of ") + to_string(kind) +
                                 " produced shape " + to_string(contribution.shape()) +
                                 " for input of shape " + to_string(g.node(in).value.shape()));
            }
            grads[in] = grads[in] ? add(*grads[in], contribution) : contribution;
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        std::optional<Var> gw = w.id() <= top ? grads[w.id()] : std::nullopt;
        if (!gw) {
            out.push_back(g.constant(Tensor(w.shape())));
        } else if (create_graph) {
            out.push_back(*gw);
        } else {
            out.push_back(g.constant(gw->value()));
        }
    }
    return out;
}

std::vector<Var> checkpoint(std::span<const Var> params)
{
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(graph_of(p).leaf(p.value(), true));
    return out;
}

}  // namespace metamask::autograd
