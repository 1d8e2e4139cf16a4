#pragma once

// Finite-difference gradient checks for every differentiable op, shared by
// the unit tests and the acceptance suite.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metamask/autograd.hpp"
#include "oracles.hpp"

namespace gradcheck {

using metamask::Shape;
using metamask::Tensor;
using metamask::autograd::Graph;
using metamask::autograd::Var;
namespace ag = metamask::autograd;

struct OpCase {
    std::string name;
    std::vector<Shape> inputs;
    std::function<Var(const std::vector<Var>&)> build;
    /// Inputs are drawn from [lo, hi]; `gap` keeps |x| away from 0.
    double lo = -1.0, hi = 1.0, gap = 0.0;
};

inline std::vector<OpCase> op_cases()
{
    const Shape m{3, 4}, v{4}, sq{3, 3};
    auto one = [](auto f) { return [f](const std::vector<Var>& x) { return f(x[0]); }; };
    auto two = [](auto f) { return [f](const std::vector<Var>& x) { return f(x[0], x[1]); }; };
    std::vector<OpCase> cases = {
        {"add", {m, m}, two([](auto a, auto b) { return ag::add(a, b); })},
        {"sub", {m, m}, two([](auto a, auto b) { return ag::sub(a, b); })},
        {"mul", {m, m}, two([](auto a, auto b) { return ag::mul(a, b); })},
        {"div", {m, m}, two([](auto a, auto b) { return ag::div(a, b); }), 0.5, 2.0},
        {"add_row", {m, v}, two([](auto a, auto b) { return ag::add(a, b); })},
        {"sub_row", {m, v}, two([](auto a, auto b) { return ag::sub(a, b); })},
        {"mul_row", {m, v}, two([](auto a, auto b) { return ag::mul(a, b); })},
        {"div_row", {m, v}, two([](auto a, auto b) { return ag::div(a, b); }), 0.5, 2.0},
        {"exp", {m}, one([](auto a) { return ag::exp(a); })},
        {"log", {m}, one([](auto a) { return ag::log(a); }), 0.3, 2.0},
        {"pow2", {m}, one([](auto a) { return ag::pow2(a); })},
        {"neg", {m}, one([](auto a) { return ag::neg(a); })},
        {"relu", {m}, one([](auto a) { return ag::relu(a); }), -1.0, 1.0, 0.05},
        {"sqrt", {m}, one([](auto a) { return ag::sqrt(a); }), 0.3, 2.0},
        {"scale", {m}, one([](auto a) { return ag::scale(a, -1.7); })},
        {"add_scalar", {m}, one([](auto a) { return ag::add_scalar(a, 0.3); })},
        {"matmul", {{3, 4}, {4, 2}}, two([](auto a, auto b) { return ag::matmul(a, b); })},
        {"transpose", {m}, one([](auto a) { return ag::transpose(a); })},
        {"sum_all", {m}, one([](auto a) { return ag::sum(a); })},
        {"sum_rows", {m}, one([](auto a) { return ag::sum(a, 0); })},
        {"sum_cols", {m}, one([](auto a) { return ag::sum(a, 1); })},
        {"mean", {m}, one([](auto a) { return ag::mean(a); })},
        {"broadcast_scalar", {{}}, one([](auto a) { return ag::broadcast_scalar(a, Shape{2, 3}); })},
        {"expand_rows", {v}, one([](auto a) { return ag::expand_rows(a, 3); })},
        {"concat_rows", {{2, 4}, {3, 4}}, [](const std::vector<Var>& x) { return ag::concat_rows(x); }},
        {"slice_rows", {{5, 3}}, one([](auto a) { return ag::slice_rows(a, 1, 3); })},
        {"pad_rows", {{2, 3}}, one([](auto a) { return ag::pad_rows(a, 1, 5); })},
        {"square_chain", {sq}, one([](auto a) { return ag::matmul(a, ag::transpose(a)); })},
    };
    return cases;
}

inline Tensor draw(std::mt19937_64& rng, const Shape& shape, const OpCase& c)
{
    Tensor t = oracle::random_tensor(rng, shape, c.lo, c.hi);
    if (c.gap > 0.0) {
        for (auto& x : t.data()) {
            if (std::abs(x) < c.gap) x = x < 0.0 ? x - c.gap : x + c.gap;
        }
    }
    return t;
}

/// L = sum(op(inputs) * weights) for a fixed random weight tensor.
struct Instance {
    const OpCase* op;
    std::vector<Tensor> inputs;
    Tensor weights;

    double loss(const std::vector<Tensor>& xs) const
    {
        Graph g;
        std::vector<Var> leaves;
        for (const auto& x : xs) leaves.push_back(g.leaf(x));
        Var out = op->build(leaves);
        return ag::sum(ag::mul(out, g.constant(weights))).value().item();
    }

    std::vector<Tensor> analytic() const
    {
        Graph g;
        std::vector<Var> leaves;
        for (const auto& x : inputs) leaves.push_back(g.leaf(x));
        Var out = op->build(leaves);
        Var l = ag::sum(ag::mul(out, g.constant(weights)));
        std::vector<Tensor> grads;
        for (const auto& gv : ag::grad(l, leaves, false)) grads.push_back(gv.value());
        return grads;
    }

    /// Worst relative error over inputs against central differences.
    double max_rel_err(double eps = 1e-6) const
    {
        const auto grads = analytic();
        double worst = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            auto f = [&](const Tensor& xi) {
                auto xs = inputs;
                xs[i] = xi;
                return loss(xs);
            };
            worst = std::max(worst, oracle::rel_err(grads[i], oracle::fd_gradient(f, inputs[i], eps)));
        }
        return worst;
    }
};

inline Instance make_instance(const OpCase& c, std::mt19937_64& rng)
{
    Instance inst{&c, {}, {}};
    for (const auto& s : c.inputs) inst.inputs.push_back(draw(rng, s, c));
    Graph g;
    std::vector<Var> leaves;
    for (const auto& x : inst.inputs) leaves.push_back(g.leaf(x));
    inst.weights = oracle::random_tensor(rng, c.build(leaves).shape(), -2.0, 2.0);
    return inst;
}

}  // namespace gradcheck
