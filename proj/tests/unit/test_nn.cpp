#include <doctest.h>

#include <cmath>
#include <random>

#include "metamask/errors.hpp"
#include "metamask/nn.hpp"
#include "oracles.hpp"

using namespace metamask;
using autograd::Graph;
using autograd::Var;
namespace ag = autograd;

namespace {

nn::MlpParams linear(Tensor w, Tensor b)
{
    nn::MlpParams p;
    p.spec.widths = {w.rows(), w.cols()};
    p.layers.push_back({std::move(w), std::move(b)});
    return p;
}

std::vector<Tensor> weights_of(const nn::MlpParams& p)
{
    std::vector<Tensor> out;
    for (const auto& l : p.layers) out.push_back(l.weight);
    return out;
}

std::vector<Tensor> biases_of(const nn::MlpParams& p)
{
    std::vector<Tensor> out;
    for (const auto& l : p.layers) out.push_back(l.bias);
    return out;
}

}  // namespace

TEST_SUITE("nn")
{
    TEST_CASE("encoder examples")
    {
        const Tensor x = Tensor::matrix({{1, -2, 3}, {0.5, 0, -1}});
        Graph g;
        auto identity = nn::bind(g, linear(Tensor::identity(3), Tensor(Shape{3})), true);
        CHECK(nn::encoder_forward(identity, g.constant(x)).value() == x);

        Graph g2;
        auto zero = nn::bind(g2, linear(Tensor(Shape{3, 2}), Tensor(Shape{2})), true);
        CHECK(nn::encoder_forward(zero, g2.constant(x)).value() == Tensor(Shape{2, 2}));

        Graph g3;
        auto wrong = nn::bind(g3, linear(Tensor(Shape{4, 2}), Tensor(Shape{2})), true);
        CHECK_THROWS_AS(nn::encoder_forward(wrong, g3.constant(x)), ShapeError);
    }

    TEST_CASE("forward matches an independent MLP and the graph-free path")
    {
        std::mt19937_64 rng(31);
        const auto spec = nn::make_model_spec(5, {7, 6}, 4, {3}, 3);
        const auto params = nn::init_params(spec, 4);
        const Tensor x = oracle::random_tensor(rng, {6, 5});
        Graph g;
        auto theta = nn::bind(g, params.encoder, false);
        const Tensor h = nn::encoder_forward(theta, g.constant(x)).value();
        CHECK(h == nn::mlp_forward(params.encoder, x));
        const Tensor ref = oracle::mlp(weights_of(params.encoder), biases_of(params.encoder), x);
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }

    TEST_CASE("encoder and head gradients match central differences")
    {
        std::mt19937_64 rng(32);
        const auto spec = nn::make_model_spec(4, {5}, 3, {4}, 2);
        const auto params = nn::init_params(spec, 8);
        const Tensor x = oracle::random_tensor(rng, {5, 4});
        const Tensor r = oracle::random_tensor(rng, {5, 2});

        auto loss_of = [&](const nn::MlpParams& enc, const nn::MlpParams& head) {
            Graph g;
            auto th = nn::bind(g, enc, true);
            auto vt = nn::bind(g, head, true);
            Var z = nn::head_forward(vt, nn::encoder_forward(th, g.constant(x)));
            return ag::sum(ag::mul(z, g.constant(r))).value().item();
        };

        Graph g;
        auto th = nn::bind(g, params.encoder, true);
        auto vt = nn::bind(g, params.head_cl, true);
        Var z = nn::head_forward(vt, nn::encoder_forward(th, g.constant(x)));
        Var l = ag::sum(ag::mul(z, g.constant(r)));
        auto wrt = th.vars();
        for (const auto& v : vt.vars()) wrt.push_back(v);
        const auto grads = ag::grad(l, wrt, false);

        std::size_t idx = 0;
        for (int which = 0; which < 2; ++which) {
            const nn::MlpParams& base = which == 0 ? params.encoder : params.head_cl;
            const std::size_t n_tensors = base.tensors().size();
            for (std::size_t t = 0; t < n_tensors; ++t, ++idx) {
                auto f = [&](const Tensor& value) {
                    nn::MlpParams enc = params.encoder, head = params.head_cl;
                    *(which == 0 ? enc : head).tensors()[t] = value;
                    return loss_of(enc, head);
                };
                INFO("group " << which << " tensor " << t);
                CHECK(oracle::rel_err(grads[idx].value(), oracle::fd_gradient(f, *base.tensors()[t])) < 1e-6);
            }
        }
    }

    TEST_CASE("apply_mask examples")
    {
        const Tensor h = Tensor::matrix({{2, -3}});
        CHECK(nn::apply_mask(h, Tensor::vector({0.5, 2})) == Tensor::matrix({{1, -6}}));
        CHECK(nn::apply_mask(h, Tensor::vector({1, 1})) == h);
        CHECK(nn::apply_mask(h, Tensor::vector({0, 0})) == Tensor(Shape{1, 2}));
        CHECK_THROWS_AS(nn::apply_mask(h, Tensor::vector({1, 1, 1})), ShapeError);

        Graph g;
        Var hv = g.leaf(h);
        Var m = g.leaf(Tensor::vector({0.5, 2}));
        CHECK(nn::apply_mask(hv, m).value() == Tensor::matrix({{1, -6}}));
        CHECK_THROWS_AS(nn::apply_mask(hv, g.leaf(Tensor::vector({1}))), ShapeError);
    }

    TEST_CASE("head examples")
    {
        const Tensor ht = Tensor::matrix({{1, 2}, {3, 4}});
        Graph g;
        auto id = nn::bind(g, linear(Tensor::identity(2), Tensor(Shape{2})), true);
        CHECK(nn::head_forward(id, g.constant(ht)).value() == ht);
        const auto spec = nn::make_model_spec(3, {4}, 2, {8}, 5);
        CHECK(spec.head_cl.out() == 5);
        CHECK(spec.head_drr.out() == 5);
        CHECK(spec.encoder.out() == 2);
    }

    TEST_CASE("init_params")
    {
        const auto spec = nn::make_model_spec(6, {8}, 4, {4}, 4);
        const auto a = nn::init_params(spec, 1);
        const auto b = nn::init_params(spec, 1);
        const auto c = nn::init_params(spec, 2);
        CHECK(a.encoder.layers[0].weight == b.encoder.layers[0].weight);
        CHECK(a.head_drr.layers[1].weight == b.head_drr.layers[1].weight);
        CHECK(a.encoder.layers[0].weight != c.encoder.layers[0].weight);
        CHECK(a.mask == Tensor::vector({1, 1, 1, 1}));
        for (const auto& layer : a.encoder.layers) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
            for (double w : layer.weight.data()) CHECK(std::abs(w) <= bound);
            for (double v : layer.bias.data()) CHECK(v == 0.0);
        }
    }

    TEST_CASE("spec validation")
    {
        CHECK_THROWS_AS(nn::MlpSpec{{3}}.validate(), ConfigError);
        CHECK_THROWS_AS((nn::MlpSpec{{3, 0}}.validate()), ConfigError);
        auto params = nn::init_params(nn::make_model_spec(3, {}, 2, {}, 2), 0);
        params.mask = Tensor::vector({1, 1, 1});
        CHECK_THROWS_AS(params.validate(), ShapeError);
    }

    TEST_CASE("save and load round trip")
    {
        const auto params = nn::init_params(nn::make_model_spec(5, {6}, 3, {4}, 2), 9);
        auto modified = params;
        modified.mask = Tensor::vector({0.25, -1, 3});
        const auto dir = oracle::temp_dir("params");
        nn::save_params(dir / "snap", modified);
        const auto back = nn::load_params(dir / "snap");
        CHECK(back.mask == modified.mask);
        CHECK(back.encoder.spec == modified.encoder.spec);
        CHECK(back.head_cl.spec == modified.head_cl.spec);
        for (std::size_t l = 0; l < back.encoder.layers.size(); ++l) {
            CHECK(back.encoder.layers[l].weight == modified.encoder.layers[l].weight);
            CHECK(back.encoder.layers[l].bias == modified.encoder.layers[l].bias);
        }
        CHECK(back.head_drr.layers.back().weight == modified.head_drr.layers.back().weight);
        CHECK_THROWS_AS(nn::load_params(dir / "missing"), IoError);
    }
}
