#include <doctest.h>

#include <cmath>
#include <random>

#include "metamask/errors.hpp"
#include "metamask/meta_opt.hpp"
#include "oracles.hpp"

using namespace metamask;
using autograd::Graph;
using autograd::Var;
namespace ag = autograd;

namespace {

data::Dataset small_data(std::size_t n = 32, std::uint64_t seed = 0)
{
    data::SyntheticSpec spec;
    spec.n_samples = n;
    spec.d_signal = 2;
    spec.d_confounder = 2;
    spec.d_noise = 2;
    spec.seed = seed;
    return data::make_synthetic(spec);
}

nn::ModelSpec small_spec()
{
    return nn::make_model_spec(6, {16}, 8, {16}, 4);
}

meta::TrainConfig small_config()
{
    meta::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.optim.lr_main = 1e-2;
    cfg.optim.lr_mask = 1e-1;
    cfg.optim.alpha = 1.0;
    cfg.optim.total_steps = 20;
    return cfg;
}

std::vector<Tensor> first_views(const data::Dataset& ds, std::size_t n)
{
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return data::gather(ds, idx).views;
}

bool same_mlp(const nn::MlpParams& a, const nn::MlpParams& b)
{
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) return false;
    }
    return true;
}

bool same_params(const nn::ModelParams& a, const nn::ModelParams& b)
{
    return same_mlp(a.encoder, b.encoder) && same_mlp(a.head_cl, b.head_cl) && same_mlp(a.head_drr, b.head_drr) &&
           a.mask == b.mask;
}

/// Contrastive loss after the lookahead, as a plain function of the mask.
double lookahead_loss(const meta::TrainState& state, const std::vector<Tensor>& views, const meta::TrainConfig& cfg,
                      const Tensor& mask)
{
    meta::TrainState s = state;
    s.params.mask = mask;
    Graph g;
    auto tw = meta::trial_weights(g, s, views, cfg);
    return meta::masked_contrastive(g, tw.theta, tw.vartheta, tw.mask, views, cfg.contrastive).value().item();
}

}  // namespace

TEST_SUITE("meta_opt")
{
    TEST_CASE("schedule")
    {
        meta::OptimConfig o;
        o.total_steps = 100;
        CHECK(o.schedule_factor(0) == 1.0);
        CHECK(o.schedule_factor(50) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(o.schedule_factor(100) == doctest::Approx(0.0).epsilon(1e-15));
        o.schedule = meta::Schedule::fixed;
        CHECK(o.schedule_factor(77) == 1.0);
        CHECK(meta::parse_schedule("fixed") == meta::Schedule::fixed);
        CHECK_THROWS_AS(meta::parse_schedule("step"), ConfigError);
    }

    TEST_CASE("config validation")
    {
        auto cfg = small_config();
        cfg.optim.lr_main = -1.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = small_config();
        cfg.optim.momentum = 1.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = small_config();
        cfg.ablation.contrastive_only = true;
        cfg.ablation.drr_only = true;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = small_config();
        cfg.optim.lr_main = 0.0;
        CHECK_NOTHROW(cfg.validate());
    }

    TEST_CASE("zero main rate leaves the networks unchanged")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.lr_main = 0.0;
        auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 1));
        const auto before = state.params;
        meta::regular_step(state, first_views(ds, 8), cfg);
        CHECK(same_params(before, state.params));
    }

    TEST_CASE("zero alpha gives the contrastive head no update")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.alpha = 0.0;
        auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 2));
        const auto before = state.params;
        meta::regular_step(state, first_views(ds, 8), cfg);
        CHECK(same_mlp(before.head_cl, state.params.head_cl));
        CHECK_FALSE(same_mlp(before.head_drr, state.params.head_drr));
        CHECK_FALSE(same_mlp(before.encoder, state.params.encoder));
        CHECK(before.mask == state.params.mask);
    }

    TEST_CASE("regular step descends on a small batch")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.lr_main = 1e-4;
        cfg.optim.momentum = 0.0;
        auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 3));
        const auto views = first_views(ds, 8);
        const double first = meta::regular_step(state, views, cfg).total;
        auto probe = state;
        const double second = meta::regular_step(probe, views, cfg).total;
        CHECK(second < first);
    }

    TEST_CASE("trial weights with zero rate equal the current weights")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.lr_trial_theta = 0.0;
        cfg.optim.lr_trial_vartheta = 0.0;
        const auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 4));
        Graph g;
        auto tw = meta::trial_weights(g, state, first_views(ds, 8), cfg);
        CHECK(same_mlp(tw.theta.values(), state.params.encoder));
        CHECK(same_mlp(tw.vartheta.values(), state.params.head_cl));
    }

    TEST_CASE("trial weights are one SGD step on the contrastive loss")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.lr_trial_theta = 0.05;
        cfg.optim.lr_trial_vartheta = 0.2;
        auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 5));
        state.step = 5;
        const auto views = first_views(ds, 8);
        const double factor = cfg.optim.schedule_factor(5);

        Graph g;
        auto tw = meta::trial_weights(g, state, views, cfg);
        auto enc = tw.theta.values();
        auto head = tw.vartheta.values();

        // Reference gradients from central differences of the plain loss.
        auto loss_at = [&](const nn::ModelParams& p) {
            Graph h;
            auto th = nn::bind(h, p.encoder, false);
            auto vt = nn::bind(h, p.head_cl, false);
            return meta::masked_contrastive(h, th, vt, h.constant(p.mask), views, cfg.contrastive).value().item();
        };
        for (std::size_t t = 0; t < state.params.encoder.tensors().size(); ++t) {
            auto f = [&](const Tensor& v) {
                auto p = state.params;
                *p.encoder.tensors()[t] = v;
                return loss_at(p);
            };
            const Tensor fd = oracle::fd_gradient(f, *state.params.encoder.tensors()[t]);
            const Tensor& w0 = *state.params.encoder.tensors()[t];
            Tensor expected = w0;
            for (std::size_t e = 0; e < expected.size(); ++e) expected[e] -= 0.05 * factor * fd[e];
            const Tensor& got = *enc.tensors()[t];
            for (std::size_t e = 0; e < got.size(); ++e) CHECK(got[e] == doctest::Approx(expected[e]).epsilon(1e-8));
        }
        for (std::size_t t = 0; t < state.params.head_cl.tensors().size(); ++t) {
            auto f = [&](const Tensor& v) {
                auto p = state.params;
                *p.head_cl.tensors()[t] = v;
                return loss_at(p);
            };
            const Tensor fd = oracle::fd_gradient(f, *state.params.head_cl.tensors()[t]);
            const Tensor& w0 = *state.params.head_cl.tensors()[t];
            const Tensor& got = *head.tensors()[t];
            for (std::size_t e = 0; e < got.size(); ++e) {
                CHECK(got[e] == doctest::Approx(w0[e] - 0.2 * factor * fd[e]).epsilon(1e-8));
            }
        }
    }

    TEST_CASE("hypergradient matches differences of the full lookahead")
    {
        const auto ds = small_data(48, 1);
        for (std::uint64_t seed : {6u, 7u, 8u}) {
            auto cfg = small_config();
            cfg.optim.lr_trial_theta = 0.3;
            cfg.optim.lr_trial_vartheta = 0.3;
            auto state = meta::TrainState::from_params(nn::init_params(small_spec(), seed));
            std::mt19937_64 rng(seed);
            state.params.mask = oracle::random_tensor(rng, {8}, 0.5, 1.5);
            const auto views = first_views(ds, 12);
            const auto r = meta::hypergradient(state, views, cfg);
            CHECK(r.meta_loss == doctest::Approx(lookahead_loss(state, views, cfg, state.params.mask)).epsilon(1e-12));
            auto f = [&](const Tensor& m) { return lookahead_loss(state, views, cfg, m); };
            const Tensor fd = oracle::fd_gradient(f, state.params.mask, 1e-4);
            INFO("seed " << seed);
            CHECK(oracle::rel_err(r.hypergradient, fd) < 1e-3);
        }
    }

    TEST_CASE("meta step only moves the mask and regular step never does")
    {
        const auto ds = small_data();
        const auto cfg = small_config();
        auto state = meta::TrainState::from_params(nn::init_params(small_spec(), 9));
        const auto views = first_views(ds, 8);
        const auto before = state.params;
        const auto r = meta::meta_step(state, views, cfg);
        CHECK(same_mlp(before.encoder, state.params.encoder));
        CHECK(same_mlp(before.head_cl, state.params.head_cl));
        CHECK(same_mlp(before.head_drr, state.params.head_drr));
        Tensor expected = before.mask;
        for (std::size_t k = 0; k < expected.size(); ++k) expected[k] -= cfg.optim.lr_mask * r.hypergradient[k];
        CHECK(state.params.mask == expected);

        const Tensor mask = state.params.mask;
        meta::regular_step(state, views, cfg);
        CHECK(state.params.mask == mask);
    }

    TEST_CASE("zero mask rate reproduces no_meta training")
    {
        const auto ds = small_data();
        auto cfg = small_config();
        cfg.optim.lr_mask = 0.0;
        const auto with = meta::train(cfg, small_spec(), ds, 11);
        cfg.ablation.no_meta = true;
        const auto without = meta::train(cfg, small_spec(), ds, 11);
        CHECK(same_params(with.params, without.params));
        CHECK(with.records.back().l_meta.has_value());
        CHECK_FALSE(without.records.back().l_meta.has_value());
    }

    TEST_CASE("ablations keep the mask at ones")
    {
        const auto ds = small_data();
        for (int which = 0; which < 3; ++which) {
            auto cfg = small_config();
            if (which == 0) {
                cfg.ablation.no_meta = true;
                cfg.ablation.no_drr = true;
            }
            if (which == 1) cfg.ablation.contrastive_only = true;
            if (which == 2) cfg.ablation.drr_only = true;
            const auto r = meta::train(cfg, small_spec(), ds, 12);
            CHECK(r.params.mask == Tensor(Shape{8}, 1.0));
            for (const auto& rec : r.records) {
                CHECK(rec.mask_mean == 1.0);
                CHECK(rec.lr_mask == 0.0);
            }
        }
    }

    TEST_CASE("training is deterministic and records every step")
    {
        const auto ds = small_data();
        const auto cfg = small_config();
        std::size_t seen = 0;
        const auto a = meta::train(cfg, small_spec(), ds, 13, [&](const meta::StepRecord& r) { CHECK(r.step == seen++); });
        const auto b = meta::train(cfg, small_spec(), ds, 13);
        const auto c = meta::train(cfg, small_spec(), ds, 14);
        CHECK(seen == cfg.optim.total_steps);
        CHECK(same_params(a.params, b.params));
        CHECK_FALSE(same_params(a.params, c.params));
        CHECK(a.records.back().l_meta == b.records.back().l_meta);
        CHECK(a.params.mask != Tensor(Shape{8}, 1.0));
        CHECK(a.records.front().lr_main == cfg.optim.lr_main);
    }

    TEST_CASE("divergence reports the failing step")
    {
        auto ds = small_data(16);
        // One poisoned sample overflows the forward pass when it is drawn.
        for (auto& v : ds.views) {
            for (std::size_t k = 0; k < v.cols(); ++k) v(9, k) = 1e308;
        }
        auto cfg = small_config();
        cfg.batch_size = 2;
        std::size_t seen = 0;
        try {
            meta::train(cfg, small_spec(), ds, 15, [&](const meta::StepRecord&) { ++seen; });
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(e.step() == seen);
        }
    }

    TEST_CASE("shape mismatch between data and encoder")
    {
        const auto ds = small_data();
        CHECK_THROWS_AS(meta::train(small_config(), nn::make_model_spec(7, {16}, 8, {16}, 4), ds, 0), ShapeError);
    }
}
