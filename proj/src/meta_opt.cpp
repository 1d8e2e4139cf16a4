#include "metamask/meta_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "metamask/errors.hpp"
#include "metamask/random.hpp"

namespace metamask::meta {

using autograd::Graph;
using autograd::Var;
namespace ag = autograd;

std::string to_string(Schedule s)
{
    return s == Schedule::fixed ? "fixed" : "cosine_annealing";
}

Schedule parse_schedule(const std::string& s)
{
    if (s == "fixed") return Schedule::fixed;
    if (s == "cosine_annealing") return Schedule::cosine_annealing;
    throw ConfigError("unknown schedule '" + s + "' (expected cosine_annealing or fixed)");
}

double OptimConfig::schedule_factor(std::size_t step) const
{
    if (schedule == Schedule::fixed) return 1.0;
    const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void OptimConfig::validate() const
{
    // Zero rates are allowed so a group can be frozen; negative ones are not.
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be nonnegative");
    };
    nonneg(lr_main, "lr_main");
    nonneg(trial_theta(), "lr_trial_theta");
    nonneg(trial_vartheta(), "lr_trial_vartheta");
    nonneg(lr_mask, "lr_mask");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
    nonneg(alpha, "alpha");
}

void Ablation::validate() const
{
    if (contrastive_only && drr_only) throw ConfigError("contrastive_only and drr_only are exclusive");
    if (drr_only && no_drr) throw ConfigError("drr_only with no_drr leaves no objective");
}

void TrainConfig::validate() const
{
    optim.validate();
    contrastive.validate();
    drr.validate();
    ablation.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

TrainState TrainState::from_params(nn::ModelParams params)
{
    TrainState s;
    s.velocity_encoder = params.encoder.zeros_like();
    s.velocity_cl = params.head_cl.zeros_like();
    s.velocity_drr = params.head_drr.zeros_like();
    s.params = std::move(params);
    return s;
}

namespace {

std::vector<Var> constants(Graph& g, std::span<const Tensor> views)
{
    std::vector<Var> out;
    for (const auto& v : views) out.push_back(g.constant(v));
    return out;
}

void sgd_momentum(nn::MlpParams& params, nn::MlpParams& velocity, const std::vector<Var>& grads,
                  std::size_t first, double lr, double momentum)
{
    auto p = params.tensors();
    auto v = velocity.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Tensor& g = grads[first + i].value();
        auto pd = p[i]->data();
        auto vd = v[i]->data();
        for (std::size_t e = 0; e < pd.size(); ++e) {
            vd[e] = momentum * vd[e] + g[e];
            pd[e] -= lr * vd[e];
        }
    }
}

bool all_finite(const std::vector<Var>& vars)
{
    return std::all_of(vars.begin(), vars.end(), [](const Var& v) { return v.value().all_finite(); });
}

}  // namespace

Var masked_contrastive(Graph& graph, const nn::BoundMlp& theta, const nn::BoundMlp& vartheta, const Var& mask,
                       std::span<const Tensor> views, const losses::ContrastiveConfig& cfg)
{
    std::vector<Var> z;
    for (const auto& x : constants(graph, views)) {
        z.push_back(nn::head_forward(vartheta, nn::apply_mask(nn::encoder_forward(theta, x), mask)));
    }
    return losses::contrastive_loss(z, cfg);
}

RegularLosses regular_step(TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg)
{
    if (views.size() < 2) throw ConfigError("a training batch needs at least two views");
    const auto& ab = cfg.ablation;
    Graph g;
    auto theta = nn::bind(g, state.params.encoder, true);
    auto cl = nn::bind(g, state.params.head_cl, true);
    auto drr = nn::bind(g, state.params.head_drr, true);
    Var mask = g.constant(state.params.mask);

    std::vector<Var> z_cl, z_drr;
    for (const auto& x : constants(g, views)) {
        Var h_tilde = nn::apply_mask(nn::encoder_forward(theta, x), mask);
        if (ab.uses_contrast()) z_cl.push_back(nn::head_forward(cl, h_tilde));
        if (ab.uses_drr()) z_drr.push_back(nn::head_forward(drr, h_tilde));
    }

    RegularLosses out;
    Var total;
    if (ab.uses_drr()) {
        Var l_drr = losses::drr_loss(z_drr, cfg.drr);
        out.drr = l_drr.value().item();
        total = l_drr;
    }
    if (ab.uses_contrast()) {
        Var l_c = losses::contrastive_loss(z_cl, cfg.contrastive);
        out.contrast = l_c.value().item();
        Var weighted = ag::scale(l_c, cfg.optim.alpha);
        total = total.valid() ? ag::add(total, weighted) : weighted;
    }
    out.total = total.value().item();
    if (!std::isfinite(out.total)) throw DivergenceError(state.step, "non-finite regular loss");

    std::vector<Var> wrt = theta.vars();
    const std::size_t cl_first = wrt.size();
    for (const auto& v : cl.vars()) wrt.push_back(v);
    const std::size_t drr_first = wrt.size();
    for (const auto& v : drr.vars()) wrt.push_back(v);

    auto grads = ag::grad(total, wrt, false, true);
    if (!all_finite(grads)) throw DivergenceError(state.step, "non-finite parameter gradient");

    const double lr = cfg.optim.lr_main * cfg.optim.schedule_factor(state.step);
    sgd_momentum(state.params.encoder, state.velocity_encoder, grads, 0, lr, cfg.optim.momentum);
    sgd_momentum(state.params.head_cl, state.velocity_cl, grads, cl_first, lr, cfg.optim.momentum);
    sgd_momentum(state.params.head_drr, state.velocity_drr, grads, drr_first, lr, cfg.optim.momentum);
    return out;
}

TrialWeights trial_weights(Graph& graph, const TrainState& state, std::span<const Tensor> views,
                           const TrainConfig& cfg)
{
    auto theta = nn::bind(graph, state.params.encoder, true);
    auto vartheta = nn::bind(graph, state.params.head_cl, true);
    Var mask = graph.leaf(state.params.mask, true);

    Var loss = masked_contrastive(graph, theta, vartheta, mask, views, cfg.contrastive);

    std::vector<Var> wrt = theta.vars();
    const std::size_t head_first = wrt.size();
    for (const auto& v : vartheta.vars()) wrt.push_back(v);
    auto grads = ag::grad(loss, wrt, true);

    const double factor = cfg.optim.schedule_factor(state.step);
    const double lr_theta = cfg.optim.trial_theta() * factor;
    const double lr_vartheta = cfg.optim.trial_vartheta() * factor;
    std::vector<Var> trial;
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        const double lr = i < head_first ? lr_theta : lr_vartheta;
        trial.push_back(ag::sub(wrt[i], ag::scale(grads[i], lr)));
    }
    std::vector<Var> theta_trial(trial.begin(), trial.begin() + static_cast<std::ptrdiff_t>(head_first));
    std::vector<Var> head_trial(trial.begin() + static_cast<std::ptrdiff_t>(head_first), trial.end());

    return TrialWeights{nn::BoundMlp::from_vars(theta.spec, theta_trial),
                        nn::BoundMlp::from_vars(vartheta.spec, head_trial), mask, loss.value().item()};
}

MetaResult hypergradient(const TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg)
{
    Graph g;
    TrialWeights tw = trial_weights(g, state, views, cfg);
    Var meta_loss = masked_contrastive(g, tw.theta, tw.vartheta, tw.mask, views, cfg.contrastive);
    std::vector<Var> wrt{tw.mask};
    auto grads = ag::grad(meta_loss, wrt, false);
    return MetaResult{meta_loss.value().item(), grads.front().value()};
}

MetaResult meta_step(TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg)
{
    MetaResult r = hypergradient(state, views, cfg);
    if (!std::isfinite(r.meta_loss) || !r.hypergradient.all_finite()) {
        throw DivergenceError(state.step, "non-finite hypergradient");
    }
    const double lr = cfg.optim.lr_mask * cfg.optim.schedule_factor(state.step);
    auto m = state.params.mask.data();
    for (std::size_t k = 0; k < m.size(); ++k) m[k] -= lr * r.hypergradient[k];
    return r;
}

TrainResult train_from(const TrainConfig& cfg, nn::ModelParams init, const data::Dataset& dataset,
                       std::uint64_t seed, const StepCallback& on_step)
{
    cfg.validate();
    init.validate();
    if (dataset.d_in() != init.encoder.spec.in()) {
        throw ShapeError("dataset width " + std::to_string(dataset.d_in()) +
                         " does not match encoder input " + std::to_string(init.encoder.spec.in()));
    }
    TrainState state = TrainState::from_params(std::move(init));
    data::MinibatchStream batches(dataset, cfg.batch_size, mix_seed(seed, 0xba7c));

    TrainResult result;
    for (std::size_t t = 0; t < cfg.optim.total_steps; ++t) {
        state.step = t;
        const data::MultiViewBatch batch = batches.next();
        StepRecord rec;
        rec.step = t;
        try {
            const RegularLosses rl = regular_step(state, batch.views, cfg);
            rec.l_drr = rl.drr;
            rec.l_contrast = rl.contrast;
            if (cfg.ablation.meta_enabled()) rec.l_meta = meta_step(state, batch.views, cfg).meta_loss;
        } catch (const DomainError& e) {
            // Features collapsed to zero or overflowed mid-run.
            throw DivergenceError(t, e.what());
        }

        const auto m = state.params.mask.data();
        double sum = 0.0;
        rec.mask_min = m.empty() ? 0.0 : m[0];
        rec.mask_max = rec.mask_min;
        for (double v : m) {
            sum += v;
            rec.mask_min = std::min(rec.mask_min, v);
            rec.mask_max = std::max(rec.mask_max, v);
        }
        rec.mask_mean = m.empty() ? 0.0 : sum / static_cast<double>(m.size());
        const double factor = cfg.optim.schedule_factor(t);
        rec.lr_main = cfg.optim.lr_main * factor;
        rec.lr_mask = cfg.ablation.meta_enabled() ? cfg.optim.lr_mask * factor : 0.0;

        result.records.push_back(rec);
        if (on_step) on_step(rec);
    }
    state.step = cfg.optim.total_steps;
    result.params = std::move(state.params);
    return result;
}

TrainResult train(const TrainConfig& cfg, const nn::ModelSpec& spec, const data::Dataset& dataset,
                  std::uint64_t seed, const StepCallback& on_step)
{
    return train_from(cfg, nn::init_params(spec, mix_seed(seed, 0x1a17)), dataset, seed, on_step);
}

}  // namespace metamask::meta
