#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metamask/autograd.hpp"
#include "metamask/data.hpp"
#include "metamask/losses.hpp"
#include "metamask/nn.hpp"

namespace metamask::meta {

enum class Schedule { cosine_annealing, fixed };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct OptimConfig {
    double lr_main = 1e-4;
    /// Trial-step rates; default to lr_main.
    std::optional<double> lr_trial_theta;
    std::optional<double> lr_trial_vartheta;
    double lr_mask = 1e-2;
    double momentum = 0.9;
    Schedule schedule = Schedule::cosine_annealing;
    std::size_t total_steps = 1000;
    double alpha = 100.0;

    double trial_theta() const { return lr_trial_theta.value_or(lr_main); }
    double trial_vartheta() const { return lr_trial_vartheta.value_or(lr_main); }
    /// Multiplier applied to every learning rate at `step` (0-based).
    double schedule_factor(std::size_t step) const;
    void validate() const;
};

/// Training variants. `no_meta` freezes the mask (contrastive plus
/// redundancy reduction only); `no_drr` drops the redundancy term;
/// `contrastive_only` is both; `drr_only` keeps only the redundancy term
/// and freezes the mask.
struct Ablation {
    bool no_meta = false;
    bool no_drr = false;
    bool contrastive_only = false;
    bool drr_only = false;

    bool meta_enabled() const { return !(no_meta || contrastive_only || drr_only); }
    bool uses_drr() const { return !(no_drr || contrastive_only); }
    bool uses_contrast() const { return !drr_only; }
    void validate() const;
};

struct TrainConfig {
    OptimConfig optim;
    losses::ContrastiveConfig contrastive;
    losses::DrrConfig drr;
    Ablation ablation;
    std::size_t batch_size = 64;

    void validate() const;
};

/// Parameters plus SGD momentum buffers. The mask has no buffer.
struct TrainState {
    nn::ModelParams params;
    nn::MlpParams velocity_encoder;
    nn::MlpParams velocity_cl;
    nn::MlpParams velocity_drr;
    std::size_t step = 0;

    static TrainState from_params(nn::ModelParams params);
};

struct RegularLosses {
    double drr = 0.0;
    double contrast = 0.0;
    double total = 0.0;
};

/// One update of encoder and both heads on L_drr + alpha * L_contrast with
/// the mask held constant. Does not advance state.step.
RegularLosses regular_step(TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg);

/// One-step lookahead weights after a plain SGD step on the contrastive
/// loss, kept differentiable with respect to the mask leaf.
struct TrialWeights {
    nn::BoundMlp theta;
    nn::BoundMlp vartheta;
    autograd::Var mask;
    double contrast = 0.0;  // L_contrast at the current weights
};

/// Records the trial weights on `graph`. `state` is not modified.
TrialWeights trial_weights(autograd::Graph& graph, const TrainState& state,
                           std::span<const Tensor> views, const TrainConfig& cfg);

/// Contrastive loss of the masked representation through a given encoder
/// and contrastive head, for every view.
autograd::Var masked_contrastive(autograd::Graph& graph, const nn::BoundMlp& theta,
                                 const nn::BoundMlp& vartheta, const autograd::Var& mask,
                                 std::span<const Tensor> views, const losses::ContrastiveConfig& cfg);

struct MetaResult {
    double meta_loss = 0.0;
    Tensor hypergradient;
};

/// Exact gradient of the post-lookahead contrastive loss with respect to
/// the mask, including the dependence of the trial weights on the mask.
MetaResult hypergradient(const TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg);

/// Updates the mask by plain SGD on the hypergradient. Nothing else changes.
MetaResult meta_step(TrainState& state, std::span<const Tensor> views, const TrainConfig& cfg);

struct StepRecord {
    std::size_t step = 0;
    double l_drr = 0.0;
    double l_contrast = 0.0;
    std::optional<double> l_meta;
    double mask_mean = 0.0;
    double mask_min = 0.0;
    double mask_max = 0.0;
    double lr_main = 0.0;
    double lr_mask = 0.0;
};

struct TrainResult {
    nn::ModelParams params;
    std::vector<StepRecord> records;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs total_steps iterations of: draw a minibatch, regular step, and,
/// unless ablated, a meta step on the same minibatch. Only the views of
/// `dataset` are read. Deterministic in `seed`. Non-finite values and
/// degenerate (zero-norm) features raise a DivergenceError, which
/// propagates after `on_step` has seen every completed step.
TrainResult train(const TrainConfig& cfg, const nn::ModelSpec& spec, const data::Dataset& dataset,
                  std::uint64_t seed, const StepCallback& on_step = {});

/// Same, starting from given parameters.
TrainResult train_from(const TrainConfig& cfg, nn::ModelParams init, const data::Dataset& dataset,
                       std::uint64_t seed, const StepCallback& on_step = {});

}  // namespace metamask::meta
