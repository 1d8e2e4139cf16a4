#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metamask/data.hpp"
#include "metamask/meta_opt.hpp"
#include "metamask/nn.hpp"
#include "metamask/tensor.hpp"

namespace metamask::eval {

/// Frozen representations with their labels.
struct RepresentationSet {
    Tensor reps;  // N x D
    std::vector<std::size_t> labels;

    void validate() const;
};

/// Representations of view 0 of `ds`: the unmasked encoder output h, or
/// h * mask when `masked`.
RepresentationSet represent(const nn::ModelParams& params, const data::Dataset& ds, bool masked = false);

/// k-nearest-neighbour accuracy under cosine distance. Majority vote; ties
/// go to the class with the smallest summed distance, then the lowest
/// class index. Neighbour ranking ties go to the lower training index.
double knn_eval(const RepresentationSet& train, const RepresentationSet& test, std::size_t k);

/// Serial reference of knn_eval, kept for testing the parallel path.
double knn_eval_serial(const RepresentationSet& train, const RepresentationSet& test, std::size_t k);

struct ProbeConfig {
    std::size_t epochs = 200;
    double lr = 0.5;
    /// Scale features to zero mean and unit variance using training stats.
    bool standardize = true;
};

/// Softmax-regression head trained by full-batch gradient descent on frozen
/// training representations; returns test accuracy.
double linear_probe(const RepresentationSet& train, const RepresentationSet& test, const ProbeConfig& cfg = {});

struct MaskStudyResult {
    double mask_rate = 0.0;
    std::vector<double> accuracies;
    double baseline = 0.0;
};

/// For each rate and trial, zero ceil(rate * D) uniformly chosen dimensions
/// in both sets and run knn_eval. Trial t of rate r draws from
/// mix_seed(seed, r, t), so results do not depend on `threads`.
std::vector<MaskStudyResult> random_mask_study(const RepresentationSet& train, const RepresentationSet& test,
                                               const std::vector<double>& mask_rates, std::size_t trials,
                                               std::size_t k, std::uint64_t seed, int threads = 1);

struct LearnedMaskReport {
    std::vector<std::size_t> below_mean_dims;
    /// True when no dimension sits below the mean weight (e.g. untrained).
    bool degenerate = false;
    std::vector<MaskStudyResult> results;
};

/// Same protocol as random_mask_study but masks are drawn only from the
/// dimensions whose learned weight is below the mean weight; rate 1 masks
/// all of them.
LearnedMaskReport learned_mask_study(const Tensor& mask, const RepresentationSet& train,
                                     const RepresentationSet& test, const std::vector<double>& mask_rates,
                                     std::size_t trials, std::size_t k, std::uint64_t seed, int threads = 1);

enum class Discrepancy { sq_dist, neg_log_cos };

std::string to_string(Discrepancy d);
Discrepancy parse_discrepancy(const std::string& s);

/// Conditional variance: mean over samples of delta(feature, its class
/// mean), i.e. the class-frequency-weighted mean of per-class dispersion.
/// Per-dimension mode returns a length-D vector using the scalar delta on
/// each coordinate; otherwise a scalar.
Tensor conditional_variance(const Tensor& features, const std::vector<std::size_t>& labels, Discrepancy delta,
                            bool per_dimension);

struct Theorem2Report {
    double phi_masked = 0.0;
    double phi_unmasked = 0.0;
    /// Per-dimension squared-distance dispersion of each projected feature.
    Tensor per_dim_masked;
    Tensor per_dim_unmasked;
    /// per_dim_masked - per_dim_unmasked.
    Tensor per_dim_gap;
};

/// Dispersion of g_cl(h * mask) versus g_cl(h) on view 0 of `ds`.
Theorem2Report theorem2_check(const nn::ModelParams& params, const data::Dataset& ds, Discrepancy delta);

/// Fraction of variance of each representation dimension explained by a
/// least-squares linear readout from the input columns [begin, end).
std::vector<double> readout_r2(const Tensor& reps, const Tensor& inputs, std::size_t begin, std::size_t end);

struct SweepRow {
    std::size_t width = 0;
    std::string variant;  // "metamask" or "no_meta"
    double accuracy = 0.0;
    double final_drr = 0.0;
    double final_contrast = 0.0;
};

struct SweepSetup {
    meta::TrainConfig train;
    std::vector<std::size_t> encoder_hidden;
    std::size_t rep_dim = 64;
    /// Hidden widths of both heads; empty means a single hidden layer as wide
    /// as the head output.
    std::optional<std::vector<std::size_t>> head_hidden;
    std::size_t knn_k = 5;
    bool eval_on_masked = false;
};

/// Called with (width, variant, record) for every training step of a sweep.
using SweepStepCallback = std::function<void(std::size_t, const std::string&, const meta::StepRecord&)>;

/// One model per head output width for MetaMask and the no_meta ablation,
/// everything else fixed; KNN accuracy on `test`.
std::vector<SweepRow> dimension_sweep(const SweepSetup& setup, const data::Dataset& train_set,
                                      const data::Dataset& test_set, const std::vector<std::size_t>& head_widths,
                                      std::uint64_t seed, const SweepStepCallback& on_step = {});

}  // namespace metamask::eval
