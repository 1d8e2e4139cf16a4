#pragma once

#include <span>

#include "metamask/autograd.hpp"

namespace metamask::losses {

struct ContrastiveConfig {
    double temperature = 0.5;
    /// Keep the positive pair's own term in the softmax denominator, as in
    /// the literal sum over every (i', j') != (i, j).
    bool include_positive_in_denominator = true;

    void validate() const;
};

struct DrrConfig {
    double lambda = 0.005;
    /// Mean-center and unit-scale each column before correlating.
    bool standardize = false;

    void validate() const;
};

/// Multi-view contrastive loss over `views` (M tensors of N x D').
///
/// Sums, over every sample i and ordered view pair j < j+, the negative log
/// softmax weight of the positive (i, j+) among all candidates (i', j')
/// other than the anchor (i, j). Similarity is cosine over temperature.
autograd::Var contrastive_loss(std::span<const autograd::Var> views, const ContrastiveConfig& cfg);

/// D' x D' matrix of column cosine similarities between two N x D' batches:
/// C[k, k'] = <zA[:, k], zB[:, k']> / (|zA[:, k]| |zB[:, k']|).
autograd::Var cross_correlation(const autograd::Var& za, const autograd::Var& zb,
                                bool standardize = false);

/// sum_k (1 - C_kk)^2 + lambda * sum_{k != k'} C_kk'^2 for one view pair.
autograd::Var drr_from_correlation(const autograd::Var& c, double lambda);

/// Redundancy-reduction loss summed over all view pairs j < j+.
autograd::Var drr_loss(std::span<const autograd::Var> views, const DrrConfig& cfg);

/// L_drr + alpha * L_contrast.
autograd::Var regular_loss(std::span<const autograd::Var> z_drr, std::span<const autograd::Var> z_cl,
                           double alpha, const ContrastiveConfig& cl, const DrrConfig& drr);

}  // namespace metamask::losses
