#include "metamask/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "metamask/errors.hpp"

namespace metamask::losses {

using autograd::Var;
namespace ag = autograd;

void ContrastiveConfig::validate() const
{
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("contrastive temperature must be positive, got " + std::to_string(temperature));
    }
}

void DrrConfig::validate() const
{
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("redundancy-reduction lambda must be positive, got " + std::to_string(lambda));
    }
}

namespace {

void check_views(std::span<const Var> views, const char* what)
{
    if (views.size() < 2) {
        throw ConfigError(std::string(what) + " needs at least two views, got " +
                          std::to_string(views.size()));
    }
    const Shape& s = views.front().shape();
    if (s.size() != 2 || s[0] == 0) {
        throw ShapeError(std::string(what) + " expects non-empty N x D views, got " + to_string(s));
    }
    for (const auto& v : views) {
        if (v.shape() != s) {
            throw ShapeError(std::string(what) + ": view shapes differ: " + to_string(s) + " vs " +
                             to_string(v.shape()));
        }
    }
}

/// Rows of `x` scaled to unit length.
Var normalize_rows(const Var& x, std::size_t n_per_view)
{
    Var norms = ag::sqrt(ag::sum(ag::pow2(x), 1));
    const Tensor& nv = norms.value();
    for (std::size_t r = 0; r < nv.size(); ++r) {
        if (nv[r] == 0.0) {
            throw DomainError("zero-norm feature for sample " + std::to_string(r % n_per_view) +
                              " of view " + std::to_string(r / n_per_view));
        }
    }
    return ag::transpose(ag::div(ag::transpose(x), norms));
}

}  // namespace

Var contrastive_loss(std::span<const Var> views, const ContrastiveConfig& cfg)
{
    cfg.validate();
    check_views(views, "contrastive_loss");
    ag::Graph& g = *views.front().graph();
    const std::size_t m = views.size();
    const std::size_t n = views.front().shape()[0];
    const std::size_t total = n * m;
    if (total == 2 && !cfg.include_positive_in_denominator) {
        throw ConfigError("excluding the positive leaves an empty denominator for N = 1, M = 2");
    }

    Var z = normalize_rows(ag::concat_rows(views), n);
    Var sim = ag::scale(ag::matmul(z, ag::transpose(z)), 1.0 / cfg.temperature);

    Var loss;
    for (std::size_t j = 0; j + 1 < m; ++j) {
        Var anchors = ag::slice_rows(sim, j * n, n);  // n x total
        Var shared_lse;
        for (std::size_t jp = j + 1; jp < m; ++jp) {
            Tensor positive(Shape{n, total});
            for (std::size_t i = 0; i < n; ++i) positive(i, jp * n + i) = 1.0;

            Var lse;
            if (cfg.include_positive_in_denominator && shared_lse.valid()) {
                lse = shared_lse;
            } else {
                Tensor keep(Shape{n, total}, 1.0);
                for (std::size_t i = 0; i < n; ++i) {
                    keep(i, j * n + i) = 0.0;
                    if (!cfg.include_positive_in_denominator) keep(i, jp * n + i) = 0.0;
                }
                // Row-wise max shift; exact in value, only guards exp().
                Var shift = g.constant(ops::row_max(anchors.value(), keep));
                Var shifted = ag::transpose(ag::sub(ag::transpose(anchors), shift));
                Var terms = ag::mul(ag::exp(shifted), g.constant(std::move(keep)));
                lse = ag::add(ag::log(ag::sum(terms, 1)), shift);
                shared_lse = lse;
            }
            Var pos = ag::sum(ag::mul(anchors, g.constant(std::move(positive))), 1);
            Var pair = ag::sum(ag::sub(lse, pos));
            loss = loss.valid() ? ag::add(loss, pair) : pair;
        }
    }
    return loss;
}

Var cross_correlation(const Var& za, const Var& zb, bool standardize)
{
    if (za.shape().size() != 2 || za.shape() != zb.shape() || za.shape()[0] == 0) {
        throw ShapeError("cross_correlation expects two non-empty N x D' batches of equal shape, got " +
                         to_string(za.shape()) + " and " + to_string(zb.shape()));
    }
    const double n = static_cast<double>(za.shape()[0]);
    auto prepare = [&](const Var& z, const char* name) {
        Var x = z;
        if (standardize) {
            x = ag::sub(x, ag::scale(ag::sum(x, 0), 1.0 / n));
            Var sd = ag::sqrt(ag::scale(ag::sum(ag::pow2(x), 0), 1.0 / n));
            const Tensor& sv = sd.value();
            for (std::size_t k = 0; k < sv.size(); ++k) {
                if (sv[k] == 0.0) {
                    throw DomainError(std::string("cross_correlation: constant column ") +
                                      std::to_string(k) + " in " + name);
                }
            }
            x = ag::div(x, sd);
        }
        Var norms = ag::sqrt(ag::sum(ag::pow2(x), 0));
        const Tensor& nv = norms.value();
        for (std::size_t k = 0; k < nv.size(); ++k) {
            if (nv[k] == 0.0) {
                throw DomainError(std::string("cross_correlation: zero column ") + std::to_string(k) +
                                  " in " + name);
            }
        }
        return ag::div(x, norms);
    };
    Var a = prepare(za, "first input");
    Var b = prepare(zb, "second input");
    return ag::matmul(ag::transpose(a), b);
}

Var drr_from_correlation(const Var& c, double lambda)
{
    const Shape& s = c.shape();
    if (s.size() != 2 || s[0] != s[1]) {
        throw ShapeError("correlation matrix must be square, got " + to_string(s));
    }
    const std::size_t d = s[0];
    ag::Graph& g = *c.graph();
    Tensor weights(Shape{d, d}, lambda);
    for (std::size_t k = 0; k < d; ++k) weights(k, k) = 1.0;
    Var off_identity = ag::sub(c, g.constant(Tensor::identity(d)));
    return ag::sum(ag::mul(ag::pow2(off_identity), g.constant(std::move(weights))));
}

Var drr_loss(std::span<const Var> views, const DrrConfig& cfg)
{
    cfg.validate();
    check_views(views, "drr_loss");
    Var loss;
    for (std::size_t j = 0; j + 1 < views.size(); ++j) {
        for (std::size_t jp = j + 1; jp < views.size(); ++jp) {
            Var term = drr_from_correlation(cross_correlation(views[j], views[jp], cfg.standardize), cfg.lambda);
            loss = loss.valid() ? ag::add(loss, term) : term;
        }
    }
    return loss;
}

Var regular_loss(std::span<const Var> z_drr, std::span<const Var> z_cl, double alpha,
                 const ContrastiveConfig& cl, const DrrConfig& drr)
{
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    return ag::add(drr_loss(z_drr, drr), ag::scale(contrastive_loss(z_cl, cl), alpha));
}

}  // namespace metamask::losses
