#include "metamask/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "metamask/errors.hpp"
#include "metamask/kernels.hpp"
#include "metamask/random.hpp"

namespace metamask::eval {

using metamask::to_string;

void RepresentationSet::validate() const
{
    if (reps.rank() != 2) throw ShapeError("representations must be a matrix, got " + to_string(reps.shape()));
    if (reps.rows() != labels.size()) {
        throw ShapeError(std::to_string(reps.rows()) + " representations for " + std::to_string(labels.size()) +
                         " labels");
    }
}

RepresentationSet represent(const nn::ModelParams& params, const data::Dataset& ds, bool masked)
{
    Tensor h = nn::mlp_forward(params.encoder, ds.views.front());
    if (masked) h = nn::apply_mask(h, params.mask);
    return {std::move(h), ds.labels};
}

namespace {

std::size_t class_count(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b = {})
{
    std::size_t c = 0;
    for (auto y : a) c = std::max(c, y + 1);
    for (auto y : b) c = std::max(c, y + 1);
    return c;
}

void check_pair(const RepresentationSet& train, const RepresentationSet& test, std::size_t k)
{
    train.validate();
    test.validate();
    if (train.reps.cols() != test.reps.cols()) {
        throw ShapeError("train representations have width " + std::to_string(train.reps.cols()) +
                         ", test " + std::to_string(test.reps.cols()));
    }
    if (k < 1 || k > train.reps.rows()) {
        throw ConfigError("k = " + std::to_string(k) + " outside [1, " + std::to_string(train.reps.rows()) + "]");
    }
}

/// Predicted class of one query from its similarity row.
std::size_t vote(const double* sim_row, std::size_t n_train, const std::vector<std::size_t>& train_labels,
                 std::size_t k, std::size_t n_classes, std::vector<std::size_t>& idx)
{
    idx.resize(n_train);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto closer = [&](std::size_t a, std::size_t b) {
        const double da = 1.0 - sim_row[a], db = 1.0 - sim_row[b];
        return da < db || (da == db && a < b);
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), closer);

    std::vector<std::size_t> votes(n_classes, 0);
    std::vector<double> dist(n_classes, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t y = train_labels[idx[r]];
        ++votes[y];
        dist[y] += 1.0 - sim_row[idx[r]];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
        if (votes[c] > votes[best] || (votes[c] == votes[best] && dist[c] < dist[best])) best = c;
    }
    return best;
}

}  // namespace

double knn_eval_serial(const RepresentationSet& train, const RepresentationSet& test, std::size_t k)
{
    check_pair(train, test, k);
    const std::size_t nq = test.reps.rows(), nr = train.reps.rows(), d = train.reps.cols();
    if (nq == 0) return 0.0;
    std::vector<double> sim(nq * nr);
    kernels::serial::cosine_similarity(test.reps.data(), train.reps.data(), sim, nq, nr, d);
    const std::size_t n_classes = class_count(train.labels, test.labels);
    std::vector<std::size_t> idx;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < nq; ++i) {
        if (vote(sim.data() + i * nr, nr, train.labels, k, n_classes, idx) == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(nq);
}

double knn_eval(const RepresentationSet& train, const RepresentationSet& test, std::size_t k)
{
    check_pair(train, test, k);
    const std::size_t nq = test.reps.rows(), nr = train.reps.rows(), d = train.reps.cols();
    if (nq == 0) return 0.0;
    std::vector<double> sim(nq * nr);
    kernels::parallel::cosine_similarity(test.reps.data(), train.reps.data(), sim, nq, nr, d);
    const std::size_t n_classes = class_count(train.labels, test.labels);
    std::int64_t correct = 0;
    const auto n = static_cast<std::int64_t>(nq);
#pragma omp parallel num_threads(kernels::max_threads()) reduction(+ : correct)
    {
        std::vector<std::size_t> idx;
#pragma omp for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) {
            const auto r = static_cast<std::size_t>(i);
            if (vote(sim.data() + r * nr, nr, train.labels, k, n_classes, idx) == test.labels[r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(nq);
}

double linear_probe(const RepresentationSet& train, const RepresentationSet& test, const ProbeConfig& cfg)
{
    check_pair(train, test, 1);
    const std::size_t n = train.reps.rows(), d = train.reps.cols();
    const std::size_t c = class_count(train.labels, test.labels);

    std::vector<double> mu(d, 0.0), sd(d, 1.0);
    if (cfg.standardize) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) mu[k] += train.reps(i, k);
        }
        for (auto& m : mu) m /= static_cast<double>(n);
        std::vector<double> var(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) var[k] += (train.reps(i, k) - mu[k]) * (train.reps(i, k) - mu[k]);
        }
        for (std::size_t k = 0; k < d; ++k) {
            const double s = std::sqrt(var[k] / static_cast<double>(n));
            sd[k] = s > 1e-12 ? s : 1.0;
        }
    }
    auto features = [&](const Tensor& reps) {
        Tensor x(reps.shape());
        for (std::size_t i = 0; i < reps.rows(); ++i) {
            for (std::size_t k = 0; k < d; ++k) x(i, k) = (reps(i, k) - mu[k]) / sd[k];
        }
        return x;
    };
    const Tensor x = features(train.reps);
    const Tensor xt = ops::transpose(x);

    Tensor w(Shape{d, c});
    Tensor b(Shape{c});
    Tensor probs(Shape{n, c});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tensor logits = ops::elementwise(BinaryOp::add, ops::matmul(x, w), b);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double m = logits(i, 0);
            for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits(i, j));
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                probs(i, j) = std::exp(logits(i, j) - m);
                s += probs(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) probs(i, j) /= s;
            loss -= std::log(std::max(probs(i, train.labels[i]), 1e-300));
            probs(i, train.labels[i]) -= 1.0;
        }
        if (!std::isfinite(loss)) throw DivergenceError(epoch, "non-finite linear probe loss");
        const Tensor gw = ops::scale(ops::matmul(xt, probs), 1.0 / static_cast<double>(n));
        const Tensor gb = ops::reduce(ReduceOp::mean, probs, 0);
        for (std::size_t e = 0; e < w.size(); ++e) w[e] -= cfg.lr * gw[e];
        for (std::size_t e = 0; e < b.size(); ++e) b[e] -= cfg.lr * gb[e];
    }

    const Tensor logits = ops::elementwise(BinaryOp::add, ops::matmul(features(test.reps), w), b);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (logits(i, j) > logits(i, best)) best = j;
        }
        if (best == test.labels[i]) ++correct;
    }
    return logits.rows() ? static_cast<double>(correct) / static_cast<double>(logits.rows()) : 0.0;
}

namespace {

std::size_t masked_count(double rate, std::size_t pool)
{
    // Guard against 0.1 * 40 rounding up past 4.
    const double raw = rate * static_cast<double>(pool) - 1e-9;
    return std::min(pool, static_cast<std::size_t>(std::max(0.0, std::ceil(raw))));
}

Tensor zero_columns(const Tensor& reps, const std::vector<std::size_t>& cols)
{
    Tensor out = reps;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (auto k : cols) out(i, k) = 0.0;
    }
    return out;
}

/// Runs every (rate, trial) pair; masked dims are drawn from `pool`.
std::vector<MaskStudyResult> run_mask_trials(const RepresentationSet& train, const RepresentationSet& test,
                                             const std::vector<std::size_t>& pool,
                                             const std::vector<double>& mask_rates, std::size_t trials,
                                             std::size_t k, std::uint64_t seed, int threads)
{
    for (double r : mask_rates) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask rate " + std::to_string(r) + " outside [0, 1]");
    }
    const double baseline = knn_eval_serial(train, test, k);
    std::vector<MaskStudyResult> results(mask_rates.size());
    for (std::size_t r = 0; r < mask_rates.size(); ++r) {
        results[r].mask_rate = mask_rates[r];
        results[r].baseline = baseline;
        results[r].accuracies.assign(trials, 0.0);
    }
    const auto total = static_cast<std::int64_t>(mask_rates.size() * trials);
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, threads))
    for (std::int64_t job = 0; job < total; ++job) {
        const std::size_t r = static_cast<std::size_t>(job) / trials;
        const std::size_t t = static_cast<std::size_t>(job) % trials;
        const std::size_t count = masked_count(mask_rates[r], pool.size());
        if (count == 0) {
            results[r].accuracies[t] = baseline;
            continue;
        }
        Rng rng(mix_seed(seed, r, t));
        const auto perm = rng.permutation(pool.size());
        std::vector<std::size_t> cols;
        for (std::size_t i = 0; i < count; ++i) cols.push_back(pool[perm[i]]);
        RepresentationSet tr{zero_columns(train.reps, cols), train.labels};
        RepresentationSet te{zero_columns(test.reps, cols), test.labels};
        results[r].accuracies[t] = knn_eval_serial(tr, te, k);
    }
    return results;
}

}  // namespace

std::vector<MaskStudyResult> random_mask_study(const RepresentationSet& train, const RepresentationSet& test,
                                               const std::vector<double>& mask_rates, std::size_t trials,
                                               std::size_t k, std::uint64_t seed, int threads)
{
    check_pair(train, test, k);
    std::vector<std::size_t> pool(train.reps.cols());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    return run_mask_trials(train, test, pool, mask_rates, trials, k, seed, threads);
}

LearnedMaskReport learned_mask_study(const Tensor& mask, const RepresentationSet& train,
                                     const RepresentationSet& test, const std::vector<double>& mask_rates,
                                     std::size_t trials, std::size_t k, std::uint64_t seed, int threads)
{
    check_pair(train, test, k);
    if (mask.rank() != 1 || mask.size() != train.reps.cols()) {
        throw ShapeError("mask of shape " + to_string(mask.shape()) + " for representations of width " +
                         std::to_string(train.reps.cols()));
    }
    const double mean = ops::reduce(ReduceOp::mean, mask).item();
    LearnedMaskReport report;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] < mean) report.below_mean_dims.push_back(i);
    }
    report.degenerate = report.below_mean_dims.empty();
    report.results = run_mask_trials(train, test, report.below_mean_dims, mask_rates, trials, k, seed, threads);
    return report;
}

std::string to_string(Discrepancy d) { return d == Discrepancy::sq_dist ? "sq_dist" : "neg_log_cos"; }

Discrepancy parse_discrepancy(const std::string& s)
{
    if (s == "sq_dist") return Discrepancy::sq_dist;
    if (s == "neg_log_cos") return Discrepancy::neg_log_cos;
    throw ConfigError("unknown discrepancy '" + s + "' (expected sq_dist or neg_log_cos)");
}

Tensor conditional_variance(const Tensor& features, const std::vector<std::size_t>& labels, Discrepancy delta,
                            bool per_dimension)
{
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw ShapeError("conditional_variance: features " + to_string(features.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t n = features.rows(), d = features.cols();
    const std::size_t c = class_count(labels);
    if (n == 0) throw ConfigError("conditional_variance of an empty set");

    std::vector<std::size_t> counts(c, 0);
    Tensor means(Shape{c, d});
    for (std::size_t i = 0; i < n; ++i) {
        ++counts[labels[i]];
        for (std::size_t k = 0; k < d; ++k) means(labels[i], k) += features(i, k);
    }
    for (std::size_t y = 0; y < c; ++y) {
        if (counts[y] == 0) throw ConfigError("class " + std::to_string(y) + " has no samples");
        for (std::size_t k = 0; k < d; ++k) means(y, k) /= static_cast<double>(counts[y]);
    }

    if (per_dimension) {
        Tensor phi(Shape{d});
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t y = labels[i];
            for (std::size_t k = 0; k < d; ++k) {
                const double x = features(i, k), m = means(y, k);
                if (delta == Discrepancy::sq_dist) {
                    phi[k] += (x - m) * (x - m);
                } else if (!(x * m > 0.0)) {
                    // Scalar cosine is the sign of x * m; -log is 0 or undefined.
                    throw DomainError("neg_log_cos undefined for sample " + std::to_string(i) + " dimension " +
                                      std::to_string(k));
                }
            }
        }
        for (auto& v : phi.data()) v /= static_cast<double>(n);
        return phi;
    }

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        if (delta == Discrepancy::sq_dist) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += (features(i, k) - means(y, k)) * (features(i, k) - means(y, k));
            total += s;
        } else {
            double dot = 0.0, nx = 0.0, nm = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                dot += features(i, k) * means(y, k);
                nx += features(i, k) * features(i, k);
                nm += means(y, k) * means(y, k);
            }
            const double denom = std::sqrt(nx) * std::sqrt(nm);
            const double cos = denom > 0.0 ? dot / denom : 0.0;
            if (!(cos > 0.0)) {
                throw DomainError("neg_log_cos undefined: sample " + std::to_string(i) +
                                  " is orthogonal or opposed to its class mean");
            }
            total += -std::log(std::min(cos, 1.0));
        }
    }
    return Tensor::scalar(total / static_cast<double>(n));
}

Theorem2Report theorem2_check(const nn::ModelParams& params, const data::Dataset& ds, Discrepancy delta)
{
    const Tensor h = nn::mlp_forward(params.encoder, ds.views.front());
    const Tensor z_masked = nn::mlp_forward(params.head_cl, nn::apply_mask(h, params.mask));
    const Tensor z_plain = nn::mlp_forward(params.head_cl, h);
    Theorem2Report r;
    r.phi_masked = conditional_variance(z_masked, ds.labels, delta, false).item();
    r.phi_unmasked = conditional_variance(z_plain, ds.labels, delta, false).item();
    r.per_dim_masked = conditional_variance(z_masked, ds.labels, Discrepancy::sq_dist, true);
    r.per_dim_unmasked = conditional_variance(z_plain, ds.labels, Discrepancy::sq_dist, true);
    r.per_dim_gap = ops::elementwise(BinaryOp::sub, r.per_dim_masked, r.per_dim_unmasked);
    return r;
}

namespace {

/// Solves the symmetric positive definite system a x = b in place (Cholesky).
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t n)
{
    for (std::size_t j = 0; j < n; ++j) {
        double s = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) s -= a[j * n + k] * a[j * n + k];
        if (!(s > 0.0)) throw DomainError("readout system is not positive definite");
        const double l = std::sqrt(s);
        a[j * n + j] = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double t = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) t -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = t / l;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double t = b[i];
        for (std::size_t k = 0; k < i; ++k) t -= a[i * n + k] * b[k];
        b[i] = t / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double t = b[i];
        for (std::size_t k = i + 1; k < n; ++k) t -= a[k * n + i] * b[k];
        b[i] = t / a[i * n + i];
    }
    return b;
}

}  // namespace

std::vector<double> readout_r2(const Tensor& reps, const Tensor& inputs, std::size_t begin, std::size_t end)
{
    if (reps.rank() != 2 || inputs.rank() != 2 || reps.rows() != inputs.rows()) {
        throw ShapeError("readout_r2: representations " + to_string(reps.shape()) + " vs inputs " +
                         to_string(inputs.shape()));
    }
    if (begin >= end || end > inputs.cols()) throw ShapeError("readout_r2: bad input column range");
    const std::size_t n = reps.rows(), p = end - begin, d = reps.cols();

    // Centred design matrix.
    Tensor x(Shape{n, p});
    for (std::size_t c = 0; c < p; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += inputs(i, begin + c);
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) x(i, c) = inputs(i, begin + c) - m;
    }
    const Tensor xt = ops::transpose(x);
    Tensor gram = ops::matmul(xt, x);
    for (std::size_t c = 0; c < p; ++c) gram(c, c) += 1e-9 * static_cast<double>(n);

    std::vector<double> r2(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<double> y(n);
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += reps(i, k);
        m /= static_cast<double>(n);
        double sst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = reps(i, k) - m;
            sst += y[i] * y[i];
        }
        if (sst <= 0.0) continue;
        std::vector<double> xty(p, 0.0);
        for (std::size_t c = 0; c < p; ++c) {
            for (std::size_t i = 0; i < n; ++i) xty[c] += xt(c, i) * y[i];
        }
        const auto beta = solve_spd(gram.values(), xty, p);
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double fit = 0.0;
            for (std::size_t c = 0; c < p; ++c) fit += x(i, c) * beta[c];
            sse += (y[i] - fit) * (y[i] - fit);
        }
        r2[k] = 1.0 - sse / sst;
    }
    return r2;
}

std::vector<SweepRow> dimension_sweep(const SweepSetup& setup, const data::Dataset& train_set,
                                      const data::Dataset& test_set, const std::vector<std::size_t>& head_widths,
                                      std::uint64_t seed, const SweepStepCallback& on_step)
{
    std::vector<SweepRow> rows;
    for (auto width : head_widths) {
        if (width == 0) throw ConfigError("head widths must be positive");
        const auto hidden = setup.head_hidden.value_or(std::vector<std::size_t>{width});
        const auto spec = nn::make_model_spec(train_set.d_in(), setup.encoder_hidden, setup.rep_dim, hidden, width);
        for (const bool with_meta : {true, false}) {
            meta::TrainConfig cfg = setup.train;
            cfg.ablation.no_meta = !with_meta;
            const std::string variant = with_meta ? "metamask" : "no_meta";
            meta::StepCallback cb;
            if (on_step) cb = [&](const meta::StepRecord& r) { on_step(width, variant, r); };
            const auto result = meta::train(cfg, spec, train_set, seed, cb);
            SweepRow row;
            row.width = width;
            row.variant = variant;
            row.accuracy = knn_eval(represent(result.params, train_set, setup.eval_on_masked),
                                    represent(result.params, test_set, setup.eval_on_masked), setup.knn_k);
            if (!result.records.empty()) {
                row.final_drr = result.records.back().l_drr;
                row.final_contrast = result.records.back().l_contrast;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace metamask::eval
