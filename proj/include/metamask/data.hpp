#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "metamask/tensor.hpp"

namespace metamask::data {

/// Generator for multi-view data with known signal, confounder and noise
/// coordinates, laid out in that order.
struct SyntheticSpec {
    std::size_t n_samples = 2000;
    std::size_t n_classes = 4;
    std::size_t d_signal = 4;
    std::size_t d_confounder = 8;
    std::size_t d_noise = 4;
    double class_sep = 6.0;
    double view_noise_sigma = 0.5;
    std::size_t n_views = 2;
    std::uint64_t seed = 0;

    std::size_t d_in() const { return d_signal + d_confounder + d_noise; }
    void validate() const;
};

/// Column ranges of each coordinate family, [begin, end).
struct CoordinateLayout {
    std::size_t signal_begin = 0, signal_end = 0;
    std::size_t confounder_begin = 0, confounder_end = 0;
    std::size_t noise_begin = 0, noise_end = 0;
};

/// M views of the same N samples plus labels. Labels are for evaluation
/// only; training code receives views.
struct Dataset {
    std::vector<Tensor> views;  // M x [N x d_in]
    std::vector<std::size_t> labels;
    std::size_t n_classes = 0;
    std::optional<CoordinateLayout> layout;  // set by the synthetic generator

    std::size_t n_samples() const { return views.empty() ? 0 : views.front().rows(); }
    std::size_t n_views() const { return views.size(); }
    std::size_t d_in() const { return views.empty() ? 0 : views.front().cols(); }
    void validate() const;
};

struct MultiViewBatch {
    std::vector<Tensor> views;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  // rows of the source dataset
};

/// Class c is centred at a point class_sep away from every other centre
/// (valid up to 2 * d_signal classes). Each sample draws a base signal
/// point around its centre, a confounder vector shared by all of its views,
/// and fresh noise coordinates per view; each view adds
/// N(0, view_noise_sigma) to the signal coordinates.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Centre of class `c` in signal coordinates.
std::vector<double> class_center(const SyntheticSpec& spec, std::size_t c);

/// Rows of every view selected by `indices`.
MultiViewBatch gather(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Shuffled minibatches without replacement, reshuffled every epoch. The
/// last batch of an epoch holds the remainder when N does not divide the
/// dataset size.
class MinibatchStream {
public:
    MinibatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed);

    MultiViewBatch next();
    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const;

private:
    void reshuffle();

    const Dataset* ds_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

/// Manifest JSON: {"views": [paths...], "labels": path, "n_classes": C}.
/// Relative paths resolve against the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes view_<j>.mmt, labels.mmt and manifest.json into `dir`.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& ds);

}  // namespace metamask::data
