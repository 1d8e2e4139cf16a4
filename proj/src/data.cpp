#include "metamask/data.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "metamask/errors.hpp"
#include "metamask/random.hpp"
#include "metamask/tensor_io.hpp"

namespace metamask::data {

void SyntheticSpec::validate() const
{
    if (d_signal < 1) throw ConfigError("d_signal must be at least 1");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
    if (n_samples < n_classes) throw ConfigError("n_samples must be at least n_classes");
    if (n_views < 2) throw ConfigError("n_views must be at least 2");
    if (!(class_sep > 0.0)) throw ConfigError("class_sep must be positive");
    if (!(view_noise_sigma >= 0.0)) throw ConfigError("view_noise_sigma must be nonnegative");
}

void Dataset::validate() const
{
    if (views.size() < 2) throw ShapeError("dataset needs at least two views");
    const Shape& s = views.front().shape();
    if (s.size() != 2) throw ShapeError("dataset views must be matrices, got " + to_string(s));
    for (std::size_t j = 1; j < views.size(); ++j) {
        if (views[j].shape() != s) {
            throw ShapeError("view 0 has shape " + to_string(s) + " but view " + std::to_string(j) +
                             " has " + to_string(views[j].shape()));
        }
    }
    if (labels.size() != s[0]) {
        throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(s[0]) +
                         " samples");
    }
    for (auto y : labels) {
        if (y >= n_classes) {
            throw ParseError("label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
        }
    }
}

std::vector<double> class_center(const SyntheticSpec& spec, std::size_t c)
{
    // +-axis points at radius sep/sqrt(2): any two distinct ones are at
    // least sep apart. Beyond 2 * d_signal classes further shells are used.
    std::vector<double> center(spec.d_signal, 0.0);
    const std::size_t axis = c % spec.d_signal;
    const std::size_t shell = c / (2 * spec.d_signal);
    const double sign = (c / spec.d_signal) % 2 == 0 ? 1.0 : -1.0;
    center[axis] = sign * spec.class_sep / std::sqrt(2.0) * static_cast<double>(shell + 1);
    return center;
}

Dataset make_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t n = spec.n_samples, d = spec.d_in();
    const std::size_t c0 = spec.d_signal, n0 = spec.d_signal + spec.d_confounder;

    Dataset ds;
    ds.n_classes = spec.n_classes;
    ds.layout = CoordinateLayout{0, c0, c0, n0, n0, d};
    ds.views.assign(spec.n_views, Tensor(Shape{n, d}));
    ds.labels.resize(n);

    std::vector<std::vector<double>> centers;
    for (std::size_t c = 0; c < spec.n_classes; ++c) centers.push_back(class_center(spec, c));

    std::vector<double> base(spec.d_signal), confounder(spec.d_confounder);
    for (std::size_t i = 0; i < n; ++i) {
        // Balanced classes, order randomized by the minibatch stream.
        const std::size_t y = i % spec.n_classes;
        ds.labels[i] = y;
        for (std::size_t k = 0; k < spec.d_signal; ++k) base[k] = centers[y][k] + rng.normal();
        for (auto& v : confounder) v = rng.normal();
        for (std::size_t j = 0; j < spec.n_views; ++j) {
            Tensor& view = ds.views[j];
            for (std::size_t k = 0; k < spec.d_signal; ++k) {
                view(i, k) = base[k] + (spec.view_noise_sigma > 0.0 ? spec.view_noise_sigma * rng.normal() : 0.0);
            }
            for (std::size_t k = 0; k < spec.d_confounder; ++k) view(i, c0 + k) = confounder[k];
            for (std::size_t k = n0; k < d; ++k) view(i, k) = rng.normal();
        }
    }
    return ds;
}

MultiViewBatch gather(const Dataset& ds, const std::vector<std::size_t>& indices)
{
    MultiViewBatch b;
    b.indices = indices;
    const std::size_t d = ds.d_in();
    for (const auto& v : ds.views) {
        Tensor t(Shape{indices.size(), d});
        for (std::size_t r = 0; r < indices.size(); ++r) {
            for (std::size_t k = 0; k < d; ++k) t(r, k) = v(indices[r], k);
        }
        b.views.push_back(std::move(t));
    }
    for (auto i : indices) b.labels.push_back(ds.labels[i]);
    return b;
}

MinibatchStream::MinibatchStream(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), seed_(seed)
{
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (batch_size > ds.n_samples()) {
        throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                          std::to_string(ds.n_samples()));
    }
    reshuffle();
}

std::size_t MinibatchStream::batches_per_epoch() const
{
    return (ds_->n_samples() + batch_size_ - 1) / batch_size_;
}

void MinibatchStream::reshuffle()
{
    Rng rng(mix_seed(seed_, epoch_));
    order_ = rng.permutation(ds_->n_samples());
    cursor_ = 0;
}

MultiViewBatch MinibatchStream::next()
{
    if (cursor_ >= order_.size()) {
        ++epoch_;
        reshuffle();
    }
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return gather(*ds_, idx);
}

Dataset load_dataset(const std::filesystem::path& manifest_path)
{
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open dataset manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    const auto base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base / path;
    };

    Dataset ds;
    std::vector<std::filesystem::path> view_paths;
    std::filesystem::path label_path;
    try {
        label_path = resolve(j.at("labels").get<std::string>());
        for (const auto& v : j.at("views")) view_paths.push_back(resolve(v.get<std::string>()));
        ds.n_classes = j.at("n_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    if (view_paths.size() < 2) throw ParseError(manifest_path.string() + ": need at least two views");
    for (const auto& p : view_paths) {
        Tensor t = io::read_mmt1(p);
        if (t.rank() != 2) throw ShapeError(p.string() + ": view must be a matrix, got " + to_string(t.shape()));
        if (!ds.views.empty() && t.shape() != ds.views.front().shape()) {
            throw ShapeError("view shape mismatch: " + view_paths.front().string() + " is " +
                             to_string(ds.views.front().shape()) + " but " + p.string() + " is " +
                             to_string(t.shape()));
        }
        ds.views.push_back(std::move(t));
    }

    Tensor labels = io::read_mmt1(label_path);
    if (labels.rank() != 1 || labels.size() != ds.n_samples()) {
        throw ShapeError(label_path.string() + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(ds.n_samples()) + " samples in " + view_paths.front().string());
    }
    for (double v : labels.data()) {
        if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(ds.n_classes)) {
            throw ParseError(label_path.string() + ": label " + std::to_string(v) + " outside [0, " +
                             std::to_string(ds.n_classes) + ")");
        }
        ds.labels.push_back(static_cast<std::size_t>(v));
    }
    return ds;
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& ds)
{
    ds.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json j;
    j["views"] = nlohmann::json::array();
    for (std::size_t v = 0; v < ds.views.size(); ++v) {
        const std::string name = "view_" + std::to_string(v) + ".mmt";
        io::write_mmt1(dir / name, ds.views[v]);
        j["views"].push_back(name);
    }
    std::vector<double> labels(ds.labels.begin(), ds.labels.end());
    io::write_mmt1(dir / "labels.mmt", Tensor::vector(std::move(labels)));
    j["labels"] = "labels.mmt";
    j["n_classes"] = ds.n_classes;
    const auto path = dir / "manifest.json";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
    return path;
}

}  // namespace metamask::data
