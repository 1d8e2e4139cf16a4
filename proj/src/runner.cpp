#include "metamask/runner.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>

#include "metamask/errors.hpp"
#include "metamask/random.hpp"
#include "metamask/tensor_io.hpp"

namespace metamask::runner {

using config::ExperimentConfig;
using config::Mode;
using nlohmann::json;
namespace fs = std::filesystem;

int threads_from_env()
{
    const char* v = std::getenv("METAMASK_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) {
        throw ConfigError(std::string("METAMASK_THREADS='") + v + "' is not a positive integer");
    }
    return static_cast<int>(n);
}

namespace {

/// Exclusive ownership of an output directory.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".lock")
    {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) {
            throw IoError(fs::exists(path_) ? "output directory " + dir.string() + " is locked by another run (" +
                                                  path_.string() + ")"
                                            : "cannot create lockfile " + path_.string());
        }
        std::fclose(f);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;
    ~OutputLock()
    {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
};

/// Shortest round-trip text of a double, as JSON writes it.
std::string num(double v) { return json(v).dump(); }

json record_json(const meta::StepRecord& r)
{
    json j;
    j["step"] = r.step;
    j["l_drr"] = r.l_drr;
    j["l_contrast"] = r.l_contrast;
    j["l_meta"] = r.l_meta ? json(*r.l_meta) : json(nullptr);
    j["mask_mean"] = r.mask_mean;
    j["mask_min"] = r.mask_min;
    j["mask_max"] = r.mask_max;
    j["lr_main"] = r.lr_main;
    j["lr_mask"] = r.lr_mask;
    return j;
}

class Report {
public:
    explicit Report(const fs::path& path) : os_(path), path_(path)
    {
        if (!os_) throw IoError("cannot write " + path.string());
    }

    void write(json line)
    {
        os_ << line.dump() << '\n';
        if (!os_) throw IoError("write failed on " + path_.string());
    }

    meta::StepCallback callback(json context = nullptr)
    {
        return [this, context](const meta::StepRecord& r) {
            json line = record_json(r);
            if (!context.is_null()) line["run"] = context;
            write(std::move(line));
        };
    }

private:
    std::ofstream os_;
    fs::path path_;
};

class StudyCsv {
public:
    explicit StudyCsv(const fs::path& path) : os_(path), path_(path)
    {
        if (!os_) throw IoError("cannot write " + path.string());
        os_ << "study,rate_or_width,trial,accuracy,baseline\n";
    }

    void row(const std::string& study, const std::string& x, std::size_t trial, double acc,
             std::optional<double> baseline)
    {
        os_ << study << ',' << x << ',' << trial << ',' << num(acc) << ',' << (baseline ? num(*baseline) : "")
            << '\n';
        if (!os_) throw IoError("write failed on " + path_.string());
    }

private:
    std::ofstream os_;
    fs::path path_;
};

void write_json(const fs::path& path, const json& j)
{
    std::ofstream os(path);
    os << j.dump(2) << '\n';
    if (!os) throw IoError("cannot write " + path.string());
}

struct Data {
    data::Dataset train;
    data::Dataset test;
};

Data load_data(const ExperimentConfig& cfg)
{
    Data d;
    if (cfg.data.manifest) {
        d.train = data::load_dataset(*cfg.data.manifest);
        d.test = cfg.data.test_manifest ? data::load_dataset(*cfg.data.test_manifest) : d.train;
    } else {
        d.train = data::make_synthetic(cfg.data.synthetic);
        auto spec = cfg.data.synthetic;
        spec.seed = cfg.data.test_seed;
        d.test = data::make_synthetic(spec);
    }
    if (d.test.d_in() != d.train.d_in()) {
        throw ShapeError("test data width " + std::to_string(d.test.d_in()) + " differs from training width " +
                         std::to_string(d.train.d_in()));
    }
    return d;
}

json mask_stats(const Tensor& mask)
{
    double lo = mask.size() ? mask[0] : 0.0, hi = lo, sum = 0.0;
    for (double v : mask.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    return {{"mask_mean", mask.size() ? sum / static_cast<double>(mask.size()) : 0.0},
            {"mask_min", lo},
            {"mask_max", hi}};
}

/// Trains (logging to `report`) unless a snapshot is configured; saves the
/// resulting parameters either way.
nn::ModelParams obtain_params(const ExperimentConfig& cfg, const Data& d, Report& report, json& metrics)
{
    nn::ModelParams params;
    if (cfg.params) {
        params = nn::load_params(*cfg.params);
        if (params.encoder.spec.in() != d.train.d_in()) {
            throw ShapeError("snapshot encoder input " + std::to_string(params.encoder.spec.in()) +
                             " differs from the data width " + std::to_string(d.train.d_in()));
        }
    } else {
        auto result = meta::train(cfg.train, config::model_spec(cfg, d.train.d_in()), d.train, cfg.seed,
                                  report.callback());
        const auto& last = result.records.back();
        metrics["steps"] = result.records.size();
        metrics["final_l_drr"] = last.l_drr;
        metrics["final_l_contrast"] = last.l_contrast;
        metrics["final_l_meta"] = last.l_meta ? json(*last.l_meta) : json(nullptr);
        params = std::move(result.params);
    }
    nn::save_params(cfg.output_dir / "params", params);
    metrics.update(mask_stats(params.mask));
    return params;
}

struct Reps {
    eval::RepresentationSet train;
    eval::RepresentationSet test;
};

Reps representations(const ExperimentConfig& cfg, const nn::ModelParams& params, const Data& d)
{
    Reps r{eval::represent(params, d.train, cfg.eval.eval_on_masked),
           eval::represent(params, d.test, cfg.eval.eval_on_masked)};
    io::write_mmt1(cfg.output_dir / "reps_train.mmt", r.train.reps);
    io::write_mmt1(cfg.output_dir / "reps_test.mmt", r.test.reps);
    io::write_mmt1(cfg.output_dir / "mask.mmt", params.mask);
    return r;
}

void evaluate(const ExperimentConfig& cfg, const Reps& reps, json& metrics)
{
    metrics["knn_accuracy"] = eval::knn_eval(reps.train, reps.test, cfg.eval.knn_k);
    if (cfg.eval.linear_probe) {
        metrics["linear_probe_accuracy"] = eval::linear_probe(reps.train, reps.test, cfg.eval.probe);
    }
}

json theorem2(const nn::ModelParams& params, const data::Dataset& ds)
{
    json out;
    for (auto delta : {eval::Discrepancy::sq_dist, eval::Discrepancy::neg_log_cos}) {
        json entry;
        try {
            const auto r = eval::theorem2_check(params, ds, delta);
            entry = {{"phi_masked", r.phi_masked},
                     {"phi_unmasked", r.phi_unmasked},
                     {"per_dim_gap", r.per_dim_gap.values()}};
        } catch (const DomainError& e) {
            entry = {{"error", e.what()}};
        }
        out[eval::to_string(delta)] = entry;
    }
    return out;
}

json study_metrics(const std::vector<eval::MaskStudyResult>& results, StudyCsv& csv, const std::string& study)
{
    json rates = json::array();
    for (const auto& r : results) {
        double sum = 0.0, best = 0.0;
        for (std::size_t t = 0; t < r.accuracies.size(); ++t) {
            csv.row(study, num(r.mask_rate), t, r.accuracies[t], r.baseline);
            sum += r.accuracies[t];
            best = std::max(best, r.accuracies[t]);
        }
        rates.push_back({{"mask_rate", r.mask_rate},
                         {"mean_accuracy", sum / static_cast<double>(r.accuracies.size())},
                         {"max_accuracy", best}});
    }
    return {{"baseline", results.empty() ? 0.0 : results.front().baseline}, {"rates", rates}};
}

}  // namespace

json run(const ExperimentConfig& cfg, int threads)
{
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.output_dir.string() + ": " + ec.message());
    OutputLock lock(cfg.output_dir);

    const Data d = load_data(cfg);
    Report report(cfg.output_dir / "report.jsonl");
    json metrics = json::object();
    const std::uint64_t study_seed = mix_seed(cfg.seed, 0x57d7);

    switch (cfg.mode) {
    case Mode::train:
    case Mode::eval: {
        const auto params = obtain_params(cfg, d, report, metrics);
        evaluate(cfg, representations(cfg, params, d), metrics);
        if (cfg.mode == Mode::eval) metrics["theorem2"] = theorem2(params, d.test);
        break;
    }
    case Mode::random_mask_study:
    case Mode::learned_mask_study: {
        const auto params = obtain_params(cfg, d, report, metrics);
        const Reps reps = representations(cfg, params, d);
        StudyCsv csv(cfg.output_dir / "studies.csv");
        if (cfg.mode == Mode::random_mask_study) {
            metrics["study"] = study_metrics(eval::random_mask_study(reps.train, reps.test, cfg.eval.mask_rates,
                                                                     cfg.eval.trials, cfg.eval.knn_k, study_seed,
                                                                     threads),
                                             csv, "random_mask");
        } else {
            const auto rep = eval::learned_mask_study(params.mask, reps.train, reps.test, cfg.eval.mask_rates,
                                                      cfg.eval.trials, cfg.eval.knn_k, study_seed, threads);
            metrics["study"] = study_metrics(rep.results, csv, "learned_mask");
            metrics["below_mean_dims"] = rep.below_mean_dims;
            metrics["degenerate"] = rep.degenerate;
        }
        break;
    }
    case Mode::dim_sweep: {
        eval::SweepSetup setup;
        setup.train = cfg.train;
        setup.encoder_hidden = cfg.model.encoder_hidden;
        setup.rep_dim = cfg.model.rep_dim;
        setup.head_hidden = cfg.model.head_hidden;
        setup.knn_k = cfg.eval.knn_k;
        setup.eval_on_masked = cfg.eval.eval_on_masked;
        auto on_step = [&](std::size_t width, const std::string& variant, const meta::StepRecord& r) {
            json line = record_json(r);
            line["run"] = {{"width", width}, {"variant", variant}};
            report.write(std::move(line));
        };
        const auto rows = eval::dimension_sweep(setup, d.train, d.test, cfg.eval.head_widths, cfg.seed, on_step);
        StudyCsv csv(cfg.output_dir / "studies.csv");
        std::ofstream sweep(cfg.output_dir / "sweep.csv");
        sweep << "width,variant,accuracy,final_l_drr,final_l_contrast\n";
        json table = json::array();
        std::map<std::string, std::pair<double, double>> range;
        for (const auto& r : rows) {
            csv.row("dim_sweep_" + r.variant, std::to_string(r.width), 0, r.accuracy, std::nullopt);
            sweep << r.width << ',' << r.variant << ',' << num(r.accuracy) << ',' << num(r.final_drr) << ','
                  << num(r.final_contrast) << '\n';
            table.push_back({{"width", r.width},
                             {"variant", r.variant},
                             {"accuracy", r.accuracy},
                             {"final_l_drr", r.final_drr},
                             {"final_l_contrast", r.final_contrast}});
            auto [it, fresh] = range.try_emplace(r.variant, r.accuracy, r.accuracy);
            if (!fresh) {
                it->second.first = std::min(it->second.first, r.accuracy);
                it->second.second = std::max(it->second.second, r.accuracy);
            }
        }
        if (!sweep) throw IoError("cannot write " + (cfg.output_dir / "sweep.csv").string());
        metrics["rows"] = table;
        for (const auto& [variant, mm] : range) metrics["spread_" + variant] = mm.second - mm.first;
        break;
    }
    case Mode::alpha_sweep: {
        StudyCsv csv(cfg.output_dir / "studies.csv");
        const auto spec = config::model_spec(cfg, d.train.d_in());
        json table = json::array();
        for (double alpha : cfg.eval.alphas) {
            auto tc = cfg.train;
            tc.optim.alpha = alpha;
            auto result = meta::train(tc, spec, d.train, cfg.seed, report.callback({{"alpha", alpha}}));
            const double acc = eval::knn_eval(eval::represent(result.params, d.train, cfg.eval.eval_on_masked),
                                              eval::represent(result.params, d.test, cfg.eval.eval_on_masked),
                                              cfg.eval.knn_k);
            csv.row("alpha_sweep", num(alpha), 0, acc, std::nullopt);
            table.push_back({{"alpha", alpha}, {"accuracy", acc}});
        }
        metrics["rows"] = table;
        break;
    }
    }

    json summary;
    summary["mode"] = config::to_string(cfg.mode);
    summary["seed"] = cfg.seed;
    summary["config"] = config::to_json(cfg);
    summary["metrics"] = metrics;
    write_json(cfg.output_dir / "summary.json", summary);
    return summary;
}

ErrorReport describe_error(const std::exception& e)
{
    json err;
    err["message"] = e.what();
    int code = 1;
    if (const auto* c = dynamic_cast<const ConfigError*>(&e)) {
        code = 2;
        err["kind"] = "config";
        if (!c->field().empty()) err["path"] = c->field();
    } else if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) {
        code = 3;
        err["kind"] = "divergence";
        err["step"] = d->step();
    } else if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e)) {
        code = 4;
        err["kind"] = "io";
    } else if (dynamic_cast<const ShapeError*>(&e)) {
        err["kind"] = "shape";
    } else if (dynamic_cast<const DomainError*>(&e)) {
        err["kind"] = "domain";
    } else {
        err["kind"] = "internal";
    }
    return {code, {{"error", err}}};
}

}  // namespace metamask::runner
