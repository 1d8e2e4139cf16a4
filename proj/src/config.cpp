#include "metamask/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "metamask/errors.hpp"
#include "metamask/nn.hpp"

namespace metamask::config {

using nlohmann::json;

namespace {

constexpr const char* mode_names[] = {"train",      "eval",      "random_mask_study", "learned_mask_study",
                                      "dim_sweep", "alpha_sweep"};

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Reads one JSON object, recording a diagnostic per problem and leaving the
/// default in place when a field is missing or bad.
class Reader {
public:
    Reader(const json& obj, std::string path, std::vector<Diagnostic>& diags)
        : obj_(obj), path_(std::move(path)), diags_(diags)
    {}

    ~Reader()
    {
        if (!obj_.is_object()) return;
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) diags_.push_back({join(path_, key), "unknown field"});
        }
    }

    bool is_object(const char* what) const
    {
        if (obj_.is_object()) return true;
        diags_.push_back({path_, std::string("expected an object for ") + what});
        return false;
    }

    const json* find(const std::string& key)
    {
        seen_.insert(key);
        if (!obj_.is_object()) return nullptr;
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::string at(const std::string& key) const { return join(path_, key); }

    void fail(const std::string& key, const std::string& message) { diags_.push_back({at(key), message}); }

    /// Signed storage counts too: objects built in code hold small literals as signed.
    static bool nonneg_integer(const json& v)
    {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    void boolean(const std::string& key, bool& out)
    {
        if (const json* v = find(key)) {
            if (v->is_boolean()) out = v->get<bool>();
            else fail(key, "expected a boolean");
        }
    }

    /// `min` is the smallest accepted value.
    void count(const std::string& key, std::size_t& out, std::size_t min = 0)
    {
        if (const json* v = find(key)) {
            if (!nonneg_integer(*v)) return fail(key, "expected a nonnegative integer");
            const auto x = v->get<std::uint64_t>();
            if (x < min) return fail(key, "must be at least " + std::to_string(min));
            out = static_cast<std::size_t>(x);
        }
    }

    void seed(const std::string& key, std::uint64_t& out)
    {
        if (const json* v = find(key)) {
            if (nonneg_integer(*v)) out = v->get<std::uint64_t>();
            else fail(key, "expected a nonnegative integer");
        }
    }

    enum class Range { any, nonneg, positive };

    void real(const std::string& key, double& out, Range range = Range::any)
    {
        if (const json* v = find(key)) {
            if (!v->is_number()) return fail(key, "expected a number");
            check_real(key, v->get<double>(), range, out);
        }
    }

    void optional_real(const std::string& key, std::optional<double>& out, Range range)
    {
        if (const json* v = find(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            if (!v->is_number()) return fail(key, "expected a number or null");
            double x = 0.0;
            if (check_real(key, v->get<double>(), range, x)) out = x;
        }
    }

    void string(const std::string& key, std::string& out)
    {
        if (const json* v = find(key)) {
            if (v->is_string()) out = v->get<std::string>();
            else fail(key, "expected a string");
        }
    }

    void optional_path(const std::string& key, std::optional<std::filesystem::path>& out,
                       const std::filesystem::path& base)
    {
        if (const json* v = find(key)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_string() && !v->get<std::string>().empty()) {
                out = resolve(v->get<std::string>(), base);
            } else {
                fail(key, "expected a path string or null");
            }
        }
    }

    void counts(const std::string& key, std::vector<std::size_t>& out, std::size_t min, bool allow_empty)
    {
        if (const json* v = find(key)) {
            if (!v->is_array()) return fail(key, "expected an array of integers");
            std::vector<std::size_t> tmp;
            for (std::size_t i = 0; i < v->size(); ++i) {
                const json& e = (*v)[i];
                if (!nonneg_integer(e) || e.get<std::uint64_t>() < min) {
                    return fail(key + "[" + std::to_string(i) + "]",
                                "expected an integer of at least " + std::to_string(min));
                }
                tmp.push_back(static_cast<std::size_t>(e.get<std::uint64_t>()));
            }
            if (tmp.empty() && !allow_empty) return fail(key, "must not be empty");
            out = std::move(tmp);
        }
    }

    void reals(const std::string& key, std::vector<double>& out, double lo, double hi)
    {
        if (const json* v = find(key)) {
            if (!v->is_array()) return fail(key, "expected an array of numbers");
            std::vector<double> tmp;
            for (std::size_t i = 0; i < v->size(); ++i) {
                const json& e = (*v)[i];
                if (!e.is_number() || !(e.get<double>() >= lo && e.get<double>() <= hi)) {
                    std::ostringstream os;
                    os << "expected a number in [" << lo << ", " << hi << "]";
                    return fail(key + "[" + std::to_string(i) + "]", os.str());
                }
                tmp.push_back(e.get<double>());
            }
            if (tmp.empty()) return fail(key, "must not be empty");
            out = std::move(tmp);
        }
    }

    static std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base)
    {
        std::filesystem::path path(p);
        return path.is_absolute() || base.empty() ? path : base / path;
    }

private:
    bool check_real(const std::string& key, double x, Range range, double& out)
    {
        if (!std::isfinite(x)) {
            fail(key, "must be finite");
            return false;
        }
        if (range == Range::nonneg && x < 0.0) {
            fail(key, "must be nonnegative");
            return false;
        }
        if (range == Range::positive && !(x > 0.0)) {
            fail(key, "must be positive");
            return false;
        }
        out = x;
        return true;
    }

    const json& obj_;
    std::string path_;
    std::vector<Diagnostic>& diags_;
    std::set<std::string> seen_;
};

const json& sub(Reader& r, const char* key)
{
    static const json empty = json::object();
    const json* v = r.find(key);
    return v ? *v : empty;
}

json optional_to_json(const std::optional<std::filesystem::path>& p)
{
    return p ? json(p->generic_string()) : json(nullptr);
}

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string to_string(Mode m) { return mode_names[static_cast<int>(m)]; }

Mode parse_mode(const std::string& s)
{
    for (int i = 0; i < 6; ++i) {
        if (s == mode_names[i]) return static_cast<Mode>(i);
    }
    throw ConfigError("unknown mode '" + s + "'", "mode");
}

json to_json(const ExperimentConfig& c)
{
    const auto& syn = c.data.synthetic;
    const auto& o = c.train.optim;
    const auto& ab = c.train.ablation;
    json j;
    j["mode"] = to_string(c.mode);
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir.generic_string();
    j["params"] = optional_to_json(c.params);
    j["data"] = {
        {"manifest", optional_to_json(c.data.manifest)},
        {"test_manifest", optional_to_json(c.data.test_manifest)},
        {"test_seed", c.data.test_seed},
        {"synthetic",
         {{"n_samples", syn.n_samples},
          {"n_classes", syn.n_classes},
          {"d_signal", syn.d_signal},
          {"d_confounder", syn.d_confounder},
          {"d_noise", syn.d_noise},
          {"class_sep", syn.class_sep},
          {"view_noise_sigma", syn.view_noise_sigma},
          {"n_views", syn.n_views},
          {"seed", syn.seed}}},
    };
    j["model"] = {{"encoder_hidden", c.model.encoder_hidden},
                  {"rep_dim", c.model.rep_dim},
                  {"head_hidden", c.model.head_hidden},
                  {"head_out", c.model.head_out}};
    j["optim"] = {{"lr_main", o.lr_main},
                  {"lr_trial_theta", optional_to_json(o.lr_trial_theta)},
                  {"lr_trial_vartheta", optional_to_json(o.lr_trial_vartheta)},
                  {"lr_mask", o.lr_mask},
                  {"momentum", o.momentum},
                  {"schedule", meta::to_string(o.schedule)},
                  {"total_steps", o.total_steps},
                  {"alpha", o.alpha}};
    j["loss"] = {{"temperature", c.train.contrastive.temperature},
                 {"include_positive_in_denominator", c.train.contrastive.include_positive_in_denominator},
                 {"lambda", c.train.drr.lambda},
                 {"standardize", c.train.drr.standardize}};
    j["ablation"] = {{"no_meta", ab.no_meta},
                     {"no_drr", ab.no_drr},
                     {"contrastive_only", ab.contrastive_only},
                     {"drr_only", ab.drr_only}};
    j["batch_size"] = c.train.batch_size;
    j["eval"] = {{"knn_k", c.eval.knn_k},
                 {"eval_on_masked", c.eval.eval_on_masked},
                 {"linear_probe", c.eval.linear_probe},
                 {"probe",
                  {{"epochs", c.eval.probe.epochs},
                   {"lr", c.eval.probe.lr},
                   {"standardize", c.eval.probe.standardize}}},
                 {"mask_rates", c.eval.mask_rates},
                 {"trials", c.eval.trials},
                 {"head_widths", c.eval.head_widths},
                 {"alphas", c.eval.alphas}};
    return j;
}

Parsed from_json(const json& j, const std::filesystem::path& base)
{
    using Range = Reader::Range;
    Parsed out;
    auto& c = out.config;
    auto& d = out.diagnostics;

    Reader root(j, "", d);
    if (!root.is_object("the config")) return out;

    if (const json* m = root.find("mode")) {
        if (!m->is_string()) {
            root.fail("mode", "expected a string");
        } else {
            try {
                c.mode = parse_mode(m->get<std::string>());
            } catch (const ConfigError& e) {
                root.fail("mode", "unknown mode '" + m->get<std::string>() + "'");
            }
        }
    } else {
        root.fail("mode", "missing required field");
    }
    root.seed("seed", c.seed);
    if (const json* v = root.find("output_dir")) {
        if (v->is_string() && !v->get<std::string>().empty()) {
            c.output_dir = Reader::resolve(v->get<std::string>(), base);
        } else {
            root.fail("output_dir", "expected a nonempty path string");
        }
    } else {
        c.output_dir = Reader::resolve(c.output_dir.string(), base);
    }
    root.optional_path("params", c.params, base);
    root.count("batch_size", c.train.batch_size, 1);

    {
        Reader r(sub(root, "data"), "data", d);
        if (r.is_object("data")) {
            r.optional_path("manifest", c.data.manifest, base);
            r.optional_path("test_manifest", c.data.test_manifest, base);
            r.seed("test_seed", c.data.test_seed);
            Reader s(sub(r, "synthetic"), "data.synthetic", d);
            if (s.is_object("data.synthetic")) {
                auto& syn = c.data.synthetic;
                s.count("n_samples", syn.n_samples, 1);
                s.count("n_classes", syn.n_classes, 2);
                s.count("d_signal", syn.d_signal, 1);
                s.count("d_confounder", syn.d_confounder);
                s.count("d_noise", syn.d_noise);
                s.real("class_sep", syn.class_sep, Range::positive);
                s.real("view_noise_sigma", syn.view_noise_sigma, Range::nonneg);
                s.count("n_views", syn.n_views, 2);
                s.seed("seed", syn.seed);
                if (syn.n_samples < syn.n_classes) {
                    d.push_back({"data.synthetic.n_samples", "must be at least data.synthetic.n_classes (" +
                                                                 std::to_string(syn.n_classes) + ")"});
                }
            }
        }
    }
    {
        Reader r(sub(root, "model"), "model", d);
        if (r.is_object("model")) {
            r.counts("encoder_hidden", c.model.encoder_hidden, 1, true);
            r.count("rep_dim", c.model.rep_dim, 1);
            r.counts("head_hidden", c.model.head_hidden, 1, true);
            r.count("head_out", c.model.head_out, 1);
        }
    }
    {
        Reader r(sub(root, "optim"), "optim", d);
        if (r.is_object("optim")) {
            auto& o = c.train.optim;
            r.real("lr_main", o.lr_main, Range::nonneg);
            r.optional_real("lr_trial_theta", o.lr_trial_theta, Range::nonneg);
            r.optional_real("lr_trial_vartheta", o.lr_trial_vartheta, Range::nonneg);
            r.real("lr_mask", o.lr_mask, Range::nonneg);
            r.real("momentum", o.momentum, Range::nonneg);
            if (!(o.momentum < 1.0)) r.fail("momentum", "must be below 1");
            std::string schedule = meta::to_string(o.schedule);
            r.string("schedule", schedule);
            try {
                o.schedule = meta::parse_schedule(schedule);
            } catch (const ConfigError& e) {
                r.fail("schedule", e.what());
            }
            r.count("total_steps", o.total_steps, 1);
            r.real("alpha", o.alpha, Range::nonneg);
        }
    }
    {
        Reader r(sub(root, "loss"), "loss", d);
        if (r.is_object("loss")) {
            r.real("temperature", c.train.contrastive.temperature, Range::positive);
            r.boolean("include_positive_in_denominator", c.train.contrastive.include_positive_in_denominator);
            r.real("lambda", c.train.drr.lambda, Range::positive);
            r.boolean("standardize", c.train.drr.standardize);
        }
    }
    {
        Reader r(sub(root, "ablation"), "ablation", d);
        if (r.is_object("ablation")) {
            auto& ab = c.train.ablation;
            r.boolean("no_meta", ab.no_meta);
            r.boolean("no_drr", ab.no_drr);
            r.boolean("contrastive_only", ab.contrastive_only);
            r.boolean("drr_only", ab.drr_only);
            if (ab.contrastive_only && ab.drr_only) {
                r.fail("drr_only", "cannot be combined with ablation.contrastive_only");
            }
            if (ab.drr_only && ab.no_drr) r.fail("drr_only", "cannot be combined with ablation.no_drr");
        }
    }
    {
        Reader r(sub(root, "eval"), "eval", d);
        if (r.is_object("eval")) {
            auto& e = c.eval;
            r.count("knn_k", e.knn_k, 1);
            r.boolean("eval_on_masked", e.eval_on_masked);
            r.boolean("linear_probe", e.linear_probe);
            Reader p(sub(r, "probe"), "eval.probe", d);
            if (p.is_object("eval.probe")) {
                p.count("epochs", e.probe.epochs, 1);
                p.real("lr", e.probe.lr, Range::positive);
                p.boolean("standardize", e.probe.standardize);
            }
            r.reals("mask_rates", e.mask_rates, 0.0, 1.0);
            r.count("trials", e.trials, 1);
            r.counts("head_widths", e.head_widths, 1, false);
            r.reals("alphas", e.alphas, 0.0, std::numeric_limits<double>::max());
        }
    }
    return out;
}

std::vector<Diagnostic> cross_check(const ExperimentConfig& c)
{
    std::vector<Diagnostic> d;
    auto exists = [&](const std::optional<std::filesystem::path>& p, const char* field) {
        if (p && !std::filesystem::exists(*p)) {
            d.push_back({field, "path " + p->string() + " does not exist"});
            return false;
        }
        return p.has_value();
    };

    if (c.mode == Mode::eval && !c.params) d.push_back({"params", "mode eval needs a parameter snapshot"});
    if (c.data.test_manifest && !c.data.manifest) {
        d.push_back({"data.test_manifest", "set without data.manifest"});
    }

    std::optional<std::size_t> n_samples, d_in;
    std::string n_field = "data.synthetic.n_samples";
    if (c.data.manifest) {
        n_field = "data.manifest";
        if (exists(c.data.manifest, "data.manifest")) {
            try {
                const auto ds = data::load_dataset(*c.data.manifest);
                n_samples = ds.n_samples();
                d_in = ds.d_in();
            } catch (const Error& e) {
                d.push_back({"data.manifest", e.what()});
            }
        }
        exists(c.data.test_manifest, "data.test_manifest");
    } else {
        n_samples = c.data.synthetic.n_samples;
        d_in = c.data.synthetic.d_in();
    }
    if (n_samples && c.train.batch_size > *n_samples) {
        d.push_back({"batch_size", "batch_size (" + std::to_string(c.train.batch_size) + ") exceeds " + n_field +
                                       " sample count (" + std::to_string(*n_samples) + ")"});
    }
    if (n_samples && c.eval.knn_k > *n_samples) {
        d.push_back({"eval.knn_k", "eval.knn_k (" + std::to_string(c.eval.knn_k) + ") exceeds " + n_field +
                                       " sample count (" + std::to_string(*n_samples) + ")"});
    }

    if (exists(c.params, "params")) {
        try {
            const auto p = nn::load_params(*c.params);
            if (p.mask.size() != p.encoder.spec.out()) {
                d.push_back({"params", "snapshot mask length " + std::to_string(p.mask.size()) +
                                           " differs from its encoder width " +
                                           std::to_string(p.encoder.spec.out())});
            }
            if (p.mask.size() != c.model.rep_dim) {
                d.push_back({"model.rep_dim", "model.rep_dim (" + std::to_string(c.model.rep_dim) +
                                                  ") differs from the params mask length (" +
                                                  std::to_string(p.mask.size()) + ")"});
            }
            if (d_in && p.encoder.spec.in() != *d_in) {
                d.push_back({"params", "snapshot encoder input " + std::to_string(p.encoder.spec.in()) +
                                           " differs from the data width " + std::to_string(*d_in)});
            }
        } catch (const Error& e) {
            d.push_back({"params", e.what()});
        }
    }
    return d;
}

json parse_text(const std::string& text, const std::string& origin)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
}

json load_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str(), path.string());
}

void apply_override(json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override target is not an object", key.substr(0, start - 1));
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides)
{
    json j = load_file(path);
    for (const auto& o : overrides) apply_override(j, o);
    auto parsed = from_json(j, path.parent_path());
    for (auto& d : cross_check(parsed.config)) parsed.diagnostics.push_back(std::move(d));
    if (!parsed.diagnostics.empty()) {
        const auto& first = parsed.diagnostics.front();
        throw ConfigError(first.message, first.path);
    }
    return parsed.config;
}

nn::ModelSpec model_spec(const ExperimentConfig& cfg, std::size_t d_in)
{
    return nn::make_model_spec(d_in, cfg.model.encoder_hidden, cfg.model.rep_dim, cfg.model.head_hidden,
                               cfg.model.head_out);
}

}  // namespace metamask::config
