#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "metamask/data.hpp"
#include "metamask/eval.hpp"
#include "metamask/meta_opt.hpp"

namespace metamask::config {

enum class Mode { train, eval, random_mask_study, learned_mask_study, dim_sweep, alpha_sweep };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

/// Training and test data. Either a manifest pair or the synthetic
/// generator; with a manifest and no test manifest, evaluation reuses the
/// training set.
struct DataConfig {
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> test_manifest;
    data::SyntheticSpec synthetic;
    /// Generator seed of the synthetic test set.
    std::uint64_t test_seed = 1;
};

struct ModelConfig {
    std::vector<std::size_t> encoder_hidden{256};
    std::size_t rep_dim = 64;
    std::vector<std::size_t> head_hidden{64};
    std::size_t head_out = 64;
};

struct EvalConfig {
    std::size_t knn_k = 5;
    bool eval_on_masked = false;
    bool linear_probe = false;
    eval::ProbeConfig probe;
    std::vector<double> mask_rates{0.0, 0.1, 0.2, 0.3, 0.5, 1.0};
    std::size_t trials = 20;
    std::vector<std::size_t> head_widths{16, 64, 256, 1024};
    std::vector<double> alphas{0.1, 1.0, 10.0, 100.0, 1000.0};
};

struct ExperimentConfig {
    Mode mode = Mode::train;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    /// Parameter snapshot to start from instead of training (eval and the
    /// mask studies); required by eval.
    std::optional<std::filesystem::path> params;
    DataConfig data;
    ModelConfig model;
    meta::TrainConfig train;
    EvalConfig eval;
};

struct Diagnostic {
    std::string path;  // dotted field path, empty for whole-config problems
    std::string message;
};

/// Every field with defaults filled in.
nlohmann::json to_json(const ExperimentConfig& cfg);

struct Parsed {
    ExperimentConfig config;
    std::vector<Diagnostic> diagnostics;
};

/// Schema check: unknown fields, wrong types and out-of-range values. Missing
/// fields take their defaults. Relative paths are resolved against `base`.
Parsed from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

/// Cross-field checks that may read referenced files: paths exist, batch
/// size fits the dataset, a snapshot's mask matches the encoder width.
std::vector<Diagnostic> cross_check(const ExperimentConfig& cfg);

/// Parses `text` as JSON; ConfigError on malformed input.
nlohmann::json parse_text(const std::string& text, const std::string& origin);
nlohmann::json load_file(const std::filesystem::path& path);

/// Applies `key=value` with a dotted key. The value is read as JSON when
/// possible and as a string otherwise. ConfigError on malformed input.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// load_file + overrides + from_json + cross_check. Throws ConfigError
/// carrying the first diagnostic's path when any check fails.
ExperimentConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

nn::ModelSpec model_spec(const ExperimentConfig& cfg, std::size_t d_in);

}  // namespace metamask::config
