#pragma once

#include <exception>
#include <filesystem>

#include <json.hpp>

#include "metamask/config.hpp"

namespace metamask::runner {

/// Study parallelism from METAMASK_THREADS; 1 when unset. ConfigError on a
/// value that is not a positive integer.
int threads_from_env();

/// Executes the configured mode. Writes report.jsonl, summary.json, the mode's
/// CSVs, MMT1 dumps and a parameter snapshot under cfg.output_dir, which is
/// held through a lockfile for the duration. Returns the summary.
nlohmann::json run(const config::ExperimentConfig& cfg, int threads = 1);

struct ErrorReport {
    int exit_code;
    nlohmann::json object;
};

/// Exit code and machine-readable object for a failure: 2 for config
/// problems, 3 for divergence, 4 for file problems, 1 otherwise.
ErrorReport describe_error(const std::exception& e);

}  // namespace metamask::runner
