#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metamask/config.hpp"
#include "metamask/errors.hpp"
#include "metamask/runner.hpp"

using namespace metamask;
using nlohmann::json;

namespace {

json diagnostics_json(const std::vector<config::Diagnostic>& diags)
{
    json out = json::array();
    for (const auto& d : diags) out.push_back({{"path", d.path}, {"message", d.message}});
    return out;
}

config::Parsed check(const std::string& path, const std::vector<std::string>& overrides)
{
    json j = config::load_file(path);
    for (const auto& o : overrides) config::apply_override(j, o);
    auto parsed = config::from_json(j, std::filesystem::path(path).parent_path());
    for (auto& d : config::cross_check(parsed.config)) parsed.diagnostics.push_back(std::move(d));
    return parsed;
}

int fail(const std::exception& e)
{
    const auto report = runner::describe_error(e);
    std::cerr << report.object.dump() << '\n';
    return report.exit_code;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"MetaMask representation learning experiments"};
    app.require_subcommand(1);

    std::string run_path;
    std::vector<std::string> overrides;
    auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
    run->add_option("config", run_path, "Experiment config (JSON)")->required();
    run->add_option("--set", overrides, "Override a config field, e.g. --set optim.lr_main=0.01");

    std::string validate_path;
    std::vector<std::string> validate_overrides;
    auto* validate = app.add_subcommand("validate", "Check a config file without running it");
    validate->add_option("config", validate_path, "Experiment config (JSON)")->required();
    validate->add_option("--set", validate_overrides, "Override a config field before checking");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) {
            const auto parsed = check(validate_path, validate_overrides);
            std::cout << json{{"diagnostics", diagnostics_json(parsed.diagnostics)}}.dump(2) << '\n';
            return parsed.diagnostics.empty() ? 0 : 2;
        }

        const auto parsed = check(run_path, overrides);
        if (!parsed.diagnostics.empty()) {
            const auto& first = parsed.diagnostics.front();
            json err = {{"kind", "config"},
                        {"path", first.path},
                        {"message", first.message},
                        {"diagnostics", diagnostics_json(parsed.diagnostics)}};
            std::cerr << json{{"error", err}}.dump() << '\n';
            return 2;
        }
        const int threads = runner::threads_from_env();
        runner::run(parsed.config, threads);
        std::cout << (parsed.config.output_dir / "summary.json").string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        return fail(e);
    }
}
