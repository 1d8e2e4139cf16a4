#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metamask/config.hpp"
#include "metamask/data.hpp"
#include "metamask/errors.hpp"
#include "metamask/runner.hpp"
#include "oracles.hpp"

using namespace metamask;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome cli(const fs::path& dir, const std::string& args)
{
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(METAMASK_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

json small_config(const std::string& mode = "train")
{
    return json{{"mode", mode},
                {"seed", 3},
                {"output_dir", "run"},
                {"batch_size", 32},
                {"data", {{"synthetic", {{"n_samples", 120}}}}},
                {"model", {{"encoder_hidden", {32}}, {"rep_dim", 16}, {"head_hidden", {16}}, {"head_out", 16}}},
                {"optim", {{"total_steps", 6}, {"lr_main", 1e-4}}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json")
{
    std::ofstream(dir / name) << j.dump(2);
    return dir / name;
}

std::vector<json> read_jsonl(const fs::path& p)
{
    std::vector<json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
    return out;
}

}  // namespace

TEST_SUITE("config")
{
    TEST_CASE("defaults and round trip")
    {
        const auto parsed = config::from_json(json{{"mode", "train"}});
        CHECK(parsed.diagnostics.empty());
        const auto& c = parsed.config;
        CHECK(c.train.batch_size == 64);
        CHECK(c.train.optim.alpha == 100.0);
        CHECK(c.eval.knn_k == 5);
        CHECK(c.train.contrastive.include_positive_in_denominator);
        const auto again = config::from_json(config::to_json(c));
        CHECK(again.diagnostics.empty());
        CHECK(config::to_json(again.config) == config::to_json(c));
    }

    TEST_CASE("diagnostics name the offending field")
    {
        auto j = small_config();
        j["optim"]["lr_mian"] = 0.1;
        j["loss"]["temperature"] = -1.0;
        j.erase("mode");
        const auto parsed = config::from_json(j);
        std::vector<std::string> paths;
        for (const auto& d : parsed.diagnostics) paths.push_back(d.path);
        CHECK(std::find(paths.begin(), paths.end(), "optim.lr_mian") != paths.end());
        CHECK(std::find(paths.begin(), paths.end(), "loss.temperature") != paths.end());
        CHECK(std::find(paths.begin(), paths.end(), "mode") != paths.end());
        CHECK_THROWS_AS(config::parse_mode("fit"), ConfigError);
    }

    TEST_CASE("overrides")
    {
        json j = small_config();
        config::apply_override(j, "optim.lr_main=0.5");
        config::apply_override(j, "ablation.no_meta=true");
        config::apply_override(j, "output_dir=elsewhere");
        config::apply_override(j, "eval.mask_rates=[0, 0.5]");
        CHECK(j["optim"]["lr_main"] == 0.5);
        CHECK(j["ablation"]["no_meta"] == true);
        CHECK(j["output_dir"] == "elsewhere");
        const auto parsed = config::from_json(j);
        CHECK(parsed.diagnostics.empty());
        CHECK(parsed.config.eval.mask_rates == std::vector<double>{0.0, 0.5});
        CHECK_THROWS_AS(config::apply_override(j, "no_equals_sign"), ConfigError);
    }

    TEST_CASE("cross checks against the data")
    {
        auto j = small_config();
        j["batch_size"] = 500;
        const auto parsed = config::from_json(j);
        CHECK(parsed.diagnostics.empty());
        const auto diags = config::cross_check(parsed.config);
        REQUIRE(diags.size() == 1);
        CHECK(diags[0].path == "batch_size");
        CHECK(diags[0].message.find("n_samples") != std::string::npos);
    }

    TEST_CASE("thread count from the environment")
    {
        ::unsetenv("METAMASK_THREADS");
        CHECK(runner::threads_from_env() == 1);
        ::setenv("METAMASK_THREADS", "3", 1);
        CHECK(runner::threads_from_env() == 3);
        ::setenv("METAMASK_THREADS", "many", 1);
        CHECK_THROWS_AS(runner::threads_from_env(), ConfigError);
        ::unsetenv("METAMASK_THREADS");
    }
}

TEST_SUITE("cli")
{
    TEST_CASE("validate accepts a good config")
    {
        const auto dir = oracle::temp_dir("cli_validate");
        const auto r = cli(dir, "validate " + write_config(dir, small_config()).string());
        CHECK(r.code == 0);
        CHECK(json::parse(r.out)["diagnostics"].empty());
    }

    TEST_CASE("validate reports batch size against sample count")
    {
        const auto dir = oracle::temp_dir("cli_batch");
        auto j = small_config();
        j["batch_size"] = 500;
        const auto r = cli(dir, "validate " + write_config(dir, j).string());
        CHECK(r.code == 2);
        const auto diags = json::parse(r.out)["diagnostics"];
        REQUIRE(diags.size() == 1);
        const std::string msg = diags[0]["message"];
        CHECK(diags[0]["path"] == "batch_size");
        CHECK(msg.find("batch_size") != std::string::npos);
        CHECK(msg.find("n_samples") != std::string::npos);
    }

    TEST_CASE("unknown fields exit with the config code and a path")
    {
        const auto dir = oracle::temp_dir("cli_unknown");
        auto j = small_config();
        j["model"]["rep_dimm"] = 3;
        const auto r = cli(dir, "run " + write_config(dir, j).string());
        CHECK(r.code == 2);
        const auto err = json::parse(r.err)["error"];
        CHECK(err["kind"] == "config");
        CHECK(err["path"] == "model.rep_dimm");
        CHECK_FALSE(fs::exists(dir / "run" / "summary.json"));
    }

    TEST_CASE("train run writes its artifacts")
    {
        const auto dir = oracle::temp_dir("cli_train");
        const auto r = cli(dir, "run " + write_config(dir, small_config()).string());
        REQUIRE(r.code == 0);
        const auto run = dir / "run";
        for (const char* f : {"summary.json", "report.jsonl", "reps_train.mmt", "reps_test.mmt", "mask.mmt"}) {
            CHECK(fs::exists(run / f));
        }
        CHECK(fs::exists(run / "params"));
        CHECK_FALSE(fs::exists(run / ".lock"));
        const auto records = read_jsonl(run / "report.jsonl");
        REQUIRE(records.size() == 6);
        CHECK(records[0]["step"] == 0);
        CHECK(records[5]["l_meta"].is_number());
        const auto summary = json::parse(slurp(run / "summary.json"));
        CHECK(summary["mode"] == "train");
        const double acc = summary["metrics"]["knn_accuracy"];
        CHECK((acc >= 0.0 && acc <= 1.0));

        // Evaluating the saved parameters reproduces the accuracy.
        auto e = small_config("eval");
        e["params"] = (run / "params").string();
        e["output_dir"] = "eval_run";
        const auto re = cli(dir, "run " + write_config(dir, e, "eval.json").string());
        REQUIRE(re.code == 0);
        const auto es = json::parse(slurp(dir / "eval_run" / "summary.json"));
        CHECK(es["metrics"]["knn_accuracy"] == summary["metrics"]["knn_accuracy"]);
        CHECK(es["metrics"].contains("theorem2"));
    }

    TEST_CASE("frozen mask ablation keeps the mask mean at one")
    {
        const auto dir = oracle::temp_dir("cli_ablation");
        const auto r = cli(dir, "run " + write_config(dir, small_config()).string() +
                                    " --set ablation.no_meta=true --set ablation.no_drr=true");
        REQUIRE(r.code == 0);
        for (const auto& rec : read_jsonl(dir / "run" / "report.jsonl")) {
            CHECK(rec["mask_mean"] == 1.0);
            CHECK(rec["l_meta"].is_null());
            CHECK(rec["l_drr"] == 0.0);
        }
    }

    TEST_CASE("identical runs produce identical reports")
    {
        const auto dir = oracle::temp_dir("cli_determinism");
        auto j = small_config();
        const auto cfg = write_config(dir, j);
        REQUIRE(cli(dir, "run " + cfg.string()).code == 0);
        const auto first = slurp(dir / "run" / "report.jsonl");
        REQUIRE(cli(dir, "run " + cfg.string() + " --set output_dir=run2").code == 0);
        CHECK(first == slurp(dir / "run2" / "report.jsonl"));
        ::setenv("METAMASK_THREADS", "4", 1);
        REQUIRE(cli(dir, "run " + cfg.string() + " --set output_dir=run3").code == 0);
        ::unsetenv("METAMASK_THREADS");
        CHECK(first == slurp(dir / "run3" / "report.jsonl"));
    }

    TEST_CASE("divergence exits with its own code and the step")
    {
        const auto dir = oracle::temp_dir("cli_diverge");
        data::SyntheticSpec spec;
        spec.n_samples = 40;
        auto ds = data::make_synthetic(spec);
        for (auto& v : ds.views) {
            for (auto& x : v.data()) x = x < 0.0 ? -1e308 : 1e308;
        }
        const auto manifest = data::save_dataset(dir / "huge", ds);
        auto j = small_config();
        j["data"] = {{"manifest", manifest.string()}};
        j["batch_size"] = 8;
        const auto r = cli(dir, "run " + write_config(dir, j).string());
        CHECK(r.code == 3);
        const auto err = json::parse(r.err)["error"];
        CHECK(err["kind"] == "divergence");
        CHECK(err["step"].is_number_unsigned());
    }

    TEST_CASE("io failures and the output lock")
    {
        const auto dir = oracle::temp_dir("cli_io");
        auto j = small_config();
        const auto cfg = write_config(dir, j);
        fs::create_directories(dir / "run");
        std::ofstream(dir / "run" / ".lock") << "";
        const auto locked = cli(dir, "run " + cfg.string());
        CHECK(locked.code == 4);
        CHECK(json::parse(locked.err)["error"]["message"].get<std::string>().find("lock") != std::string::npos);
        fs::remove(dir / "run" / ".lock");

        std::ofstream(dir / "broken.json") << "{\"mode\": ";
        CHECK(cli(dir, "validate " + (dir / "broken.json").string()).code == 2);
        CHECK(cli(dir, "run " + (dir / "absent.json").string()).code == 4);

        // Output directory is a regular file.
        std::ofstream(dir / "blocked") << "x";
        CHECK(cli(dir, "run " + cfg.string() + " --set output_dir=blocked").code == 4);
    }

    TEST_CASE("alpha sweep reports one accuracy per weight")
    {
        const auto dir = oracle::temp_dir("cli_alpha");
        auto j = small_config("alpha_sweep");
        j["eval"] = {{"alphas", {0.1, 1.0, 10.0}}};
        const auto r = cli(dir, "run " + write_config(dir, j).string());
        REQUIRE(r.code == 0);
        std::ifstream in(dir / "run" / "studies.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "study,rate_or_width,trial,accuracy,baseline");
        std::vector<std::string> rows;
        while (std::getline(in, line)) rows.push_back(line);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].rfind("alpha_sweep,0.1,", 0) == 0);
        CHECK(rows[2].rfind("alpha_sweep,10.0,", 0) == 0);
    }

    TEST_CASE("mask studies")
    {
        const auto dir = oracle::temp_dir("cli_studies");
        auto j = small_config("random_mask_study");
        j["eval"] = {{"mask_rates", {0.0, 0.5}}, {"trials", 3}};
        REQUIRE(cli(dir, "run " + write_config(dir, j).string()).code == 0);
        const auto summary = json::parse(slurp(dir / "run" / "summary.json"));
        CHECK(summary["metrics"]["study"].contains("baseline"));
        std::ifstream in(dir / "run" / "studies.csv");
        std::size_t lines = 0;
        for (std::string line; std::getline(in, line);) ++lines;
        CHECK(lines == 1 + 2 * 3);

        j["mode"] = "learned_mask_study";
        j["output_dir"] = "learned";
        REQUIRE(cli(dir, "run " + write_config(dir, j, "learned.json").string()).code == 0);
        CHECK(fs::exists(dir / "learned" / "studies.csv"));
    }
}
