#include "kmhe/errors.hpp"
#include "kmhe/pipeline.hpp"
#include "support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kmhe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("kmhe_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json exact_config(const fs::path& out) {
    return {{"plant", "poly2"},
            {"horizon", 4},
            {"data",
             {{"train_count", 1},
              {"val_count", 1},
              {"train_length", 60},
              {"offline_length", 300},
              {"online_length", 200},
              {"state_noise", 0.0},
              {"output_noise", 0.0}}},
            {"lifting", {{"kind", "exact"}}},
            {"output_dir", out.string()}};
}

json learned_config(const fs::path& out) {
    json j = exact_config(out);
    j["lifting"] = {{"kind", "learned"},
                    {"training",
                     {{"psi_hidden", {8}},
                      {"lambda_hidden", {8}},
                      {"epochs", 2},
                      {"batch_size", 16},
                      {"offline_slice", 40},
                      {"val_windows", 16}}}};
    j["data"]["online_length"] = 30;
    return j;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(KMHE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing, overrides and validation") {
    json j = exact_config("out");
    apply_override(j, "mhe.lambda_z=2.5");
    apply_override(j, "lifting.kind=identity");
    apply_override(j, "data.hold=\"7\"");
    CHECK(j["mhe"]["lambda_z"] == 2.5);
    CHECK(j["lifting"]["kind"] == "identity");
    CHECK(j["data"]["hold"] == "7");
    CHECK_THROWS_AS(apply_override(j, "novalue"), Error);

    const ExperimentConfig c = config_from_json(exact_config("out"));
    CHECK(c.mhe.horizon == 4);
    CHECK(c.training.horizon == 4);
    CHECK(c.rmse_from == 100);
    CHECK(c.mhe.x_prior.isApprox(1.05 * c.plant.x0));
    CHECK(c.mhe.eps_x == 0.0);

    auto invalid = [](json bad) {
        try {
            config_from_json(bad);
        } catch (const Error& e) {
            return e.code() == ErrorCode::ConfigInvalid;
        }
        return false;
    };
    json bad = exact_config("out");
    bad["surprise"] = 1;
    CHECK(invalid(bad));
    bad = exact_config("out");
    bad["plant"] = "cstr2";
    CHECK(invalid(bad));  // exact lifting needs poly2
    bad = exact_config("out");
    bad["data"]["online_length"] = 3;
    CHECK(invalid(bad));
    bad = exact_config("out");
    bad["mhe"] = {{"horizon", 6}};
    CHECK(invalid(bad));
    bad = exact_config("out");
    bad["data"]["output_noise"] = -1.0;
    CHECK(invalid(bad));
}

TEST_CASE("stage hashes follow their inputs") {
    const ExperimentConfig a = config_from_json(exact_config("out"));
    json j = exact_config("elsewhere");
    j["mhe"] = {{"lambda_z", 3.0}};
    const ExperimentConfig b = config_from_json(j);
    CHECK(a.data_hash() == b.data_hash());
    CHECK(a.model_hash() == b.model_hash());
    CHECK(a.stack_hash() == b.stack_hash());
    j["seeds"] = {{"data", 5}};
    CHECK(config_from_json(j).data_hash() != a.data_hash());
    json h = exact_config("out");
    h["horizon"] = 3;
    CHECK(config_from_json(h).stack_hash() != a.stack_hash());
}

TEST_CASE("zero-noise exact pipeline recovers the states") {
    const fs::path out = scratch("exact");
    const ExperimentConfig cfg = config_from_json(exact_config(out));
    const SimulateOutput sim = cmd_simulate(cfg);
    CHECK(sim.offline.u.cols() == 300);
    CHECK(sim.online.x.rows() == 0);
    CHECK(sim.online_truth.x.cols() == 201);
    cmd_train(cfg);
    const HankelStack stack = cmd_build_stack(cfg);
    CHECK(stack.columns(4) == 297);
    const EstimateOutput est = cmd_estimate(cfg);
    CHECK(est.result.metrics.rmse_total <= 1e-4);
    CHECK(fs::exists(out / "estimate" / "exact" / "estimates.csv"));
    CHECK(fs::exists(out / "estimate" / "exact" / "metrics.json"));

    const CompareOutput cmp = cmd_compare(cfg);
    CHECK(cmp.report["proposed"]["rmse_total"].get<double>() <= 1e-4);
    CHECK(cmp.report["proposed_not_worse"].get<bool>());
    CHECK(fs::exists(out / "compare" / "report.md"));
    auto body = [](const std::string& text) { return text.substr(text.find('\n') + 1); };
    CHECK(body(slurp(out / "compare" / "proposed_estimates.csv")) ==
          body(slurp(out / "estimate" / "exact" / "estimates.csv")));
}

TEST_CASE("artifacts from another configuration are refused") {
    const fs::path out = scratch("mismatch");
    json j = exact_config(out);
    const ExperimentConfig cfg = config_from_json(j);

    try {
        cmd_estimate(cfg);
        FAIL("estimate without data should fail");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingArtifact);
    }

    cmd_simulate(cfg);
    cmd_train(cfg);
    j["seeds"] = {{"data", 2}};
    try {
        cmd_build_stack(config_from_json(j));
        FAIL("artifacts from other data should be refused");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigInvalid);
    }

    cmd_build_stack(cfg);
    json h = exact_config(out);
    h["horizon"] = 3;
    try {
        cmd_estimate(config_from_json(h));
        FAIL("stack built for another horizon should be refused");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigInvalid);
    }
}

TEST_CASE("learned pipeline is byte-for-byte repeatable") {
    const fs::path a = scratch("repeat_a"), b = scratch("repeat_b");
    for (const fs::path& out : {a, b}) {
        const ExperimentConfig cfg = config_from_json(learned_config(out));
        cmd_simulate(cfg);
        cmd_train(cfg);
        cmd_build_stack(cfg);
        cmd_compare(cfg);
    }
    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.path().extension() != ".csv") continue;
        const fs::path rel = fs::relative(entry.path(), a);
        CHECK_MESSAGE(slurp(entry.path()) == slurp(b / rel), rel.string());
        ++compared;
    }
    CHECK(compared >= 8);
    const std::string history = slurp(a / "model" / "history.csv");
    CHECK(history.find("epoch,L1,L2,val_L1,val_L2") != std::string::npos);
}

TEST_CASE("command line exit codes") {
    const fs::path out = scratch("cli");
    const fs::path config = out / "config.json";
    {
        std::ofstream os(config);
        os << exact_config(out / "run").dump(2);
    }
    const std::string base = " --config " + config.string();
    CHECK(run_cli("simulate" + base) == 0);
    CHECK(run_cli("train" + base) == 0);
    CHECK(run_cli("build-stack" + base) == 0);
    CHECK(run_cli("estimate" + base) == 0);
    CHECK(run_cli("estimate" + base + " --set mhe.baseline_mode=true") == 0);
    CHECK(fs::exists(out / "run" / "estimate" / "baseline" / "estimates.csv"));

    CHECK(run_cli("estimate" + base + " --seed 9") == 2);  // data hash differs
    CHECK(run_cli("train" + base + " --set bogus=1") == 2);
    CHECK(run_cli("train --config " + (out / "absent.json").string()) == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("estimate" + base + " --out " + (out / "empty").string()) == 3);
}
