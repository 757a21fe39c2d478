#include "kmhe/errors.hpp"
#include "kmhe/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

int exit_code(kmhe::ErrorCode code) {
    switch (code) {
        case kmhe::ErrorCode::ConfigInvalid:
        case kmhe::ErrorCode::ParseError:
            return 2;
        default:
            return 3;
    }
}

void report_error(const std::string& kind, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman-lifted data-enabled moving horizon estimation"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;

    const char* names[][2] = {{"simulate", "generate training, validation, offline and online datasets"},
                              {"train", "fit the lifting (or write the exact/identity model)"},
                              {"build-stack", "lift the offline data and store the Hankel stack"},
                              {"estimate", "run the estimator on the online data"},
                              {"compare", "run proposed and baseline estimators and write a report"}};
    std::vector<CLI::App*> subs;
    for (const auto& n : names) {
        CLI::App* sub = app.add_subcommand(n[0], n[1]);
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "seed for data and training");
        sub->add_option("--set", overrides, "override a config entry (dotted.key=value)")->take_all();
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        report_error("UsageError", e.what(), 2);
        return 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        std::optional<std::uint64_t> seed_opt;
        if (sub->count("--seed") > 0) seed_opt = seed;
        std::optional<std::string> out_opt;
        if (sub->count("--out") > 0) out_opt = out_dir;
        const kmhe::ExperimentConfig cfg = kmhe::load_config(config_path, overrides, seed_opt, out_opt);

        nlohmann::json summary{{"command", sub->get_name()}, {"output_dir", cfg.output_dir}};
        const std::string name = sub->get_name();
        if (name == "simulate") {
            const auto out = kmhe::cmd_simulate(cfg);
            summary["train_sets"] = out.train.size();
            summary["val_sets"] = out.val.size();
        } else if (name == "train") {
            const auto out = kmhe::cmd_train(cfg);
            summary["kind"] = out.model.at("kind");
            if (!out.history.empty()) {
                summary["best_val"] = out.best_val;
                summary["best_seed"] = out.best_seed;
            }
        } else if (name == "build-stack") {
            const auto stack = kmhe::cmd_build_stack(cfg);
            summary["columns"] = stack.columns(stack.horizon());
        } else if (name == "estimate") {
            const auto out = kmhe::cmd_estimate(cfg);
            summary["metrics"] = out.result.metrics.to_json();
        } else {
            const auto out = kmhe::cmd_compare(cfg);
            summary["proposed_rmse"] = out.proposed.metrics.rmse_total;
            summary["baseline_rmse"] = out.baseline.metrics.rmse_total;
        }
        std::cout << summary.dump(2) << std::endl;
        return 0;
    } catch (const kmhe::Error& e) {
        const int code = exit_code(e.code());
        report_error(std::string(kmhe::to_string(e.code())), e.what(), code);
        return code;
    } catch (const std::exception& e) {
        report_error("InternalError", e.what(), 3);
        return 3;
    }
}
