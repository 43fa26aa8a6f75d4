// Command-line front end: one verb per pipeline stage, driven by a JSON run
// configuration. Exit codes: 0 success, 2 bad configuration, 3 missing
// prerequisite artifact, 4 failed verification check, 1 anything else.
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vseg/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

vseg::RunConfig load_config(const CommonOpts& o) {
    vseg::RunConfig cfg = vseg::run_config_from_json_file(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.out_dir = o.out;
    return cfg;
}

void add_common(CLI::App* sub, CommonOpts& opts) {
    sub->add_option("--config", opts.config, "run configuration (JSON)")
        ->required();
    sub->add_option("--seed", opts.seed, "override the master seed");
    sub->add_option("--out", opts.out, "override the output directory");
}

int run_gradcheck(const std::string& out) {
    const std::filesystem::path report_path =
        out.empty() ? std::filesystem::path{}
                    : std::filesystem::path(out) / "gradcheck.json";
    const vseg::GradCheckReport report = vseg::cmd_gradcheck(report_path);
    for (const vseg::GradCheckResult& r : report.results)
        std::printf("%-40s max rel err %10.3e  (tol %.0e)  %s\n", r.name.c_str(),
                    r.max_rel_err, r.tolerance, r.passed ? "PASS" : "FAIL");
    if (!report.all_passed()) {
        std::printf("gradient checks FAILED\n");
        return 4;
    }
    std::printf("all %zu gradient checks passed\n", report.results.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Small-training-set volumetric segmentation pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string gradcheck_out;
    std::function<int()> action;

    const auto add_stage = [&](const char* name, const char* help,
                               void (*stage)(const vseg::RunConfig&)) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, opts);
        sub->callback([&, stage, name] {
            action = [&, stage, name] {
                stage(load_config(opts));
                std::printf("%s: done\n", name);
                return 0;
            };
        });
    };

    add_stage("phantom", "generate the synthetic phantom subjects", vseg::cmd_phantom);
    add_stage("resample", "resample every subject to the target in-plane spacing",
              vseg::cmd_resample);
    add_stage("augment", "expand the training slices per the augmentation policy",
              vseg::cmd_augment);
    add_stage("train", "train the network on the augmented samples", vseg::cmd_train);
    add_stage("predict", "run the checkpoint over the test subject",
              vseg::cmd_predict);
    add_stage("postprocess",
              "threshold the probabilities and keep the largest component",
              vseg::cmd_postprocess);
    add_stage("reconstruct", "extract the triangle surface of the cleaned mask",
              vseg::cmd_reconstruct);

    {
        CLI::App* sub = app.add_subcommand(
            "evaluate", "volume overlap and surface distance against ground truth");
        add_common(sub, opts);
        sub->callback([&] {
            action = [&] {
                const nlohmann::json m = vseg::cmd_evaluate(load_config(opts));
                std::printf("evaluate: subject %s mean DSC %.4f (metrics.json written)\n",
                            m.at("subject").get<std::string>().c_str(),
                            m.at("dsc").at("mean").get<double>());
                return 0;
            };
        });
    }
    {
        CLI::App* sub = app.add_subcommand(
            "crossval", "run every cross-validation fold end to end");
        add_common(sub, opts);
        sub->callback([&] {
            action = [&] {
                const nlohmann::json m = vseg::cmd_crossval(load_config(opts));
                const auto& s = m.at("summary");
                std::printf("crossval: %zu folds, DSC %.4f +/- %.4f across folds"
                            " (metrics.json written)\n",
                            static_cast<std::size_t>(s.at("folds").get<std::uint64_t>()),
                            s.at("dsc_mean_of_folds").get<double>(),
                            s.at("dsc_std_across_folds").get<double>());
                return 0;
            };
        });
    }
    {
        CLI::App* sub = app.add_subcommand(
            "gradcheck", "finite-difference verification of every gradient");
        sub->add_option("--out", gradcheck_out,
                        "directory for the JSON report (optional)");
        sub->callback([&] { action = [&] { return run_gradcheck(gradcheck_out); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        return action();
    } catch (const vseg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const vseg::PrereqError& e) {
        std::cerr << "missing prerequisite: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
