#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "lr/io.hpp"
#include "lr/pipeline.hpp"
#include "lr/runconfig.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    int64_t seed = -1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
    cmd->add_option("--out", opts.out_dir, "output directory (default runs/<run_id>)");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--set", opts.overrides, "override a config leaf, e.g. attack.epsilon=0.05")
        ->take_all();
}

// Builds the effective config: file (or defaults) + dotted overrides + seed.
lr::cli::RunConfig resolve_config(const CommonOpts& opts) {
    nlohmann::json j;
    if (!opts.config_path.empty()) {
        try {
            j = nlohmann::json::parse(lr::io::read_text(opts.config_path));
        } catch (const nlohmann::json::exception& e) {
            throw lr::ConfigError("config: cannot parse " + opts.config_path + ": " + e.what());
        }
    } else {
        j = lr::cli::RunConfig{}.to_json();
    }
    for (const auto& ov : opts.overrides) lr::cli::apply_override(j, ov);
    if (opts.seed >= 0) j["seed"] = static_cast<uint64_t>(opts.seed);
    return lr::cli::RunConfig::from_json(j);
}

std::string resolve_out(const CommonOpts& opts, const lr::cli::RunConfig& cfg) {
    return opts.out_dir.empty() ? "runs/" + cfg.run_id() : opts.out_dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layer-regression adversarial-example detection lab"};
    app.require_subcommand(1);

    const std::vector<std::string> stages = {"synth-data",     "train-target", "attack",
                                             "train-detector", "calibrate",    "evaluate",
                                             "sweep-eps",      "sweep-taps",   "bench"};
    struct SubOpts {
        CommonOpts common;
        CLI::App* cmd = nullptr;
    };
    std::vector<SubOpts> subs(stages.size() + 1);
    for (size_t i = 0; i < stages.size(); ++i) {
        subs[i].cmd = app.add_subcommand(stages[i], "run the " + stages[i] + " stage");
        add_common(subs[i].cmd, subs[i].common);
    }
    auto& pipeline_sub = subs[stages.size()];
    pipeline_sub.cmd = app.add_subcommand("pipeline", "chain all stages with resume-by-digest");
    add_common(pipeline_sub.cmd, pipeline_sub.common);

    std::vector<std::string> report_dirs;
    CLI::App* report_cmd = app.add_subcommand("report", "merge run CSVs to standard output");
    report_cmd->add_option("dirs", report_dirs, "run directories containing report.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) {
            return lr::cli::merge_reports(report_dirs, std::cout, std::cerr);
        }
        for (size_t i = 0; i < stages.size(); ++i) {
            if (subs[i].cmd->parsed()) {
                const auto cfg = resolve_config(subs[i].common);
                return lr::cli::run_stage(cfg, stages[i], resolve_out(subs[i].common, cfg),
                                          std::cout);
            }
        }
        if (pipeline_sub.cmd->parsed()) {
            const auto cfg = resolve_config(pipeline_sub.common);
            return lr::cli::run_pipeline(cfg, resolve_out(pipeline_sub.common, cfg), std::cout);
        }
    } catch (const lr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return lr::cli::kExitConfig;
    } catch (const lr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
