#pragma once

// Command-line front end: subcommand dispatch plus the exit-code contract.
// 0 success, 2 configuration or usage errors, 3 data errors, 4 failed
// gradient checks, 1 anything else.

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ole/common.hpp"
#include "ole/experiment.hpp"

namespace ole::cli {

/// Parses `args` (program name excluded) and runs the chosen subcommand,
/// writing all human-readable output to `out`.
inline int run(std::vector<std::string> args, std::ostream& out) {
    CLI::App app{"Orthogonal low-rank embedding trainer and evaluation harness"};
    app.name("ole");
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value configuration file");
        sub->add_option("--set", sets, "override one setting, key=value (repeatable)");
        sub->add_option("--out", out_dir, "output directory for artifacts");
        sub->add_option("--seed", seed, "base random seed");
    };
    add_common(app.add_subcommand(
        "train", "train a network and write metrics, geometry, and a checkpoint"));
    add_common(app.add_subcommand(
        "sweep", "train repeats at each sweep_lambdas value and write sweep.csv"));
    add_common(app.add_subcommand(
        "gradcheck", "verify analytic gradients and the zero-loss geometry"));
    add_common(app.add_subcommand(
        "metrics", "recompute the metrics report for a saved checkpoint"));

    try {
        // App::parse consumes the vector back to front.
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, out);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        ExperimentConfig cfg = load_config(config_path, sets);
        if (sub->count("--out") > 0) cfg.output_dir = out_dir;
        if (sub->count("--seed") > 0) cfg.seed = seed;

        if (sub->get_name() == "train") {
            cmd_train(cfg, out);
        } else if (sub->get_name() == "sweep") {
            cmd_sweep_lambda(cfg, cfg.sweep_lambdas, out);
        } else if (sub->get_name() == "gradcheck") {
            if (!cmd_gradcheck(cfg, out).ok) return 4;
        } else {
            cmd_metrics(cfg, out);
        }
        return 0;
    } catch (const ConfigError& e) {
        out << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        out << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        out << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace ole::cli
