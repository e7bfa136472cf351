// kvlock: token-masked KV cache locking for a toy diffusion transformer,
// with hallucination-aware fusion/guidance scheduling.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kvlock/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out;
    std::vector<std::string> toggles;
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "run configuration file (key = value)");
    cmd->add_option("--out", args.out, "output directory (overrides paths.out)");
    cmd->add_option("--toggle", args.toggles, "override, e.g. --toggle toggles.s_star=false")
        ->take_all();
    cmd->add_option("--seed", args.seed, "master seed (overrides config)")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

kvlock::RunConfig resolve(const CommonArgs& args) {
    kvlock::RunConfig cfg;
    if (!args.config.empty()) cfg = kvlock::parse_config(args.config);
    for (const std::string& t : args.toggles) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw kvlock::ConfigError("--toggle expects NAME=VALUE, got '" + t + "'");
        }
        kvlock::apply_override(cfg, t.substr(0, eq), t.substr(eq + 1));
    }
    if (!args.out.empty()) cfg.out = args.out;
    if (args.seed_set) cfg.seed = args.seed;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"KV cache locking for diffusion-transformer editing, with "
                 "hallucination-aware scheduling"};
    app.require_subcommand(1);

    CommonArgs gen_args, cache_args, edit_args, toy_args, ablate_args, report_args;
    add_common(app.add_subcommand("gen", "write a synthetic scene and seeded model weights"),
               gen_args);
    add_common(app.add_subcommand("cache", "run the caching pass and write the KV bank"),
               cache_args);
    add_common(app.add_subcommand("edit", "run the guided, injected sampling loop"), edit_args);
    add_common(app.add_subcommand("toy", "1-D hallucination testbed experiments"), toy_args);
    add_common(app.add_subcommand("ablate", "run the ablation arm matrix"), ablate_args);
    add_common(app.add_subcommand("report", "print run artifacts from an output directory"),
               report_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("gen")) kvlock::cmd_gen(resolve(gen_args));
        else if (app.got_subcommand("cache")) kvlock::cmd_cache(resolve(cache_args));
        else if (app.got_subcommand("edit")) kvlock::cmd_edit(resolve(edit_args));
        else if (app.got_subcommand("toy")) kvlock::cmd_toy(resolve(toy_args));
        else if (app.got_subcommand("ablate")) kvlock::cmd_ablate(resolve(ablate_args));
        else if (app.got_subcommand("report")) kvlock::cmd_report(resolve(report_args));
    } catch (const kvlock::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
