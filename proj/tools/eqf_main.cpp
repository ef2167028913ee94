#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "eqf/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Equation-free bifurcation experiments"};
    app.require_subcommand(1);
    CLI::App* run = app.add_subcommand("run", "Run the experiment described by a config file");
    std::string config;
    eqf::io::RunOptions opts;
    long seed = 0;
    run->add_option("config", config, "Config file")->required();
    run->add_option("--out", opts.out_dir, "Output directory");
    CLI::Option* seed_opt = run->add_option("--seed", seed, "Overrides [experiment] seed");
    run->add_option("--threads", opts.threads, "Worker threads for Jacobian columns")
        ->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : eqf::io::kExitConfig;
    }
    if (*seed_opt) opts.seed = seed;

    eqf::io::ExperimentConfig cfg;
    try {
        cfg = eqf::io::ExperimentConfig::load(config);
    } catch (const eqf::ConfigError& e) {
        std::cerr << "error: code=" << eqf::io::kExitConfig << " kind=config task=? message=\""
                  << e.what() << "\"\n";
        return eqf::io::kExitConfig;
    }
    const eqf::io::RunResult res = eqf::io::run(cfg, opts, std::cerr);
    for (const auto& f : res.files) std::cout << f << '\n';
    if (res.exit_code != eqf::io::kExitOk) std::cerr << res.error << '\n';
    return res.exit_code;
}
