// Command-line driver: one subcommand per experiment, CSV out.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scrip/experiments.hpp"

namespace {

const char* describe(const std::string& name) {
    if (name == "steady-state") return "M* for a fixed threshold profile";
    if (name == "best-response") return "optimal policy and values for given or mean-field rates";
    if (name == "equilibrium") return "threshold equilibrium, rates, utilities, welfare";
    if (name == "simulate") return "Monte Carlo run of the round protocol";
    if (name == "fig1") return "utility against p_e at fixed p_s";
    if (name == "sybil-sweep") return "utilities and welfare against sybil count and fraction";
    if (name == "crash-scan") return "equilibrium status and welfare against m";
    if (name == "collusion-sweep") return "utilities against collusive group size";
    if (name == "sybil-equivalence") return "search m' so a sybil-free system matches sybil welfare";
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scrip: scrip-economy steady states, equilibria and simulation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    int threads = 1;
    bool trace = false;
    bool plot = false;
    app.add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed, "replace the config's seeds with this one");
    app.add_option("--threads", threads, "worker threads for sweep points")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--trace", trace, "write the ||M - M*|| trace of simulations");
    app.add_flag("--plot-stub", plot, "write a gnuplot stub next to each CSV");

    for (const auto& name : scrip::command_names()) app.add_subcommand(name, describe(name));

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        std::ifstream in(config_path, std::ios::binary);
        std::stringstream bytes;
        bytes << in.rdbuf();
        auto config = scrip::load_config(config_path);
        if (*seed_opt) config.seeds = {seed};
        const auto output = scrip::run_command(command, config, {threads, trace});
        const auto files = scrip::write_outputs(out_dir, output, {command, config_path, bytes.str(), config.seeds}, plot);
        for (const auto& f : files) std::cout << f.string() << '\n';
    } catch (const scrip::ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
