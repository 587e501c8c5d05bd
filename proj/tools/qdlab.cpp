// qdlab: run seeded quasi-diffusion experiments from scenario configs.
//
//   qdlab run --config my.cfg --out results/ --seed 7
//   qdlab run --scenario bm_exit_time
//   qdlab list --tag harnack

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "qdlab/errors.hpp"
#include "qdlab/scenario.hpp"

namespace {

void print_catalog(const std::string& tag) {
    for (const auto& e : qdlab::list_scenarios(tag)) {
        std::string tags;
        for (const auto& t : e.tags) tags += (tags.empty() ? "" : ",") + t;
        std::printf("%-28s %-36s %s\n", e.name.c_str(), tags.c_str(), e.description.c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo lab for diffusions with discontinuous coefficients"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one scenario and write its report");
    std::string config_path, scenario_name, out_dir;
    std::uint64_t seed = 0;
    int workers = 0;
    bool dump = false;
    auto* config_opt = run->add_option("--config", config_path, "scenario config file")->check(CLI::ExistingFile);
    auto* name_opt = run->add_option("--scenario", scenario_name, "bundled scenario name (see `qdlab list`)");
    config_opt->excludes(name_opt);
    auto* seed_opt = run->add_option("--seed", seed, "override the config seed");
    run->add_option("--workers", workers, "worker threads (default: $QDLAB_WORKERS, else all cores)")
        ->check(CLI::PositiveNumber);
    run->add_option("--out", out_dir, "output directory (default: the config's output key)");
    run->add_flag("--dump-paths", dump, "write trajectories.bin for the first 16 paths");

    auto* list = app.add_subcommand("list", "print the bundled scenario catalog");
    std::string tag;
    list->add_option("--tag", tag, "only scenarios carrying this tag");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : qdlab::kExitFailure;
    }

    try {
        if (*list) {
            print_catalog(tag);
            return 0;
        }
        if (config_path.empty() && scenario_name.empty()) {
            std::cerr << "qdlab run: one of --config or --scenario is required\n";
            return qdlab::kExitFailure;
        }
        const qdlab::Scenario scenario =
            config_path.empty() ? qdlab::bundled_scenario(scenario_name) : qdlab::load_scenario(config_path);
        qdlab::RunOptions options;
        if (*seed_opt) options.seed = seed;
        options.workers = workers;
        if (!out_dir.empty()) options.out = out_dir;
        options.dump_paths = dump;

        const auto result = qdlab::run_scenario(scenario, options);
        std::ifstream summary(result.output_dir / "summary.txt");
        if (summary) std::cout << summary.rdbuf();
        if (!result.error.empty()) std::cerr << "qdlab: " << result.error << "\n";
        std::cout << "report written to " << (result.output_dir / "report.json").string() << "\n";
        return result.exit_status;
    } catch (const qdlab::Error& e) {
        std::cerr << "qdlab: " << e.what() << "\n";
        return qdlab::kExitFailure;
    }
}
