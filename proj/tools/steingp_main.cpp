#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "steingp/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Kronecker-structured graph GP regression via low-rank Stein solvers"};
    app.require_subcommand(1);

    std::string run_config, run_out;
    bool run_parallel = false;
    CLI::App* run = app.add_subcommand("run", "run the configured solver sweep");
    run->add_option("--config", run_config, "experiment config (JSON)")->required();
    run->add_option("--out", run_out, "output directory override");
    run->add_flag("--parallel", run_parallel, "run sweep points concurrently");

    std::string cond_config;
    CLI::App* cond =
        app.add_subcommand("condition", "print spectral condition estimates and bound");
    cond->add_option("--config", cond_config, "experiment config (JSON)")->required();

    std::string gen_config, gen_out;
    CLI::App* gen = app.add_subcommand("gen-data", "generate and save the data matrix");
    gen->add_option("--config", gen_config, "experiment config (JSON)")->required();
    gen->add_option("--out", gen_out, "output directory override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            steingp::ExperimentConfig cfg = steingp::load_experiment_config(run_config);
            return steingp::run_experiment(cfg, run_out, run_parallel);
        }
        if (cond->parsed()) {
            steingp::ExperimentConfig cfg = steingp::load_experiment_config(cond_config);
            steingp::condition_report(cfg, std::cout);
            return 0;
        }
        if (gen->parsed()) {
            steingp::ExperimentConfig cfg = steingp::load_experiment_config(gen_config);
            steingp::write_generated_data(cfg, gen_out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
