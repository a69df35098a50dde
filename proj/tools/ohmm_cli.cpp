// ohmm: simulate chains, fit online HMMs, run experiments, export plot data.
//
//   ohmm simulate   --params p.json --length 10000 --seed 1 --out chain.csv
//   ohmm fit        --chain chain.csv --config exp.cfg [--trace trace.jsonl] ...
//   ohmm experiment --config exp.cfg [--out-dir out]
//   ohmm plot-data  --estimates out/estimates.json --out scatter.csv
//
// Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ohmm/experiment.hpp"
#include "ohmm/io.hpp"
#include "ohmm/markov.hpp"

namespace fs = std::filesystem;

namespace {

int run_simulate(const fs::path& params_path, std::size_t length, std::uint64_t seed, const fs::path& out) {
    const auto params = ohmm::io::load_params(params_path);
    const auto chain = ohmm::simulate_chain(params, length, seed);
    ohmm::io::save_chain(out, chain);
    std::cerr << "wrote " << chain.size() << " observations to " << out << "\n";
    return 0;
}

struct FitArgs {
    fs::path chain;
    fs::path config;
    fs::path trace;
    fs::path metrics = "fit_metrics.csv";
    fs::path params_out;
    std::optional<std::size_t> delta;
    std::optional<std::uint64_t> seed;
    std::size_t trace_every = 100;
};

int run_fit(const FitArgs& a) {
    const auto cfg = ohmm::load_config(a.config);
    const auto chain = ohmm::io::load_chain(a.chain);
    const std::size_t delta = a.delta.value_or(cfg.minibatch_sizes.empty() ? 200 : cfg.minibatch_sizes.front());
    const std::uint64_t seed = a.seed.value_or(cfg.seeds.front());
    const std::size_t prefix = cfg.kmeans_prefix == 0 ? delta : cfg.kmeans_prefix;
    if (delta < 2 || prefix > chain.size())
        throw ohmm::InvalidArgument("minibatch size does not fit the chain length");
    if (!(chain.observations.front().kind() == cfg.true_params.kind()))
        throw ohmm::InvalidArgument("chain manifold differs from the configured parameters");

    ohmm::KMeansOptions km = cfg.kmeans;
    km.seed = seed;
    std::optional<ohmm::io::TraceWriter> trace;
    ohmm::StepObserver observer;
    if (!a.trace.empty()) {
        trace.emplace(a.trace, a.trace_every);
        observer = [&](const ohmm::StepRecord& r) { (*trace)(r); };
    }
    const auto fit = ohmm::fit_stream(chain.observations, cfg.true_params.n_states(), prefix, delta, km, cfg.init,
                                      cfg.online, observer);

    ohmm::CellResult cell;
    cell.delta = delta;
    cell.seed = seed;
    ohmm::score_cell(cell, fit, chain.states, cfg.true_params);
    cell.ok = true;
    ohmm::ExperimentResult result;
    result.cells.push_back(cell);
    ohmm::io::write_text(a.metrics, ohmm::metrics_csv(result));
    if (!a.params_out.empty()) ohmm::io::save_params(a.params_out, fit.params);
    std::cout << ohmm::metrics_csv(result);
    return 0;
}

int run_experiment_cmd(const fs::path& config, const std::optional<fs::path>& out_dir) {
    auto cfg = ohmm::load_config(config);
    if (out_dir) cfg.output_dir = *out_dir;
    const auto result = ohmm::run_experiment(cfg);
    ohmm::write_experiment(cfg, result);
    std::cout << ohmm::summary_csv(result);
    int failures = 0;
    for (const auto& c : result.cells)
        if (!c.ok) {
            ++failures;
            std::cerr << "cell delta=" << ohmm::delta_label(c.delta) << " seed=" << c.seed << " failed: " << c.error
                      << "\n";
        }
    std::cerr << "wrote " << (cfg.output_dir / cfg.metrics_file) << ", " << (cfg.output_dir / cfg.summary_file)
              << ", " << (cfg.output_dir / cfg.estimates_file) << "\n";
    return failures == 0 ? 0 : static_cast<int>(ohmm::ErrorKind::numerical);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online estimation of hidden Markov models with Riemannian Gaussian emissions"};
    app.require_subcommand(1);

    fs::path sim_params, sim_out;
    std::size_t sim_length = 10000;
    std::uint64_t sim_seed = 1;
    auto* sim = app.add_subcommand("simulate", "Sample a chain from a parameter file");
    sim->add_option("--params", sim_params, "HMM parameters (JSON)")->required();
    sim->add_option("--length", sim_length, "Chain length T");
    sim->add_option("--seed", sim_seed, "Random seed");
    sim->add_option("--out", sim_out, "Output chain CSV")->required();

    FitArgs fit_args;
    auto* fit = app.add_subcommand("fit", "Fit a chain CSV: K-means initialization then online fine-tuning");
    fit->add_option("--chain", fit_args.chain, "Chain CSV")->required();
    fit->add_option("--config", fit_args.config, "Experiment config (true parameters used for scoring)")->required();
    fit->add_option("--trace", fit_args.trace, "JSON-lines trace output");
    fit->add_option("--trace-every", fit_args.trace_every, "Steps between trace records");
    fit->add_option("--metrics", fit_args.metrics, "Metrics CSV output");
    fit->add_option("--params-out", fit_args.params_out, "Final parameter estimates (JSON)");
    fit->add_option("--delta", fit_args.delta, "Minibatch size (default: first configured)");
    fit->add_option("--seed", fit_args.seed, "K-means seed (default: first configured)");

    fs::path exp_config;
    std::optional<fs::path> exp_out;
    auto* exp = app.add_subcommand("experiment", "Run every (minibatch, seed) cell of a config");
    exp->add_option("--config", exp_config, "Experiment config")->required();
    exp->add_option("--out-dir", exp_out, "Override output.dir");

    fs::path plot_in, plot_out;
    auto* plot = app.add_subcommand("plot-data", "Scatter CSV of estimated and true centers");
    plot->add_option("--estimates", plot_in, "Estimates JSON from `experiment`")->required();
    plot->add_option("--out", plot_out, "Scatter CSV output")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ohmm::ErrorKind::invalid_argument);
    }

    try {
        if (*sim) return run_simulate(sim_params, sim_length, sim_seed, sim_out);
        if (*fit) return run_fit(fit_args);
        if (*exp) return run_experiment_cmd(exp_config, exp_out);
        if (*plot) {
            ohmm::emit_plot_data(plot_in, plot_out);
            return 0;
        }
    } catch (const ohmm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ohmm::ErrorKind::io);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ohmm::ErrorKind::numerical);
    }
    return 0;
}
