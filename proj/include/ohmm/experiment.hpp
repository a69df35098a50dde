#pragma once

// Experiment harness: simulate a chain, initialize by K-means on a prefix,
// fine-tune online over the rest, decode, and score against the truth.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ohmm/error.hpp"
#include "ohmm/io.hpp"
#include "ohmm/kmeans.hpp"
#include "ohmm/markov.hpp"
#include "ohmm/metrics.hpp"
#include "ohmm/online.hpp"

namespace ohmm {

struct ExperimentConfig {
    HmmParams true_params;
    std::size_t chain_length = 10000;
    std::vector<std::size_t> minibatch_sizes{200};
    std::vector<std::uint64_t> seeds{1};
    KMeansOptions kmeans;
    /// K-means prefix length; 0 means "the minibatch size".
    std::size_t kmeans_prefix = 0;
    bool kmeans_only = true;
    std::size_t kmeans_only_prefix = 1000;
    InitOptions init;
    OnlineOptions online;
    std::size_t workers = 0; ///< 0: hardware concurrency
    std::filesystem::path output_dir = "out";
    std::string metrics_file = "metrics.csv";
    std::string estimates_file = "estimates.json";
    std::string summary_file = "summary.csv";
};

/// Throws InvalidArgument on the first violated constraint.
inline void validate_config(const ExperimentConfig& c) {
    require_valid(c.true_params);
    if (c.chain_length < 2) throw InvalidArgument("chain.length must be at least 2");
    if (c.seeds.empty()) throw InvalidArgument("at least one seed is required");
    if (c.minibatch_sizes.empty() && !c.kmeans_only) throw InvalidArgument("nothing to run: no minibatch sizes");
    for (auto d : c.minibatch_sizes) {
        if (d < 2 || d > c.chain_length)
            throw InvalidArgument("minibatch size " + std::to_string(d) + " outside [2, chain.length]");
        if (c.kmeans_prefix != 0 && (c.kmeans_prefix < d || c.kmeans_prefix > c.chain_length))
            throw InvalidArgument("kmeans.prefix must lie in [minibatch, chain.length]");
    }
    if (c.kmeans_only && (c.kmeans_only_prefix < 2 || c.kmeans_only_prefix > c.chain_length))
        throw InvalidArgument("kmeans_only.prefix outside [2, chain.length]");
    if (!(c.online.step_exponent > 0.0)) throw InvalidArgument("online.step_exponent must be positive");
    if (!(c.online.transition_floor > 0.0 && c.online.transition_floor < 1.0))
        throw InvalidArgument("online.transition_floor must lie in (0, 1)");
}

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const auto v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<T>(v));
        } catch (const std::exception&) {
            throw InvalidArgument("config key " + key + ": '" + item + "' is not a non-negative integer");
        }
    }
    return out;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
    std::istringstream ss(text);
    T v{};
    ss >> std::boolalpha >> v;
    if (ss.fail() || !(ss >> std::ws).eof()) throw InvalidArgument("config key " + key + ": bad value '" + text + "'");
    return v;
}

} // namespace detail

/// Flat key=value config. Relative paths are resolved against base_dir.
/// Keys:
///   params               JSON parameter file (required)
///   chain.length         T
///   minibatch            comma-separated Delta values
///   seeds                comma-separated seeds
///   kmeans.max_iter, kmeans.tol, kmeans.prefix (0 = Delta), kmeans.pseudo_count
///   kmeans_only          true/false
///   kmeans_only.prefix   prefix for the frozen-parameter baseline
///   online.step_exponent, online.transition_floor
///   workers              0 = hardware concurrency
///   output.dir, output.metrics, output.estimates, output.summary
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    std::map<std::string, std::string> kv;
    for (const auto& [key, node] : tree) {
        if (!node.empty()) throw InvalidArgument("config: sections are not supported ([" + key + "])");
        kv[key] = node.data();
    }
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };

    ExperimentConfig c;
    if (auto m = take("manifold"); m && *m != "disk")
        throw InvalidArgument("config: only manifold=disk supports experiments (got " + *m + ")");
    const auto params = take("params");
    if (!params) throw InvalidArgument("config: missing key 'params'");
    c.true_params = io::load_params(resolve(*params));
    if (auto v = take("chain.length")) c.chain_length = detail::parse_scalar<std::size_t>("chain.length", *v);
    if (auto v = take("minibatch")) c.minibatch_sizes = detail::parse_list<std::size_t>("minibatch", *v);
    if (auto v = take("seeds")) c.seeds = detail::parse_list<std::uint64_t>("seeds", *v);
    if (auto v = take("kmeans.max_iter")) c.kmeans.max_iter = detail::parse_scalar<int>("kmeans.max_iter", *v);
    if (auto v = take("kmeans.tol")) c.kmeans.tol = detail::parse_scalar<double>("kmeans.tol", *v);
    if (auto v = take("kmeans.prefix")) c.kmeans_prefix = detail::parse_scalar<std::size_t>("kmeans.prefix", *v);
    if (auto v = take("kmeans.pseudo_count")) c.init.pseudo_count = detail::parse_scalar<double>("kmeans.pseudo_count", *v);
    if (auto v = take("kmeans_only")) c.kmeans_only = detail::parse_scalar<bool>("kmeans_only", *v);
    if (auto v = take("kmeans_only.prefix"))
        c.kmeans_only_prefix = detail::parse_scalar<std::size_t>("kmeans_only.prefix", *v);
    if (auto v = take("online.step_exponent"))
        c.online.step_exponent = detail::parse_scalar<double>("online.step_exponent", *v);
    if (auto v = take("online.transition_floor"))
        c.online.transition_floor = detail::parse_scalar<double>("online.transition_floor", *v);
    if (auto v = take("workers")) c.workers = detail::parse_scalar<std::size_t>("workers", *v);
    if (auto v = take("output.dir")) c.output_dir = resolve(*v);
    if (auto v = take("output.metrics")) c.metrics_file = *v;
    if (auto v = take("output.estimates")) c.estimates_file = *v;
    if (auto v = take("output.summary")) c.summary_file = *v;
    if (!kv.empty()) throw InvalidArgument("config: unknown key '" + kv.begin()->first + "'");
    validate_config(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(io::read_text(path), path.parent_path());
}

/// One (Delta, seed) cell. delta == 0 marks the K-means-only baseline.
struct CellResult {
    std::size_t delta = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    ErrorKind error_kind = ErrorKind::numerical;
    double accuracy = std::nan("");
    double runtime_s = 0.0;
    double init_s = 0.0;
    double finetune_s = 0.0;
    Eigen::MatrixXd transition;             ///< aligned to the true labels
    std::vector<ManifoldPoint> centers;     ///< aligned to the true labels
    std::vector<double> sigmas;             ///< aligned to the true labels
    double transition_rmse = std::nan("");
    std::size_t peak_retained = 0;
    std::size_t finetune_steps = 0;
};

struct FitOutput {
    HmmParams params;          ///< in the estimator's own label order
    std::vector<int> decoded;  ///< 0-based, estimator labels
    std::size_t peak_retained = 0;
    std::size_t finetune_steps = 0;
    double init_s = 0.0;
    double finetune_s = 0.0;
};

/// Initialization on the first `prefix` observations, filter seeded on the
/// last `window` of them, then online over the rest. With adapt = false the
/// K-means parameters stay frozen. Prefix labels before the window come from
/// K-means; all later labels are filtered argmax decodes.
inline FitOutput fit_stream(std::span<const ManifoldPoint> data, std::size_t n_states, std::size_t prefix,
                            std::size_t window, const KMeansOptions& km, const InitOptions& init,
                            const OnlineOptions& online, const StepObserver& observer = {}) {
    using clock = std::chrono::steady_clock;
    if (window < 2 || window > prefix || prefix > data.size())
        throw InvalidArgument("fit: need 2 <= window <= prefix <= stream length");
    FitOutput out;
    const auto t0 = clock::now();
    const auto head = data.first(prefix);
    const KMeansResult clusters = kmeans_fit(head, n_states, km);
    const HmmParams initial = estimate_initial_params(head, clusters, init);
    FilterState state = seed_filter(initial, head.last(window));
    const auto t1 = clock::now();

    out.decoded.reserve(data.size());
    for (std::size_t t = 0; t < prefix - window; ++t) out.decoded.push_back(clusters.assignments[t]);
    Eigen::MatrixXd seeded(static_cast<Eigen::Index>(window), static_cast<Eigen::Index>(n_states));
    for (std::size_t t = 0; t < window; ++t) seeded.row(static_cast<Eigen::Index>(t)) = state.window[t].alpha.transpose();
    for (int label : decode_states(seeded)) out.decoded.push_back(label);

    const OnlineResult run = run_online(state, data.subspan(prefix), online, observer);
    const auto t2 = clock::now();
    for (int label : decode_states(run.gamma_filtered)) out.decoded.push_back(label);

    out.params = run.params;
    out.peak_retained = run.peak_retained;
    out.finetune_steps = data.size() - prefix;
    out.init_s = std::chrono::duration<double>(t1 - t0).count();
    out.finetune_s = std::chrono::duration<double>(t2 - t1).count();
    return out;
}

/// Fills the scoring fields of cell from a fit against the true states.
inline void score_cell(CellResult& cell, const FitOutput& fit, std::span<const int> truth, const HmmParams& true_params) {
    const auto n = true_params.n_states();
    const Alignment al = align_labels(fit.decoded, truth, n);
    cell.accuracy = al.accuracy;
    cell.transition = align_transition(fit.params.transition, al.permutation);
    cell.transition_rmse = (cell.transition - true_params.transition).norm();
    std::vector<ManifoldPoint> centers;
    for (const auto& c : fit.params.components) centers.push_back(c.center);
    cell.centers = align_centers(centers, al.permutation);
    cell.sigmas.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) cell.sigmas[static_cast<std::size_t>(al.permutation[i])] = fit.params.components[i].sigma;
    cell.peak_retained = fit.peak_retained;
    cell.finetune_steps = fit.finetune_steps;
    cell.init_s = fit.init_s;
    cell.finetune_s = fit.finetune_s;
    cell.runtime_s = fit.init_s + fit.finetune_s;
}

/// delta == 0 runs the K-means-only baseline.
inline CellResult run_cell(const ExperimentConfig& cfg, std::size_t delta, std::uint64_t seed) {
    CellResult cell;
    cell.delta = delta;
    cell.seed = seed;
    try {
        const ChainSample chain = simulate_chain(cfg.true_params, cfg.chain_length, seed);
        KMeansOptions km = cfg.kmeans;
        km.seed = seed;
        const std::size_t n = cfg.true_params.n_states();
        FitOutput fit;
        if (delta == 0) {
            OnlineOptions frozen = cfg.online;
            frozen.adapt = false;
            fit = fit_stream(chain.observations, n, cfg.kmeans_only_prefix, cfg.kmeans_only_prefix, km, cfg.init, frozen);
        } else {
            const std::size_t prefix = cfg.kmeans_prefix == 0 ? delta : cfg.kmeans_prefix;
            fit = fit_stream(chain.observations, n, prefix, delta, km, cfg.init, cfg.online);
        }
        score_cell(cell, fit, chain.states, cfg.true_params);
        cell.ok = true;
    } catch (const Error& e) {
        cell.error = e.what();
        cell.error_kind = e.kind();
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
    return cell;
}

struct ExperimentResult {
    std::vector<CellResult> cells; ///< ordered by (delta, seed); K-means-only cells last
};

/// Runs every (Delta, seed) cell on a bounded worker pool; results are
/// ordered deterministically regardless of completion order.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
    auto sizes = cfg.minibatch_sizes;
    std::stable_sort(sizes.begin(), sizes.end());
    for (auto d : sizes)
        for (auto s : cfg.seeds) jobs.emplace_back(d, s);
    if (cfg.kmeans_only)
        for (auto s : cfg.seeds) jobs.emplace_back(0, s);

    ExperimentResult res;
    res.cells.resize(jobs.size());
    std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, jobs.size());
    std::atomic<std::size_t> next{0};
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t j = next++; j < jobs.size(); j = next++)
                    res.cells[j] = run_cell(cfg, jobs[j].first, jobs[j].second);
            });
    }
    return res;
}

inline std::string delta_label(std::size_t delta) { return delta == 0 ? std::string("kmeans") : std::to_string(delta); }

inline constexpr const char* metrics_header = "delta,seed,accuracy,runtime_s,a11,a22,a33,transition_rmse";

namespace detail {
inline std::string fmt_fixed(double v, int digits) {
    if (std::isnan(v)) return "nan";
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

inline double diag_or_nan(const Eigen::MatrixXd& a, Eigen::Index i) {
    return (a.rows() > i && a.cols() > i) ? a(i, i) : std::nan("");
}
} // namespace detail

/// Per-cell metrics; failed cells are written with nan scores.
inline std::string metrics_csv(const ExperimentResult& r) {
    std::ostringstream out;
    out << metrics_header << "\n";
    for (const auto& c : r.cells) {
        out << delta_label(c.delta) << "," << c.seed << "," << detail::fmt_fixed(c.accuracy, 6) << ","
            << detail::fmt_fixed(c.runtime_s, 4);
        for (Eigen::Index i = 0; i < 3; ++i) out << "," << detail::fmt_fixed(c.ok ? detail::diag_or_nan(c.transition, i) : std::nan(""), 6);
        out << "," << detail::fmt_fixed(c.transition_rmse, 6) << "\n";
    }
    return out.str();
}

/// Table-2 reference row for the EM baseline, transcribed, never recomputed.
struct ReferenceRow {
    const char* label;
    double accuracy, runtime_s, a11, a22, a33, rmse;
};
inline constexpr ReferenceRow em_reference{"EM (reference, transcribed from published table; not recomputed)",
                                           0.90, 2623.69, 0.31, 0.88, 0.96, 1.29};

/// Medians per Delta, plus the transcribed EM reference row.
inline std::string summary_csv(const ExperimentResult& r) {
    std::map<std::size_t, std::vector<const CellResult*>> groups;
    for (const auto& c : r.cells) groups[c.delta].push_back(&c);
    std::ostringstream out;
    out << "delta,runs,failures,median_accuracy,median_runtime_s,median_a11,median_a22,median_a33,median_transition_rmse\n";
    auto emit = [&](std::size_t delta, const std::vector<const CellResult*>& cells) {
        std::vector<double> acc, rt, a11, a22, a33, rmse;
        std::size_t failures = 0;
        for (const auto* c : cells) {
            if (!c->ok) {
                ++failures;
                continue;
            }
            acc.push_back(c->accuracy);
            rt.push_back(c->runtime_s);
            a11.push_back(detail::diag_or_nan(c->transition, 0));
            a22.push_back(detail::diag_or_nan(c->transition, 1));
            a33.push_back(detail::diag_or_nan(c->transition, 2));
            rmse.push_back(c->transition_rmse);
        }
        out << delta_label(delta) << "," << cells.size() << "," << failures << "," << detail::fmt_fixed(median(acc), 4)
            << "," << detail::fmt_fixed(median(rt), 4) << "," << detail::fmt_fixed(median(a11), 4) << ","
            << detail::fmt_fixed(median(a22), 4) << "," << detail::fmt_fixed(median(a33), 4) << ","
            << detail::fmt_fixed(median(rmse), 4) << "\n";
    };
    for (const auto& [delta, cells] : groups)
        if (delta != 0) emit(delta, cells);
    if (groups.count(0)) emit(0, groups[0]);
    const auto& em = em_reference;
    out << "\"" << em.label << "\",,," << detail::fmt_fixed(em.accuracy, 2) << "," << detail::fmt_fixed(em.runtime_s, 2)
        << "," << detail::fmt_fixed(em.a11, 2) << "," << detail::fmt_fixed(em.a22, 2) << ","
        << detail::fmt_fixed(em.a33, 2) << "," << detail::fmt_fixed(em.rmse, 2) << "\n";
    return out.str();
}

/// Final estimates per run (aligned to the true labels) for scatter plots.
inline io::json estimates_json(const ExperimentResult& r, const HmmParams& truth) {
    io::json true_centers = io::json::array();
    for (const auto& c : truth.components) true_centers.push_back(io::point_to_json(c.center));
    io::json runs = io::json::array();
    io::json failures = io::json::array();
    for (const auto& c : r.cells) {
        if (!c.ok) {
            failures.push_back({{"delta", delta_label(c.delta)}, {"seed", c.seed}, {"error", c.error}});
            continue;
        }
        io::json centers = io::json::array();
        for (const auto& p : c.centers) centers.push_back(io::point_to_json(p));
        runs.push_back({
            {"delta", delta_label(c.delta)},
            {"seed", c.seed},
            {"accuracy", c.accuracy},
            {"centers", centers},
            {"sigmas", c.sigmas},
            {"transition", io::matrix_to_json(c.transition)},
            {"transition_rmse", c.transition_rmse},
            {"init_s", c.init_s},
            {"finetune_s", c.finetune_s},
            {"finetune_steps", c.finetune_steps},
            {"peak_retained", c.peak_retained},
        });
    }
    return {
        {"manifold", io::kind_to_json(truth.kind())},
        {"true_centers", true_centers},
        {"true_transition", io::matrix_to_json(truth.transition)},
        {"runs", runs},
        {"failures", failures},
    };
}

inline void write_experiment(const ExperimentConfig& cfg, const ExperimentResult& r) {
    io::write_text(cfg.output_dir / cfg.metrics_file, metrics_csv(r));
    io::write_text(cfg.output_dir / cfg.summary_file, summary_csv(r));
    io::write_text(cfg.output_dir / cfg.estimates_file, estimates_json(r, cfg.true_params).dump(2) + "\n");
}

/// Scatter CSV: source,delta,seed,component,re,im with one row per estimated
/// center (source=estimate) and per true mean (source=truth).
inline std::string plot_data_csv(const io::json& dump) {
    try {
        if (dump.value("manifold", std::string("disk")) != "disk")
            throw InvalidArgument("plot data is produced for disk estimates only");
        const ManifoldKind kind = ManifoldKind::disk();
        std::ostringstream out;
        out << "source,delta,seed,component,re,im\n";
        for (const auto& run : dump.at("runs")) {
            const auto delta = run.at("delta").get<std::string>();
            const auto seed = run.at("seed").get<std::uint64_t>();
            std::size_t comp = 0;
            for (const auto& c : run.at("centers")) {
                const ManifoldPoint p = io::point_from_json(c, kind);
                out << "estimate," << delta << "," << seed << "," << ++comp << "," << io::format_double(p.as_disk().real())
                    << "," << io::format_double(p.as_disk().imag()) << "\n";
            }
        }
        std::size_t comp = 0;
        for (const auto& c : dump.at("true_centers")) {
            const ManifoldPoint p = io::point_from_json(c, kind);
            out << "truth,,," << ++comp << "," << io::format_double(p.as_disk().real()) << ","
                << io::format_double(p.as_disk().imag()) << "\n";
        }
        return out.str();
    } catch (const io::json::exception& e) {
        throw IoError(std::string("corrupt estimates dump: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("corrupt estimates dump: ") + e.what());
    }
}

inline void emit_plot_data(const std::filesystem::path& estimates, const std::filesystem::path& out) {
    io::write_text(out, plot_data_csv(io::read_json(estimates)));
}

} // namespace ohmm
