#pragma once

// Initialization phase: Riemannian K-means (Lloyd iterations with Karcher
// means) on a data prefix, transition counting, dispersion estimates, and
// seeding of the online filter's memory from those estimates.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"
#include "ohmm/gaussian.hpp"
#include "ohmm/manifold.hpp"
#include "ohmm/markov.hpp"
#include "ohmm/online.hpp"
#include "ohmm/rng.hpp"

namespace ohmm {

enum class KMeansSeeding {
    plus_plus, ///< D^2-weighted sampling (k-means++)
    maximin,   ///< greedy farthest point from a random first point
};

struct KMeansOptions {
    int max_iter = 100;
    double tol = 1e-10; ///< stop when inertia improves by less than this
    std::uint64_t seed = 0;
    KMeansSeeding seeding = KMeansSeeding::plus_plus;
    int n_init = 10; ///< independent seedings; the lowest final inertia wins
};

struct KMeansResult {
    std::vector<int> assignments; ///< 0-based cluster labels
    std::vector<ManifoldPoint> centers;
    double inertia = 0.0;
    std::vector<double> inertia_history; ///< after every assignment step
    int iterations = 0;
};

namespace detail {

inline std::size_t nearest_center(const ManifoldPoint& y, const std::vector<ManifoldPoint>& centers, double* d2_out) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d2 = squared_distance(y, centers[c]);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = c;
        }
    }
    if (d2_out) *d2_out = best_d2;
    return best;
}

/// Greedy farthest-point seeding from a random first point.
inline std::vector<ManifoldPoint> maximin_seeds(std::span<const ManifoldPoint> data, std::size_t k, CounterRng& rng) {
    const auto first = static_cast<std::size_t>(rng.uniform() * static_cast<double>(data.size()));
    std::vector<ManifoldPoint> centers{data[std::min(first, data.size() - 1)]};
    std::vector<double> nearest(data.size(), std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        std::size_t far = 0;
        double far_d2 = -1.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(data[i], centers.back()));
            if (nearest[i] > far_d2) {
                far_d2 = nearest[i];
                far = i;
            }
        }
        if (!(far_d2 > 0.0)) throw InvalidArgument("kmeans: fewer distinct points than clusters");
        centers.push_back(data[far]);
    }
    return centers;
}

/// k-means++: each further seed drawn with probability proportional to the
/// squared distance to the nearest seed chosen so far.
inline std::vector<ManifoldPoint> plus_plus_seeds(std::span<const ManifoldPoint> data, std::size_t k, CounterRng& rng) {
    const auto first = static_cast<std::size_t>(rng.uniform() * static_cast<double>(data.size()));
    std::vector<ManifoldPoint> centers{data[std::min(first, data.size() - 1)]};
    std::vector<double> nearest(data.size(), std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(data[i], centers.back()));
            total += nearest[i];
        }
        if (!(total > 0.0)) throw InvalidArgument("kmeans: fewer distinct points than clusters");
        const double u = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = data.size();
        for (std::size_t i = 0; i < data.size(); ++i) {
            acc += nearest[i];
            if (u < acc && nearest[i] > 0.0) {
                pick = i;
                break;
            }
        }
        if (pick == data.size())
            for (std::size_t i = data.size(); i-- > 0;)
                if (nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
        centers.push_back(data[pick]);
    }
    return centers;
}

} // namespace detail

/// Lloyd iterations from the given centers.
inline KMeansResult kmeans_refine(std::span<const ManifoldPoint> data, std::vector<ManifoldPoint> centers,
                                  const KMeansOptions& opt = {}) {
    const std::size_t k = centers.size();
    if (k == 0) throw InvalidArgument("kmeans: need at least one cluster");
    if (data.size() < k) throw InvalidArgument("kmeans: fewer data points than clusters");
    KMeansResult res;
    res.assignments.assign(data.size(), 0);
    std::vector<double> d2(data.size(), 0.0);
    double previous = std::numeric_limits<double>::infinity();
    for (int it = 0; it < std::max(opt.max_iter, 1); ++it) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            res.assignments[i] = static_cast<int>(detail::nearest_center(data[i], centers, &d2[i]));
            inertia += d2[i];
        }
        // An empty cluster takes over the point farthest from its own center.
        std::vector<std::size_t> counts(k, 0);
        for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 0; i < data.size(); ++i)
                if (counts[static_cast<std::size_t>(res.assignments[i])] > 1 && d2[i] > d2[far]) far = i;
            if (counts[static_cast<std::size_t>(res.assignments[far])] <= 1 || !(d2[far] > 0.0))
                throw InvalidArgument("kmeans: fewer distinct points than clusters");
            --counts[static_cast<std::size_t>(res.assignments[far])];
            res.assignments[far] = static_cast<int>(c);
            counts[c] = 1;
            inertia -= d2[far];
            d2[far] = 0.0;
            centers[c] = data[far];
        }
        res.inertia_history.push_back(inertia);
        res.iterations = it + 1;

        for (std::size_t c = 0; c < k; ++c) {
            std::vector<ManifoldPoint> members;
            for (std::size_t i = 0; i < data.size(); ++i)
                if (res.assignments[i] == static_cast<int>(c)) members.push_back(data[i]);
            centers[c] = karcher_mean(std::span<const ManifoldPoint>(members));
        }
        const bool converged = previous - inertia < opt.tol;
        previous = inertia;
        if (converged) break;
    }
    // Final inertia against the final centers.
    res.inertia = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        res.inertia += squared_distance(data[i], centers[static_cast<std::size_t>(res.assignments[i])]);
    res.centers = std::move(centers);
    return res;
}

/// Riemannian K-means: n_init seedings, each refined by Lloyd iterations;
/// returns the run with the lowest inertia. Deterministic in opt.seed.
inline KMeansResult kmeans_fit(std::span<const ManifoldPoint> data, std::size_t n_clusters, const KMeansOptions& opt = {}) {
    if (n_clusters == 0) throw InvalidArgument("kmeans: need at least one cluster");
    if (data.size() < n_clusters) throw InvalidArgument("kmeans: fewer data points than clusters");
    const ManifoldKind kind = data.front().kind();
    for (const auto& p : data)
        if (!(p.kind() == kind)) throw InvalidArgument("kmeans: mixed manifold kinds");
    std::optional<KMeansResult> best;
    for (int run = 0; run < std::max(opt.n_init, 1); ++run) {
        auto rng = CounterRng::at(opt.seed, Stream::kmeans, static_cast<std::uint64_t>(run));
        auto seeds = opt.seeding == KMeansSeeding::maximin ? detail::maximin_seeds(data, n_clusters, rng)
                                                           : detail::plus_plus_seeds(data, n_clusters, rng);
        KMeansResult r = kmeans_refine(data, std::move(seeds), opt);
        if (!best || r.inertia < best->inertia) best = std::move(r);
    }
    return std::move(*best);
}

/// Transition counts C(i, j) = #{t : l_t = i, l_{t+1} = j} plus pseudo_count,
/// normalized by row. Throws InvalidArgument on a row with no mass.
inline Eigen::MatrixXd count_transitions(std::span<const int> labels, std::size_t n_states, double pseudo_count) {
    const auto n = static_cast<Eigen::Index>(n_states);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Constant(n, n, pseudo_count);
    for (std::size_t t = 0; t + 1 < labels.size(); ++t) counts(labels[t], labels[t + 1]) += 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = counts.row(i).sum();
        if (!(s > 0.0)) throw InvalidArgument("cluster " + std::to_string(i + 1) + " has no outgoing transitions");
        counts.row(i) /= s;
    }
    return counts;
}

struct InitOptions {
    /// Added to every transition count and label count before normalizing.
    double pseudo_count = 0.5;
};

/// Parameters from a clustered prefix: counted transitions, cluster centers,
/// delta_i = mean squared distance to center i, sigma_i by inversion,
/// pi = smoothed label frequencies.
inline HmmParams estimate_initial_params(std::span<const ManifoldPoint> data, const KMeansResult& result,
                                         const InitOptions& opt = {}) {
    const std::size_t n = result.centers.size();
    if (result.assignments.size() != data.size())
        throw InvalidArgument("estimate_initial_params: labels and data differ in length");
    std::vector<std::size_t> counts(n, 0);
    std::vector<double> sum_d2(n, 0.0);
    for (std::size_t t = 0; t < data.size(); ++t) {
        const auto c = static_cast<std::size_t>(result.assignments[t]);
        if (c >= n) throw InvalidArgument("estimate_initial_params: label out of range");
        ++counts[c];
        sum_d2[c] += squared_distance(data[t], result.centers[c]);
    }
    std::string missing;
    for (std::size_t c = 0; c < n; ++c)
        if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c + 1);
    if (!missing.empty()) throw InvalidArgument("clusters without members: " + missing);

    HmmParams p;
    p.transition = count_transitions(result.assignments, n, opt.pseudo_count);
    p.initial.resize(static_cast<Eigen::Index>(n));
    const double total = static_cast<double>(data.size()) + opt.pseudo_count * static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
        p.initial(static_cast<Eigen::Index>(c)) = (static_cast<double>(counts[c]) + opt.pseudo_count) / total;
        const auto kind = result.centers[c].kind();
        const double delta = std::max(sum_d2[c] / static_cast<double>(counts[c]), delta_floor(kind));
        p.components.push_back(RiemannianGaussian::from_delta(result.centers[c], delta));
    }
    return p;
}

/// Filter memory for the window (the last observations of the prefix):
/// alpha recursion from pi, gamma sums from one backward sweep, k = window length.
inline FilterState seed_filter(const HmmParams& params, std::span<const ManifoldPoint> window) {
    require_valid(params);
    if (window.size() < 2) throw InvalidArgument("seed_filter needs a window of at least 2 observations");
    FilterState s;
    s.params = params;
    s.window_capacity = window.size();
    auto fw = initial_forward(params, window.front());
    s.alpha = fw.alpha;
    s.log_scale = fw.log_norm;
    s.k = 1;
    push_window(s, {window.front(), fw.alpha});
    for (std::size_t t = 1; t < window.size(); ++t) {
        fw = forward_step(s, window[t]);
        s.alpha = fw.alpha;
        s.log_scale += fw.log_norm;
        push_window(s, {window[t], fw.alpha});
        ++s.k;
    }
    s.gamma_cumsum = backward_window(s).gamma.colwise().sum().transpose();
    return s;
}

} // namespace ohmm
