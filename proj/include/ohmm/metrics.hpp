#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"
#include "ohmm/manifold.hpp"

namespace ohmm {

/// label(t) = argmax_i gamma(t, i), lowest index on ties.
inline std::vector<int> decode_states(const Eigen::MatrixXd& gamma) {
    std::vector<int> out(static_cast<std::size_t>(gamma.rows()));
    for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < gamma.cols(); ++i)
            if (gamma(t, i) > gamma(t, best)) best = i;
        out[static_cast<std::size_t>(t)] = static_cast<int>(best);
    }
    return out;
}

struct Alignment {
    double accuracy = 0.0;
    /// permutation[estimated label] = true label
    std::vector<int> permutation;
};

/// Best agreement over all relabelings of the decoded sequence. Exhaustive in
/// N!, intended for the handful of states an HMM fit uses.
inline Alignment align_labels(std::span<const int> decoded, std::span<const int> truth, std::size_t n_states) {
    if (decoded.size() != truth.size()) throw InvalidArgument("accuracy: label sequences differ in length");
    if (decoded.empty()) throw InvalidArgument("accuracy: empty label sequences");
    const auto n = static_cast<int>(n_states);
    // confusion(i, j) = #{t : decoded = i, truth = j}
    Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(n, n);
    for (std::size_t t = 0; t < decoded.size(); ++t) {
        if (decoded[t] < 0 || decoded[t] >= n || truth[t] < 0 || truth[t] >= n)
            throw InvalidArgument("accuracy: label out of range");
        ++confusion(decoded[t], truth[t]);
    }
    std::vector<int> perm(n_states);
    std::iota(perm.begin(), perm.end(), 0);
    Alignment best;
    long best_hits = -1;
    do {
        long hits = 0;
        for (int i = 0; i < n; ++i) hits += confusion(i, perm[static_cast<std::size_t>(i)]);
        if (hits > best_hits) {
            best_hits = hits;
            best.permutation = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    best.accuracy = static_cast<double>(best_hits) / static_cast<double>(decoded.size());
    return best;
}

inline double accuracy(std::span<const int> decoded, std::span<const int> truth, std::size_t n_states) {
    return align_labels(decoded, truth, n_states).accuracy;
}

/// Relabels an estimated transition matrix into the true state order.
inline Eigen::MatrixXd align_transition(const Eigen::MatrixXd& estimate, std::span<const int> permutation) {
    const auto n = estimate.rows();
    if (static_cast<Eigen::Index>(permutation.size()) != n) throw InvalidArgument("permutation size mismatch");
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) out(permutation[i], permutation[j]) = estimate(i, j);
    return out;
}

/// ||estimate - truth||_F after relabeling the estimate by permutation
/// (identity when empty).
inline double transition_rmse(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth,
                              std::span<const int> permutation = {}) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw InvalidArgument("transition_rmse: shape mismatch");
    if (permutation.empty()) return (estimate - truth).norm();
    return (align_transition(estimate, permutation) - truth).norm();
}

/// Puts estimated centers into true-state order.
inline std::vector<ManifoldPoint> align_centers(const std::vector<ManifoldPoint>& centers,
                                                std::span<const int> permutation) {
    std::vector<ManifoldPoint> out(centers);
    for (std::size_t i = 0; i < centers.size(); ++i) out[static_cast<std::size_t>(permutation[i])] = centers[i];
    return out;
}

inline double median(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace ohmm
