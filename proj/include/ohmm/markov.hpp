#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"
#include "ohmm/gaussian.hpp"
#include "ohmm/manifold.hpp"
#include "ohmm/rng.hpp"

namespace ohmm {

/// lambda = (A, pi, components). States are 0-based here; file formats and
/// reports use 1-based labels.
struct HmmParams {
    Eigen::MatrixXd transition; ///< A(i, j) = P(s_{t+1} = j | s_t = i)
    Eigen::VectorXd initial;    ///< pi(i) = P(s_1 = i)
    std::vector<RiemannianGaussian> components;

    std::size_t n_states() const { return components.size(); }
    ManifoldKind kind() const { return components.front().kind(); }
};

struct ParamViolation {
    enum class Field { transition, initial, component, shape };
    Field field;
    int index; ///< 0-based row / entry / component, -1 when not applicable
    std::string message;
};

inline constexpr double stochastic_tolerance = 1e-9;

/// All invariant violations of params; empty when valid.
inline std::vector<ParamViolation> validate(const HmmParams& p) {
    using F = ParamViolation::Field;
    std::vector<ParamViolation> out;
    const auto n = static_cast<Eigen::Index>(p.components.size());
    if (n == 0) {
        out.push_back({F::shape, -1, "no components"});
        return out;
    }
    if (p.transition.rows() != n || p.transition.cols() != n) {
        out.push_back({F::shape, -1, "transition matrix is not N x N"});
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            bool bad_entry = false;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double a = p.transition(i, j);
                if (!(a >= 0.0 && a <= 1.0)) bad_entry = true;
            }
            if (bad_entry)
                out.push_back({F::transition, static_cast<int>(i),
                               "transition row " + std::to_string(i + 1) + " has entries outside [0, 1]"});
            const double sum = p.transition.row(i).sum();
            if (!(std::abs(sum - 1.0) <= stochastic_tolerance)) {
                std::ostringstream msg;
                msg << "transition row " << i + 1 << " sums to " << sum;
                out.push_back({F::transition, static_cast<int>(i), msg.str()});
            }
        }
    }
    if (p.initial.size() != n) {
        out.push_back({F::shape, -1, "initial distribution length differs from N"});
    } else {
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(p.initial(i) >= 0.0 && p.initial(i) <= 1.0))
                out.push_back({F::initial, static_cast<int>(i),
                               "initial entry " + std::to_string(i + 1) + " outside [0, 1]"});
        const double sum = p.initial.sum();
        if (!(std::abs(sum - 1.0) <= stochastic_tolerance)) {
            std::ostringstream msg;
            msg << "initial distribution sums to " << sum;
            out.push_back({F::initial, -1, msg.str()});
        }
    }
    const ManifoldKind kind = p.components.front().kind();
    for (std::size_t i = 0; i < p.components.size(); ++i) {
        const auto& c = p.components[i];
        const auto idx = static_cast<int>(i);
        if (!(c.kind() == kind))
            out.push_back({F::component, idx, "component " + std::to_string(i + 1) + " has a different manifold kind"});
        if (!(c.sigma > 0.0) || !std::isfinite(c.sigma))
            out.push_back({F::component, idx, "component " + std::to_string(i + 1) + " has non-positive sigma"});
        if (!(c.delta > 0.0) || !std::isfinite(c.delta))
            out.push_back({F::component, idx, "component " + std::to_string(i + 1) + " has non-positive delta"});
    }
    return out;
}

/// Throws InvalidArgument listing every violation.
inline void require_valid(const HmmParams& p) {
    const auto v = validate(p);
    if (v.empty()) return;
    std::string msg = "invalid HMM parameters:";
    for (const auto& e : v) msg += " " + e.message + ";";
    throw InvalidArgument(msg);
}

struct ChainSample {
    std::vector<int> states; ///< 0-based
    std::vector<ManifoldPoint> observations;

    std::size_t size() const { return states.size(); }
};

namespace detail {

inline int draw_categorical(const auto& probs, double u) {
    double acc = 0.0;
    const auto n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
        acc += probs(i);
        if (u < acc) return i;
    }
    // u landed in the rounding gap above the cumulative sum: last non-zero entry.
    for (int i = n - 1; i >= 0; --i)
        if (probs(i) > 0.0) return i;
    return n - 1;
}

} // namespace detail

/// s_1 ~ pi, s_{t+1} ~ A(s_t, .), y_t ~ component s_t. Each time slot draws
/// from its own counter range, so a longer chain extends a shorter one.
inline ChainSample simulate_chain(const HmmParams& params, std::size_t length, std::uint64_t seed) {
    require_valid(params);
    if (length == 0) throw InvalidArgument("chain length must be at least 1");
    ChainSample out;
    out.states.reserve(length);
    out.observations.reserve(length);
    int s = 0;
    for (std::size_t t = 0; t < length; ++t) {
        auto chain_rng = CounterRng::at(seed, Stream::chain, t);
        const double u = chain_rng.uniform();
        if (t == 0)
            s = detail::draw_categorical(params.initial, u);
        else
            s = detail::draw_categorical(params.transition.row(s), u);
        out.states.push_back(s);
    }
    for (std::size_t t = 0; t < length; ++t) {
        auto emission_rng = CounterRng::at(seed, Stream::emission, t);
        out.observations.push_back(sample_one(params.components[out.states[t]], emission_rng));
    }
    return out;
}

/// Observations for a fixed state sequence, using the emission stream of seed.
inline std::vector<ManifoldPoint> simulate_emissions(const HmmParams& params, const std::vector<int>& states,
                                                     std::uint64_t seed) {
    std::vector<ManifoldPoint> out;
    out.reserve(states.size());
    for (std::size_t t = 0; t < states.size(); ++t) {
        auto rng = CounterRng::at(seed, Stream::emission, t);
        out.push_back(sample_one(params.components.at(states[t]), rng));
    }
    return out;
}

} // namespace ohmm
