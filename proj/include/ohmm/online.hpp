#pragma once

// Constant-memory stochastic-approximation estimator for HMMs with Riemannian
// Gaussian emissions. Each new observation runs one forward step, a backward
// sweep over the retained window of the last Delta observations, and the
// transition / center / dispersion updates.
//
// All forward/backward quantities are stored rescaled: every alpha, beta,
// gamma and zeta below is normalized per time step, and emission likelihoods
// are scaled per observation by their largest component. The smoothing ratios
// are invariant under both rescalings.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"
#include "ohmm/gaussian.hpp"
#include "ohmm/manifold.hpp"
#include "ohmm/markov.hpp"

namespace ohmm {

struct OnlineOptions {
    /// delta step size is k^-step_exponent.
    double step_exponent = 0.5;
    /// Lower clip applied to transition entries after each update.
    double transition_floor = 1e-6;
    /// false: filter only, parameters frozen (the "K-means only" baseline).
    bool adapt = true;
};

struct WindowEntry {
    ManifoldPoint y;
    Eigen::VectorXd alpha; ///< normalized forward vector at this observation
};

/// The estimator's entire memory: O(Delta * N) regardless of stream length.
struct FilterState {
    HmmParams params;
    Eigen::VectorXd alpha;        ///< normalized alpha at the newest observation
    std::deque<WindowEntry> window;
    std::size_t window_capacity = 0; ///< Delta
    Eigen::VectorXd gamma_cumsum; ///< sum over the window of gamma_{t|k}(i)
    std::size_t k = 0;            ///< observations absorbed so far
    double log_scale = 0.0;       ///< log-likelihood accumulated by the forward normalizers
    std::size_t peak_retained = 0; ///< instrumentation: max window occupancy ever seen

    std::size_t n_states() const { return params.n_states(); }
};

/// Backward-sweep output for the current window (rows indexed by window position).
struct SmoothingSlice {
    Eigen::MatrixXd beta;     ///< Delta x N, each row normalized
    Eigen::MatrixXd gamma;    ///< Delta x N, gamma_{t|k}
    Eigen::MatrixXd zeta;     ///< N x N, newest transition (k-1, k) given y_1..y_k
    Eigen::MatrixXd zeta_sum; ///< N x N, sum of zeta over the window's transitions
    Eigen::MatrixXd mu;       ///< mu(i, j) = zeta_sum(i, j) / A(i, j)^2
    Eigen::MatrixXd g;        ///< g(i, j) = zeta(i, j) / A(i, j)
};

/// Per-step cache of what the emission densities need from params.
class EmissionModel {
public:
    explicit EmissionModel(const HmmParams& params) : params_(&params) {
        const auto n = params.n_states();
        log_norm_.resize(n);
        inv_two_var_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& c = params.components[j];
            log_norm_[j] = log_normalizer(c.sigma, c.kind());
            inv_two_var_[j] = 1.0 / (2.0 * c.sigma * c.sigma);
        }
    }

    Eigen::VectorXd log_densities(const ManifoldPoint& y) const {
        const auto n = params_->n_states();
        Eigen::VectorXd out(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j)
            out(static_cast<Eigen::Index>(j)) =
                -squared_distance(y, params_->components[j].center) * inv_two_var_[j] - log_norm_[j];
        return out;
    }

    /// Densities divided by their maximum, written into out; returns the log
    /// of that maximum. Throws NumericalError when every density underflows.
    template <class Row>
    double scaled_densities_into(const ManifoldPoint& y, Row&& out) const {
        const auto n = static_cast<Eigen::Index>(params_->n_states());
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto jj = static_cast<std::size_t>(j);
            out(j) = -squared_distance(y, params_->components[jj].center) * inv_two_var_[jj] - log_norm_[jj];
            m = std::max(m, out(j));
        }
        if (!(m > std::log(DBL_MIN)))
            throw NumericalError("degenerate emission: every component density underflows");
        for (Eigen::Index j = 0; j < n; ++j) out(j) = std::exp(out(j) - m);
        return m;
    }

    Eigen::VectorXd scaled_densities(const ManifoldPoint& y, double* log_max = nullptr) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(params_->n_states()));
        const double m = scaled_densities_into(y, out);
        if (log_max) *log_max = m;
        return out;
    }

private:
    const HmmParams* params_;
    std::vector<double> log_norm_;
    std::vector<double> inv_two_var_;
};

struct ForwardResult {
    Eigen::VectorXd alpha; ///< normalized
    double log_norm;       ///< log of the dropped normalizer
};

/// alpha_new proportional to (alpha^T A) .* p(y), normalized.
inline ForwardResult forward_step(const FilterState& state, const ManifoldPoint& y) {
    const EmissionModel em(state.params);
    double log_max = 0.0;
    const Eigen::VectorXd p = em.scaled_densities(y, &log_max);
    Eigen::VectorXd a = (state.params.transition.transpose() * state.alpha).cwiseProduct(p);
    const double s = a.sum();
    if (!(s > 0.0) || !std::isfinite(s))
        throw NumericalError("degenerate emission: forward vector vanished at k = " + std::to_string(state.k + 1));
    return {a / s, std::log(s) + log_max};
}

/// First forward vector alpha_1 proportional to pi .* p(y_1).
inline ForwardResult initial_forward(const HmmParams& params, const ManifoldPoint& y) {
    const EmissionModel em(params);
    double log_max = 0.0;
    const Eigen::VectorXd p = em.scaled_densities(y, &log_max);
    Eigen::VectorXd a = params.initial.cwiseProduct(p);
    const double s = a.sum();
    if (!(s > 0.0) || !std::isfinite(s))
        throw NumericalError("degenerate emission: initial forward vector vanished");
    return {a / s, std::log(s) + log_max};
}

/// Backward recursion beta_t = A P(t+1) beta_{t+1} over the window, then
/// gamma_t proportional to alpha_t .* beta_t and
/// zeta_t(i, j) proportional to alpha_t(i) A(i, j) p_j(y_{t+1}) beta_{t+1}(j).
inline SmoothingSlice backward_window(const FilterState& state) {
    const auto& A = state.params.transition;
    const auto n = A.rows();
    const auto len = static_cast<Eigen::Index>(state.window.size());
    if (len == 0) throw InvalidArgument("backward_window on an empty window");

    const EmissionModel em(state.params);
    Eigen::MatrixXd emis(len, n);
    for (Eigen::Index t = 0; t < len; ++t)
        em.scaled_densities_into(state.window[static_cast<std::size_t>(t)].y, emis.row(t));

    SmoothingSlice s;
    s.beta.resize(len, n);
    s.gamma.resize(len, n);
    s.beta.row(len - 1).setConstant(1.0 / static_cast<double>(n));
    for (Eigen::Index t = len - 2; t >= 0; --t) {
        Eigen::VectorXd b = A * emis.row(t + 1).transpose().cwiseProduct(s.beta.row(t + 1).transpose());
        const double sum = b.sum();
        if (!(sum > 0.0) || !std::isfinite(sum))
            throw NumericalError("zero denominator in backward recursion at window position " + std::to_string(t));
        s.beta.row(t) = (b / sum).transpose();
    }
    for (Eigen::Index t = 0; t < len; ++t) {
        const auto& alpha = state.window[static_cast<std::size_t>(t)].alpha;
        Eigen::VectorXd g = alpha.cwiseProduct(s.beta.row(t).transpose());
        const double sum = g.sum();
        if (!(sum > 0.0) || !std::isfinite(sum))
            throw NumericalError("zero denominator in gamma at window position " + std::to_string(t));
        s.gamma.row(t) = (g / sum).transpose();
    }

    s.zeta_sum = Eigen::MatrixXd::Zero(n, n);
    if (len == 1) {
        // No transition inside the window: use the one-step predictive pair.
        s.zeta = s.gamma.row(0).transpose().asDiagonal() * A;
        s.zeta_sum = s.zeta;
    } else {
        for (Eigen::Index t = 0; t + 1 < len; ++t) {
            const auto& alpha = state.window[static_cast<std::size_t>(t)].alpha;
            const Eigen::VectorXd right = emis.row(t + 1).transpose().cwiseProduct(s.beta.row(t + 1).transpose());
            Eigen::MatrixXd z = alpha.asDiagonal() * A * right.asDiagonal();
            const double sum = z.sum();
            if (!(sum > 0.0) || !std::isfinite(sum))
                throw NumericalError("zero denominator in zeta at window position " + std::to_string(t));
            z /= sum;
            s.zeta_sum += z;
            if (t + 2 == len) s.zeta = z;
        }
    }
    s.mu = s.zeta_sum.cwiseQuotient(A.cwiseProduct(A));
    s.g = s.zeta.cwiseQuotient(A);
    return s;
}

/// Per-row increment (1/mu_j)(g_j - sum_h (g_h/mu_h) / sum_h (1/mu_h)), before
/// projection. An entry with mu = 0 saw no transition mass anywhere in the
/// window (its score is zero too); it carries no information, keeps its value
/// and is left out of the row's centering. Rows stay stochastic either way.
inline Eigen::MatrixXd transition_increment(const SmoothingSlice& slice) {
    const auto n = slice.mu.rows();
    Eigen::MatrixXd inc = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double wsum = 0.0, gwsum = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double mu = slice.mu(i, j);
            const auto where = "(" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")";
            if (!(mu >= 0.0) || !std::isfinite(mu)) throw NumericalError("invalid mu at " + where);
            if (mu == 0.0) {
                if (slice.g(i, j) != 0.0) throw NumericalError("non-zero score with zero mu at " + where);
                continue;
            }
            wsum += 1.0 / mu;
            gwsum += slice.g(i, j) / mu;
        }
        if (wsum == 0.0) continue;
        const double centre = gwsum / wsum;
        for (Eigen::Index j = 0; j < n; ++j)
            if (slice.mu(i, j) > 0.0) inc(i, j) = (slice.g(i, j) - centre) / slice.mu(i, j);
    }
    return inc;
}

/// Clips entries to [floor, 1] and renormalizes each row.
inline Eigen::MatrixXd project_rows(Eigen::MatrixXd a, double floor) {
    a = a.cwiseMax(floor).cwiseMin(1.0);
    for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) /= a.row(i).sum();
    return a;
}

inline Eigen::MatrixXd update_transition(const FilterState& state, const SmoothingSlice& slice,
                                         const OnlineOptions& opt = {}) {
    const Eigen::MatrixXd raw = state.params.transition + transition_increment(slice);
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
        for (Eigen::Index j = 0; j < raw.cols(); ++j)
            if (!std::isfinite(raw(i, j)))
                throw NumericalError("non-finite transition update at (" + std::to_string(i + 1) + ", " +
                                     std::to_string(j + 1) + ")");
    return project_rows(raw, opt.transition_floor);
}

/// Geodesic step fraction tau_i = gamma_{k|k}(i) / sum_t gamma_{t|k}(i).
inline Eigen::VectorXd mean_step_fractions(const SmoothingSlice& slice) {
    const Eigen::VectorXd newest = slice.gamma.row(slice.gamma.rows() - 1).transpose();
    const Eigen::VectorXd cumsum = slice.gamma.colwise().sum().transpose();
    Eigen::VectorXd tau(newest.size());
    for (Eigen::Index i = 0; i < tau.size(); ++i) {
        if (newest(i) == 0.0) {
            tau(i) = 0.0;
            continue;
        }
        if (!(cumsum(i) > 0.0)) throw NumericalError("empty gamma sum for state " + std::to_string(i + 1));
        const double t = newest(i) / cumsum(i);
        if (!(t >= 0.0 && t <= 1.0 + 1e-12))
            throw NumericalError("mean step fraction outside [0, 1] for state " + std::to_string(i + 1));
        tau(i) = std::min(t, 1.0);
    }
    return tau;
}

/// c_i <- c_i #_tau_i y.
inline std::vector<ManifoldPoint> update_mean(const FilterState& state, const SmoothingSlice& slice,
                                              const ManifoldPoint& y) {
    const Eigen::VectorXd tau = mean_step_fractions(slice);
    std::vector<ManifoldPoint> centers;
    centers.reserve(state.n_states());
    for (std::size_t i = 0; i < state.n_states(); ++i)
        centers.push_back(geodesic_point(state.params.components[i].center, y, tau(static_cast<Eigen::Index>(i))));
    return centers;
}

/// delta + k^-exponent * gamma * (d2 - delta).
inline double delta_step(double delta, double gamma, double d2, std::size_t k, double exponent) {
    if (k < 1) throw InvalidArgument("delta update requires k >= 1");
    return delta + std::pow(static_cast<double>(k), -exponent) * gamma * (d2 - delta);
}

/// New dispersions from the pre-update centers; sigma refreshed by inversion,
/// delta clamped below at delta(1e-3).
inline std::vector<RiemannianGaussian> update_delta(const FilterState& state, const SmoothingSlice& slice,
                                                    const ManifoldPoint& y, const OnlineOptions& opt = {}) {
    const Eigen::VectorXd newest = slice.gamma.row(slice.gamma.rows() - 1).transpose();
    std::vector<RiemannianGaussian> out;
    out.reserve(state.n_states());
    for (std::size_t i = 0; i < state.n_states(); ++i) {
        const auto& c = state.params.components[i];
        const double d2 = squared_distance(y, c.center);
        double d = delta_step(c.delta, newest(static_cast<Eigen::Index>(i)), d2, state.k, opt.step_exponent);
        d = std::max(d, delta_floor(c.kind()));
        out.push_back(RiemannianGaussian::from_delta(c.center, d));
    }
    return out;
}

/// Appends an observation and its forward vector, evicting the oldest entry
/// first so occupancy never exceeds the capacity.
inline void push_window(FilterState& state, WindowEntry entry) {
    if (state.window.size() >= state.window_capacity) state.window.pop_front();
    state.window.push_back(std::move(entry));
    state.peak_retained = std::max(state.peak_retained, state.window.size());
}

/// Absorbs one observation. Returns the filtered posterior gamma_{k+1|k+1},
/// computed with the parameters in force before this step's update.
inline Eigen::VectorXd online_step(FilterState& state, const ManifoldPoint& y, const OnlineOptions& opt = {}) {
    auto fw = forward_step(state, y);
    state.alpha = fw.alpha;
    state.log_scale += fw.log_norm;
    push_window(state, {y, fw.alpha});
    if (opt.adapt) {
        const SmoothingSlice slice = backward_window(state);
        Eigen::MatrixXd transition = update_transition(state, slice, opt);
        std::vector<ManifoldPoint> centers = update_mean(state, slice, y);
        std::vector<RiemannianGaussian> dispersions = update_delta(state, slice, y, opt);
        state.gamma_cumsum = slice.gamma.colwise().sum().transpose();
        state.params.transition = std::move(transition);
        for (std::size_t i = 0; i < centers.size(); ++i) {
            state.params.components[i] = {std::move(centers[i]), dispersions[i].sigma, dispersions[i].delta};
        }
    }
    ++state.k;
    return fw.alpha;
}

struct StepRecord {
    std::size_t k;
    const HmmParams& params;
    const Eigen::VectorXd& gamma_filtered;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct OnlineResult {
    HmmParams params;
    Eigen::MatrixXd gamma_filtered; ///< one row per processed observation
    std::size_t peak_retained = 0;
};

/// Runs online_step over the stream. Memory retained by the filter stays at
/// the window capacity; only the returned gamma rows grow with the stream.
inline OnlineResult run_online(FilterState& state, std::span<const ManifoldPoint> stream,
                               const OnlineOptions& opt = {}, const StepObserver& observer = {}) {
    const auto n = static_cast<Eigen::Index>(state.n_states());
    OnlineResult out;
    out.gamma_filtered.resize(static_cast<Eigen::Index>(stream.size()), n);
    for (std::size_t t = 0; t < stream.size(); ++t) {
        const Eigen::VectorXd g = online_step(state, stream[t], opt);
        out.gamma_filtered.row(static_cast<Eigen::Index>(t)) = g.transpose();
        if (observer) observer(StepRecord{state.k, state.params, g});
    }
    out.params = state.params;
    out.peak_retained = state.peak_retained;
    return out;
}

} // namespace ohmm
