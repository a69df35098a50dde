#pragma once

// Riemannian Gaussian distributions p(y; c, sigma) = exp(-d^2(y, c) / 2 sigma^2) / Z(sigma).
// Normalizing constants are available for the Poincare disk only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "ohmm/error.hpp"
#include "ohmm/manifold.hpp"
#include "ohmm/rng.hpp"

namespace ohmm {

namespace gaussian_limits {
/// Bracket used when inverting delta(sigma).
inline constexpr double sigma_min = 1e-3;
inline constexpr double sigma_max = 20.0;
inline constexpr int bisection_steps = 60;
inline constexpr int cdf_knots = 4096;
} // namespace gaussian_limits

namespace detail {

inline void require_disk_normalizer(const ManifoldKind& kind) {
    if (!kind.is_disk())
        throw InvalidArgument("normalizing constant not available for manifold kind " + kind.name());
}

inline void require_positive_sigma(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw InvalidArgument("sigma must be positive and finite, got " + std::to_string(sigma));
}

} // namespace detail

/// log Z(sigma), Z(sigma) = 2 pi sqrt(pi/2) sigma exp(sigma^2/2) erf(sigma/sqrt 2).
inline double log_normalizer(double sigma, const ManifoldKind& kind) {
    detail::require_disk_normalizer(kind);
    detail::require_positive_sigma(sigma);
    constexpr double log_prefactor = 1.8378770664093453 /* log 2pi */ + 0.22579135264472744 /* log sqrt(pi/2) */;
    return log_prefactor + std::log(sigma) + 0.5 * sigma * sigma + std::log(std::erf(sigma / std::numbers::sqrt2));
}

/// delta = d log Z / d eta with eta = -1/(2 sigma^2); equals E[d^2(y, c)].
/// Closed form: sigma^2 + sigma^4 + sigma^3 sqrt(2/pi) exp(-sigma^2/2) / erf(sigma/sqrt 2).
inline double delta_from_sigma(double sigma, const ManifoldKind& kind) {
    detail::require_disk_normalizer(kind);
    detail::require_positive_sigma(sigma);
    const double s2 = sigma * sigma;
    const double ratio = std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * s2) /
                         std::erf(sigma / std::numbers::sqrt2);
    return s2 + s2 * s2 + s2 * sigma * ratio;
}

/// Smallest delta the inversion supports, delta(1e-3).
inline double delta_floor(const ManifoldKind& kind) {
    return delta_from_sigma(gaussian_limits::sigma_min, kind);
}

/// Inverse of delta_from_sigma by bisection on [1e-3, 20].
/// Throws NumericalError when delta falls outside the bracket's image.
inline double sigma_from_delta(double delta, const ManifoldKind& kind) {
    detail::require_disk_normalizer(kind);
    double lo = gaussian_limits::sigma_min;
    double hi = gaussian_limits::sigma_max;
    const double dlo = delta_from_sigma(lo, kind);
    const double dhi = delta_from_sigma(hi, kind);
    if (!(delta >= dlo && delta <= dhi))
        throw NumericalError("delta " + std::to_string(delta) + " outside supported range [" +
                             std::to_string(dlo) + ", " + std::to_string(dhi) + "]");
    for (int i = 0; i < gaussian_limits::bisection_steps; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (delta_from_sigma(mid, kind) < delta)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Emission component. sigma and delta are kept consistent by the factories.
struct RiemannianGaussian {
    ManifoldPoint center;
    double sigma;
    double delta;

    static RiemannianGaussian from_sigma(ManifoldPoint center, double sigma) {
        const double delta = delta_from_sigma(sigma, center.kind());
        return {std::move(center), sigma, delta};
    }

    static RiemannianGaussian from_delta(ManifoldPoint center, double delta) {
        const double sigma = sigma_from_delta(delta, center.kind());
        return {std::move(center), sigma, delta_from_sigma(sigma, center.kind())};
    }

    ManifoldKind kind() const { return center.kind(); }
};

/// log p(y; c, sigma) = -d^2(y, c) / (2 sigma^2) - log Z(sigma).
inline double log_density(const RiemannianGaussian& g, const ManifoldPoint& y) {
    const double d2 = squared_distance(y, g.center);
    return -d2 / (2.0 * g.sigma * g.sigma) - log_normalizer(g.sigma, g.kind());
}

/// Distribution of r = d(y, c) on the disk: density proportional to
/// exp(-r^2 / 2 sigma^2) sinh r. Inverse-CDF sampling from a 4096-knot
/// monotone table, refined by safeguarded Newton on the closed-form CDF.
class RadialDistribution {
public:
    explicit RadialDistribution(double sigma) : sigma_(sigma) {
        detail::require_positive_sigma(sigma);
        const double s = sigma / std::numbers::sqrt2;
        erf_s_ = std::erf(s);
        log_norm_ = 0.5 * std::log(std::numbers::pi / 2.0) + std::log(sigma) + 0.5 * sigma * sigma +
                    std::log(erf_s_);
        // The log-density -r^2/2sigma^2 + r peaks at sigma^2 and is ~e^-72 below
        // its peak at sigma^2 + 12 sigma.
        upper_ = sigma * sigma + 12.0 * sigma;
        const int n = gaussian_limits::cdf_knots;
        knots_.resize(n);
        cdf_.resize(n);
        for (int k = 0; k < n; ++k) {
            knots_[k] = upper_ * static_cast<double>(k) / (n - 1);
            cdf_[k] = cdf(knots_[k]);
        }
        cdf_.front() = 0.0;
        for (int k = 1; k < n; ++k) cdf_[k] = std::max(cdf_[k], cdf_[k - 1]);
    }

    double sigma() const { return sigma_; }
    double upper() const { return upper_; }

    double cdf(double r) const {
        if (r <= 0.0) return 0.0;
        const double a = sigma_ * std::numbers::sqrt2;
        const double s2 = sigma_ * sigma_;
        const double v = (2.0 * erf_s_ + std::erf((r - s2) / a) - std::erf((r + s2) / a)) / (2.0 * erf_s_);
        return std::clamp(v, 0.0, 1.0);
    }

    double pdf(double r) const {
        if (r <= 0.0) return 0.0;
        const double log_sinh = r + std::log1p(-std::exp(-2.0 * r)) - std::numbers::ln2;
        return std::exp(-r * r / (2.0 * sigma_ * sigma_) + log_sinh - log_norm_);
    }

    double quantile(double u) const {
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        if (it == cdf_.end()) return upper_;
        const auto k = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
        double lo = knots_[k - 1];
        double hi = knots_[k];
        const double span = cdf_[k] - cdf_[k - 1];
        double r = span > 0.0 ? lo + (hi - lo) * (u - cdf_[k - 1]) / span : 0.5 * (lo + hi);
        for (int i = 0; i < 60; ++i) {
            const double f = cdf(r) - u;
            if (f > 0.0)
                hi = r;
            else
                lo = r;
            const double dens = pdf(r);
            double next = dens > 0.0 ? r - f / dens : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::abs(next - r) <= 1e-15 * (1.0 + r) || hi - lo <= 1e-15 * (1.0 + hi)) return next;
            r = next;
        }
        return r;
    }

private:
    double sigma_;
    double erf_s_ = 0.0;
    double log_norm_ = 0.0;
    double upper_ = 0.0;
    std::vector<double> knots_;
    std::vector<double> cdf_;
};

/// Shared immutable radial tables, one per sigma.
inline std::shared_ptr<const RadialDistribution> radial_distribution(double sigma) {
    static std::mutex mutex;
    static std::map<std::uint64_t, std::shared_ptr<const RadialDistribution>> cache;
    std::uint64_t key = 0;
    std::memcpy(&key, &sigma, sizeof key);
    std::lock_guard lock(mutex);
    auto& slot = cache[key];
    if (!slot) slot = std::make_shared<const RadialDistribution>(sigma);
    return slot;
}

/// One draw in geodesic polar coordinates around the center; consumes two
/// uniforms from rng.
inline ManifoldPoint sample_one(const RiemannianGaussian& g, CounterRng& rng) {
    detail::require_disk_normalizer(g.kind());
    const auto radial = radial_distribution(g.sigma);
    const double r = radial->quantile(rng.uniform_open());
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    const Complex at_origin = std::polar(std::tanh(0.5 * r), theta);
    return translate_to(g.center, ManifoldPoint::disk(at_origin));
}

/// n i.i.d. draws; deterministic in seed.
inline std::vector<ManifoldPoint> sample_gaussian(const RiemannianGaussian& g, std::uint64_t seed, std::size_t n) {
    detail::require_disk_normalizer(g.kind());
    std::vector<ManifoldPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = CounterRng::at(seed, Stream::sampling, i);
        out.push_back(sample_one(g, rng));
    }
    return out;
}

} // namespace ohmm
