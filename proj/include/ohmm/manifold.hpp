#pragma once

// Geometry of the two Hadamard spaces used for observations: the Poincare
// disk (hyperbolic 2-space, curvature -1) and SPD(d) with the affine-invariant
// metric d^2(y, z) = tr[log(y^-1 z)^2].

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ohmm/error.hpp"

namespace ohmm {

using Complex = std::complex<double>;

struct ManifoldKind {
    enum class Tag { poincare_disk, spd };

    Tag tag = Tag::poincare_disk;
    int dim = 2; ///< matrix size for SPD; 2 (real dimension) for the disk

    static ManifoldKind disk() { return {Tag::poincare_disk, 2}; }
    static ManifoldKind spd(int d) {
        if (d < 1) throw InvalidArgument("SPD dimension must be positive");
        return {Tag::spd, d};
    }

    bool is_disk() const { return tag == Tag::poincare_disk; }
    bool is_spd() const { return tag == Tag::spd; }

    std::string name() const {
        return is_disk() ? std::string("disk") : "spd(" + std::to_string(dim) + ")";
    }

    friend bool operator==(const ManifoldKind&, const ManifoldKind&) = default;
};

namespace geometry {
/// Points closer than this to the unit circle are rejected.
inline constexpr double disk_boundary_margin = 1e-14;
inline constexpr double spd_symmetry_tol = 1e-10;
inline constexpr double spd_min_eigenvalue = 1e-12;
} // namespace geometry

/// A point of the Poincare disk or of SPD(d). Constructed only through the
/// validating factories, so every instance satisfies the manifold invariants.
class ManifoldPoint {
public:
    /// Throws InvalidArgument unless |z| < 1 - 1e-14 and z is finite.
    static ManifoldPoint disk(Complex z) {
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw InvalidArgument("disk point has non-finite coordinates");
        if (!(1.0 - std::abs(z) > geometry::disk_boundary_margin))
            throw InvalidArgument("disk point outside the open unit disk: |z| = " +
                                  std::to_string(std::abs(z)));
        return ManifoldPoint(z);
    }

    static ManifoldPoint disk(double re, double im) { return disk(Complex(re, im)); }

    /// Throws InvalidArgument unless m is square, finite, symmetric and
    /// positive definite within the module tolerances.
    static ManifoldPoint spd(const Eigen::MatrixXd& m) {
        if (m.rows() != m.cols() || m.rows() == 0)
            throw InvalidArgument("SPD point must be a non-empty square matrix");
        if (!m.allFinite()) throw InvalidArgument("SPD point has non-finite entries");
        const double norm = m.norm();
        if ((m - m.transpose()).norm() > geometry::spd_symmetry_tol * norm)
            throw InvalidArgument("SPD point is not symmetric");
        Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
        if (!(eig.eigenvalues().minCoeff() > geometry::spd_min_eigenvalue))
            throw InvalidArgument("SPD point is not positive definite");
        return ManifoldPoint(std::move(sym));
    }

    /// Origin of the kind: 0 on the disk, identity for SPD.
    static ManifoldPoint origin(const ManifoldKind& kind) {
        if (kind.is_disk()) return ManifoldPoint(Complex(0.0, 0.0));
        return ManifoldPoint(Eigen::MatrixXd(Eigen::MatrixXd::Identity(kind.dim, kind.dim)));
    }

    ManifoldKind kind() const {
        if (is_disk()) return ManifoldKind::disk();
        return ManifoldKind::spd(static_cast<int>(std::get<Eigen::MatrixXd>(value_).rows()));
    }

    bool is_disk() const { return std::holds_alternative<Complex>(value_); }
    bool is_spd() const { return !is_disk(); }

    Complex as_disk() const { return std::get<Complex>(value_); }
    const Eigen::MatrixXd& as_spd() const { return std::get<Eigen::MatrixXd>(value_); }

    // Factories for results of closed-form geometry; callers guarantee validity
    // up to rounding, so only cheap repairs are applied.
    static ManifoldPoint disk_trusted(Complex z) {
        const double r = std::abs(z);
        if (!(1.0 - r > geometry::disk_boundary_margin)) return disk(z);
        return ManifoldPoint(z);
    }
    static ManifoldPoint spd_trusted(const Eigen::MatrixXd& m) {
        return ManifoldPoint(Eigen::MatrixXd(0.5 * (m + m.transpose())));
    }

private:
    explicit ManifoldPoint(Complex z) : value_(z) {}
    explicit ManifoldPoint(Eigen::MatrixXd m) : value_(std::move(m)) {}

    std::variant<Complex, Eigen::MatrixXd> value_;
};

namespace detail {

inline void require_same_kind(const ManifoldPoint& a, const ManifoldPoint& b) {
    if (!(a.kind() == b.kind()))
        throw InvalidArgument("manifold kind mismatch: " + a.kind().name() + " vs " +
                              b.kind().name());
}

// Mobius map sending 0 to c.
inline Complex mobius_to(Complex c, Complex z) { return (z + c) / (1.0 + std::conj(c) * z); }
// Mobius map sending c to 0.
inline Complex mobius_from(Complex c, Complex z) { return (z - c) / (1.0 - std::conj(c) * z); }

inline double disk_distance(Complex x, Complex y) {
    const double num = std::abs(x - y);
    if (num == 0.0) return 0.0;
    const double den = std::abs(1.0 - std::conj(x) * y);
    const double r = num / den;
    const double ax = std::abs(x);
    const double ay = std::abs(y);
    // 1 - r^2 = (1-|x|^2)(1-|y|^2)/|1 - conj(x) y|^2, free of cancellation.
    const double one_minus_r2 = ((1.0 - ax) * (1.0 + ax)) * ((1.0 - ay) * (1.0 + ay)) / (den * den);
    return std::log((1.0 + r) * (1.0 + r) / one_minus_r2);
}

// log at the origin, with |result| equal to the hyperbolic distance.
inline Complex disk_log0(Complex w) {
    const double r = std::abs(w);
    if (r == 0.0) return {0.0, 0.0};
    return (2.0 * std::atanh(r) / r) * w;
}

inline Complex disk_exp0(Complex v) {
    const double n = std::abs(v);
    if (n == 0.0) return {0.0, 0.0};
    return (std::tanh(0.5 * n) / n) * v;
}

/// V f(Lambda) V^T for a symmetric matrix.
inline Eigen::MatrixXd sym_apply(const Eigen::MatrixXd& m, const std::function<double(double)>& f) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const auto& v = eig.eigenvectors();
    Eigen::VectorXd fl = eig.eigenvalues().unaryExpr(f);
    Eigen::MatrixXd out = v * fl.asDiagonal() * v.transpose();
    return 0.5 * (out + out.transpose());
}

struct SpdRoots {
    Eigen::MatrixXd sqrt;
    Eigen::MatrixXd inv_sqrt;
};

inline SpdRoots spd_roots(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    const auto& v = eig.eigenvectors();
    Eigen::VectorXd s = eig.eigenvalues().cwiseSqrt();
    SpdRoots r;
    r.sqrt = v * s.asDiagonal() * v.transpose();
    r.inv_sqrt = v * s.cwiseInverse().asDiagonal() * v.transpose();
    return r;
}

inline Eigen::MatrixXd congruence(const Eigen::MatrixXd& g, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd out = g * y * g.transpose();
    return 0.5 * (out + out.transpose());
}

inline double spd_squared_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    // Eigenvalues of x^-1 y via the generalized problem y v = lambda x v.
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(y, x, Eigen::EigenvaluesOnly);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const double l = std::log(eig.eigenvalues()[i]);
        acc += l * l;
    }
    return acc;
}

} // namespace detail

inline double squared_distance(const ManifoldPoint& x, const ManifoldPoint& y) {
    detail::require_same_kind(x, y);
    if (x.is_disk()) {
        const double d = detail::disk_distance(x.as_disk(), y.as_disk());
        return d * d;
    }
    return detail::spd_squared_distance(x.as_spd(), y.as_spd());
}

/// Riemannian distance. Throws InvalidArgument on kind mismatch.
inline double distance(const ManifoldPoint& x, const ManifoldPoint& y) {
    detail::require_same_kind(x, y);
    if (x.is_disk()) return detail::disk_distance(x.as_disk(), y.as_disk());
    return std::sqrt(detail::spd_squared_distance(x.as_spd(), y.as_spd()));
}

/// Isometry moving the origin to c (Mobius map on the disk, y -> c^1/2 y c^1/2 on SPD).
inline ManifoldPoint translate_to(const ManifoldPoint& c, const ManifoldPoint& x) {
    detail::require_same_kind(c, x);
    if (c.is_disk()) return ManifoldPoint::disk_trusted(detail::mobius_to(c.as_disk(), x.as_disk()));
    const auto roots = detail::spd_roots(c.as_spd());
    return ManifoldPoint::spd_trusted(detail::congruence(roots.sqrt, x.as_spd()));
}

/// Inverse of translate_to: moves c to the origin.
inline ManifoldPoint translate_from(const ManifoldPoint& c, const ManifoldPoint& x) {
    detail::require_same_kind(c, x);
    if (c.is_disk()) return ManifoldPoint::disk_trusted(detail::mobius_from(c.as_disk(), x.as_disk()));
    const auto roots = detail::spd_roots(c.as_spd());
    return ManifoldPoint::spd_trusted(detail::congruence(roots.inv_sqrt, x.as_spd()));
}

/// Congruence action g . y = g y g^T on SPD(d).
inline ManifoldPoint act(const Eigen::MatrixXd& g, const ManifoldPoint& y) {
    if (!y.is_spd()) throw InvalidArgument("congruence action is defined on SPD points only");
    if (g.rows() != y.as_spd().rows() || g.cols() != g.rows())
        throw InvalidArgument("congruence action: dimension mismatch");
    return ManifoldPoint::spd_trusted(detail::congruence(g, y.as_spd()));
}

/// x #_tau z: the point a fraction tau along the geodesic from x to z.
inline ManifoldPoint geodesic_point(const ManifoldPoint& x, const ManifoldPoint& z, double tau) {
    detail::require_same_kind(x, z);
    if (!(tau >= 0.0 && tau <= 1.0))
        throw InvalidArgument("geodesic fraction outside [0, 1]: " + std::to_string(tau));
    if (tau == 0.0) return x;
    if (tau == 1.0) return z;
    if (x.is_disk()) {
        const Complex c = x.as_disk();
        const Complex w = detail::mobius_from(c, z.as_disk());
        const double r = std::abs(w);
        if (r == 0.0) return x;
        const Complex wt = (std::tanh(tau * std::atanh(r)) / r) * w;
        return ManifoldPoint::disk_trusted(detail::mobius_to(c, wt));
    }
    const auto roots = detail::spd_roots(x.as_spd());
    const Eigen::MatrixXd inner = detail::congruence(roots.inv_sqrt, z.as_spd());
    const Eigen::MatrixXd powered =
        detail::sym_apply(inner, [tau](double l) { return std::pow(l, tau); });
    return ManifoldPoint::spd_trusted(detail::congruence(roots.sqrt, powered));
}

/// Weighted Frechet objective sum_i w_i d^2(m, x_i).
inline double karcher_objective(const ManifoldPoint& m, std::span<const ManifoldPoint> points,
                                std::span<const double> weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) acc += weights[i] * squared_distance(m, points[i]);
    return acc;
}

struct KarcherOptions {
    double tolerance = 1e-9; ///< on the Riemannian gradient norm
    int max_iterations = 200;
};

namespace detail {

inline void check_weights(std::span<const ManifoldPoint> points, std::span<const double> weights) {
    if (points.empty()) throw InvalidArgument("karcher_mean of an empty set");
    if (weights.size() != points.size())
        throw InvalidArgument("karcher_mean: weight count does not match point count");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("karcher_mean: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidArgument("karcher_mean: weights sum to " + std::to_string(sum));
    const ManifoldKind kind = points.front().kind();
    for (const auto& p : points)
        if (!(p.kind() == kind)) throw InvalidArgument("karcher_mean: mixed manifold kinds");
}

inline ManifoldPoint karcher_disk(std::span<const ManifoldPoint> points, std::span<const double> weights,
                                  const KarcherOptions& opt) {
    // The Euclidean weighted mean stays inside the (convex) disk.
    Complex m(0.0, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) m += weights[i] * points[i].as_disk();
    auto objective = [&](Complex at) {
        double acc = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (weights[i] > 0.0) acc += weights[i] * std::pow(disk_distance(at, points[i].as_disk()), 2);
        return acc;
    };
    double value = objective(m);
    for (int it = 0; it < opt.max_iterations; ++it) {
        // Descent direction -grad = sum_i w_i log_m(x_i), in the frame carried
        // from the origin. The Hessian of the objective / 2 has spectrum in
        // [1, L] with L = sum_i w_i r_i coth r_i; step 2/(1+L) is 1 for
        // concentrated data and avoids oscillation for spread-out data.
        Complex v(0.0, 0.0);
        double curvature_bound = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (weights[i] == 0.0) continue;
            const Complex l = disk_log0(mobius_from(m, points[i].as_disk()));
            const double r = std::abs(l);
            v += weights[i] * l;
            curvature_bound += weights[i] * (r > 1e-8 ? r / std::tanh(r) : 1.0);
        }
        if (std::abs(v) < opt.tolerance) return ManifoldPoint::disk_trusted(m);
        double step = 2.0 / (1.0 + curvature_bound);
        for (;;) {
            const Complex cand = mobius_to(m, disk_exp0(step * v));
            const double cand_value = objective(cand);
            if (cand_value <= value * (1.0 + 1e-13) || step < 1e-12) {
                m = cand;
                value = cand_value;
                break;
            }
            step *= 0.5;
        }
    }
    throw NumericalError("karcher_mean did not converge within " +
                         std::to_string(opt.max_iterations) + " iterations");
}

inline ManifoldPoint karcher_spd(std::span<const ManifoldPoint> points, std::span<const double> weights,
                                 const KarcherOptions& opt) {
    const auto dim = points.front().as_spd().rows();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t i = 0; i < points.size(); ++i) m += weights[i] * points[i].as_spd();
    auto objective = [&](const Eigen::MatrixXd& at) {
        double acc = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (weights[i] > 0.0) acc += weights[i] * spd_squared_distance(at, points[i].as_spd());
        return acc;
    };
    double value = objective(m);
    double step = 1.0;
    for (int it = 0; it < opt.max_iterations; ++it) {
        const auto roots = spd_roots(m);
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (weights[i] == 0.0) continue;
            s += weights[i] * sym_apply(congruence(roots.inv_sqrt, points[i].as_spd()),
                                        [](double l) { return std::log(l); });
        }
        if (s.norm() < opt.tolerance) return ManifoldPoint::spd_trusted(m);
        for (;;) {
            const Eigen::MatrixXd scaled = step * s;
            Eigen::MatrixXd cand = congruence(roots.sqrt, sym_apply(scaled, [](double l) { return std::exp(l); }));
            const double cand_value = objective(cand);
            if (cand_value <= value * (1.0 + 1e-13) || step < 1e-12) {
                m = cand;
                value = cand_value;
                break;
            }
            step *= 0.5;
        }
        step = std::min(1.0, 2.0 * step);
    }
    throw NumericalError("karcher_mean did not converge within " +
                         std::to_string(opt.max_iterations) + " iterations");
}

} // namespace detail

/// Weighted Riemannian center of mass by Riemannian gradient descent. SPD
/// uses unit steps; the disk scales the step by a curvature bound. Steps are
/// halved whenever they would increase the objective.
/// Throws InvalidArgument on bad input and NumericalError on non-convergence.
inline ManifoldPoint karcher_mean(std::span<const ManifoldPoint> points, std::span<const double> weights,
                                  const KarcherOptions& opt = {}) {
    detail::check_weights(points, weights);
    if (points.size() == 1) return points.front();
    if (points.front().is_disk()) return detail::karcher_disk(points, weights, opt);
    return detail::karcher_spd(points, weights, opt);
}

inline ManifoldPoint karcher_mean(std::span<const ManifoldPoint> points, const KarcherOptions& opt = {}) {
    std::vector<double> w(points.size(), points.empty() ? 0.0 : 1.0 / static_cast<double>(points.size()));
    return karcher_mean(points, std::span<const double>(w), opt);
}

/// Riemannian gradient norm of the weighted Frechet objective (divided by 2) at m.
inline double karcher_gradient_norm(const ManifoldPoint& m, std::span<const ManifoldPoint> points,
                                    std::span<const double> weights) {
    if (m.is_disk()) {
        Complex v(0.0, 0.0);
        for (std::size_t i = 0; i < points.size(); ++i)
            v += weights[i] * detail::disk_log0(detail::mobius_from(m.as_disk(), points[i].as_disk()));
        return std::abs(v);
    }
    const auto roots = detail::spd_roots(m.as_spd());
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m.as_spd().rows(), m.as_spd().cols());
    for (std::size_t i = 0; i < points.size(); ++i)
        s += weights[i] * detail::sym_apply(detail::congruence(roots.inv_sqrt, points[i].as_spd()),
                                            [](double l) { return std::log(l); });
    return s.norm();
}

/// Maps a unit-determinant 2x2 SPD matrix to the disk through the upper half
/// plane: [[a, b], [b, c]] -> z = (b + i)/a -> (z - i)/(z + i).
/// The map is a homothety: d_spd = sqrt(2) * d_disk.
inline ManifoldPoint unit_spd_to_disk(const ManifoldPoint& p) {
    if (!p.is_spd() || p.as_spd().rows() != 2) throw InvalidArgument("expected a 2x2 SPD point");
    const auto& m = p.as_spd();
    const double det = m.determinant();
    if (std::abs(det - 1.0) > 1e-9) throw InvalidArgument("SPD point does not have unit determinant");
    const Complex i(0.0, 1.0);
    const Complex z = (m(0, 1) + i) / m(0, 0);
    return ManifoldPoint::disk((z - i) / (z + i));
}

} // namespace ohmm
