#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "ohmm/io.hpp"
#include "ohmm/markov.hpp"

using ohmm::ManifoldPoint;

namespace {

ohmm::HmmParams model() { return ohmm::io::load_params(OHMM_SOURCE_DIR "/configs/poincare_params.json"); }

/// Left Perron eigenvector of A, normalized to sum 1.
Eigen::VectorXd stationary(const Eigen::MatrixXd& a) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(a.transpose());
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < a.rows(); ++i)
        if (std::abs(es.eigenvalues()(i) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = i;
    Eigen::VectorXd v = es.eigenvectors().col(best).real();
    return v / v.sum();
}

} // namespace

TEST(Simulate, StartsInFirstStateWhenPiIsDegenerate) {
    const auto p = model();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) EXPECT_EQ(ohmm::simulate_chain(p, 3, seed).states[0], 0);
}

TEST(Simulate, IdentityTransitionNeverMoves) {
    auto p = model();
    p.transition = Eigen::MatrixXd::Identity(3, 3);
    p.initial = Eigen::Vector3d(0.0, 1.0, 0.0);
    for (int s : ohmm::simulate_chain(p, 500, 4).states) EXPECT_EQ(s, 1);
}

TEST(Simulate, StationaryFrequencies) {
    const auto p = model();
    const Eigen::VectorXd pi = stationary(p.transition);
    EXPECT_NEAR(pi(0), 2.0 / 11, 1e-12);
    EXPECT_NEAR(pi(1), 3.0 / 11, 1e-12);
    EXPECT_NEAR(pi(2), 6.0 / 11, 1e-12);
    const auto chain = ohmm::simulate_chain(p, 100000, 9);
    Eigen::Vector3d freq = Eigen::Vector3d::Zero();
    for (int s : chain.states) freq(s) += 1.0;
    freq /= static_cast<double>(chain.size());
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(freq(i), pi(i), 0.01);
}

TEST(Simulate, EmissionsMatchComponentDispersion) {
    // Given the state, d^2(y, c_s) averages to delta_s.
    const auto p = model();
    const auto chain = ohmm::simulate_chain(p, 60000, 2);
    std::vector<double> sum(3, 0.0), count(3, 0.0);
    for (std::size_t t = 0; t < chain.size(); ++t) {
        const auto s = static_cast<std::size_t>(chain.states[t]);
        sum[s] += ohmm::squared_distance(chain.observations[t], p.components[s].center);
        count[s] += 1;
    }
    for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(sum[s] / count[s] / p.components[s].delta, 1.0, 0.02) << s;
}

TEST(Simulate, DeterministicPerSeed) {
    const auto p = model();
    const auto a = ohmm::simulate_chain(p, 300, 5), b = ohmm::simulate_chain(p, 300, 5), c = ohmm::simulate_chain(p, 300, 6);
    EXPECT_EQ(a.states, b.states);
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a.observations[t].as_disk(), b.observations[t].as_disk());
    EXPECT_NE(a.states, c.states);
    // A prefix of a longer chain is the shorter chain.
    const auto longer = ohmm::simulate_chain(p, 600, 5);
    EXPECT_TRUE(std::equal(a.states.begin(), a.states.end(), longer.states.begin()));
    // Emissions for given states depend only on (seed, t).
    const auto em = ohmm::simulate_emissions(p, a.states, 5);
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(em[t].as_disk(), a.observations[t].as_disk());
}

TEST(Validate, AcceptsModelAndNamesViolations) {
    auto p = model();
    EXPECT_TRUE(ohmm::validate(p).empty());

    auto bad_row = p;
    bad_row.transition(1, 1) = 0.9;
    auto v = ohmm::validate(bad_row);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, ohmm::ParamViolation::Field::transition);
    EXPECT_EQ(v[0].index, 1);
    EXPECT_NE(v[0].message.find("row 2"), std::string::npos) << v[0].message;
    EXPECT_THROW(ohmm::require_valid(bad_row), ohmm::InvalidArgument);

    auto negative = p;
    negative.transition(0, 0) = -0.1;
    negative.transition(0, 1) = 0.8;
    EXPECT_FALSE(ohmm::validate(negative).empty());

    auto bad_pi = p;
    bad_pi.initial(0) = 0.5;
    v = ohmm::validate(bad_pi);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].field, ohmm::ParamViolation::Field::initial);

    auto bad_shape = p;
    bad_shape.transition = Eigen::MatrixXd::Identity(2, 2);
    EXPECT_FALSE(ohmm::validate(bad_shape).empty());

    auto mixed = p;
    mixed.components[2] = ohmm::RiemannianGaussian{ManifoldPoint::origin(ohmm::ManifoldKind::spd(2)), 1.0, 1.0};
    v = ohmm::validate(mixed);
    ASSERT_FALSE(v.empty());
    EXPECT_EQ(v[0].field, ohmm::ParamViolation::Field::component);
}

TEST(Simulate, RejectsInvalidParams) {
    auto p = model();
    p.initial(0) = 2.0;
    EXPECT_THROW(ohmm::simulate_chain(p, 10, 1), ohmm::InvalidArgument);
}
