#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ohmm/io.hpp"
#include "ohmm/kmeans.hpp"
#include "ohmm/online.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using ohmm::ManifoldPoint;

namespace {

ohmm::HmmParams single_state(const ManifoldPoint& c, double sigma) {
    ohmm::HmmParams p;
    p.transition = Eigen::MatrixXd::Ones(1, 1);
    p.initial = Eigen::VectorXd::Ones(1);
    p.components = {ohmm::RiemannianGaussian::from_sigma(c, sigma)};
    return p;
}

ohmm::HmmParams separated_identity() {
    ohmm::HmmParams p;
    p.transition = Eigen::Matrix2d::Identity();
    p.initial = Eigen::Vector2d(0.5, 0.5);
    p.components = {ohmm::RiemannianGaussian::from_sigma(ManifoldPoint::disk(-0.6, 0.0), 0.2),
                    ohmm::RiemannianGaussian::from_sigma(ManifoldPoint::disk(0.6, 0.0), 0.2)};
    return p;
}

ohmm::HmmParams model() { return ohmm::io::load_params(OHMM_SOURCE_DIR "/configs/poincare_params.json"); }

} // namespace

TEST(Forward, SingleStateStaysOne) {
    const auto p = single_state(ManifoldPoint::disk(0, 0), 0.5);
    auto s = ohmm::seed_filter(p, std::vector<ManifoldPoint>{ManifoldPoint::disk(0.1, 0), ManifoldPoint::disk(0.2, 0)});
    const auto fw = ohmm::forward_step(s, ManifoldPoint::disk(-0.3, 0.3));
    EXPECT_DOUBLE_EQ(fw.alpha(0), 1.0);
}

TEST(Forward, ConcentratesOnObservedComponent) {
    const auto p = separated_identity();
    auto fw = ohmm::initial_forward(p, p.components[1].center);
    ohmm::FilterState s;
    s.params = p;
    s.alpha = fw.alpha;
    for (int i = 0; i < 2; ++i) s.alpha = ohmm::forward_step(s, p.components[1].center).alpha;
    EXPECT_GT(s.alpha(1), 0.99);
    EXPECT_NEAR(s.alpha.sum(), 1.0, 1e-15);
}

TEST(Forward, DegenerateEmissionRaises) {
    auto p = separated_identity();
    p.components[0] = ohmm::RiemannianGaussian::from_sigma(ManifoldPoint::disk(-0.6, 0.0), 1e-3);
    p.components[1] = ohmm::RiemannianGaussian::from_sigma(ManifoldPoint::disk(0.6, 0.0), 1e-3);
    EXPECT_THROW(ohmm::initial_forward(p, ManifoldPoint::disk(0.0, 0.0)), ohmm::NumericalError);
}

TEST(Backward, TrivialWindow) {
    const auto p = single_state(ManifoldPoint::disk(0, 0), 0.5);
    ohmm::FilterState s;
    s.params = p;
    s.window_capacity = 1;
    const auto fw = ohmm::initial_forward(p, ManifoldPoint::disk(0.1, 0.1));
    ohmm::push_window(s, {ManifoldPoint::disk(0.1, 0.1), fw.alpha});
    const auto slice = ohmm::backward_window(s);
    EXPECT_DOUBLE_EQ(slice.gamma(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(slice.zeta(0, 0), 1.0);
}

TEST(Backward, MatchesPathEnumeration) {
    const auto o = suite::smoothing_oracle(50);
    EXPECT_TRUE(o.ok) << o.detail;
}

TEST(Backward, ProbabilityContracts) {
    const auto p = model();
    const auto chain = ohmm::simulate_chain(p, 60, 3);
    const auto s = ohmm::seed_filter(p, chain.observations);
    const auto slice = ohmm::backward_window(s);
    for (Eigen::Index t = 0; t < slice.gamma.rows(); ++t) EXPECT_NEAR(slice.gamma.row(t).sum(), 1.0, 1e-12);
    EXPECT_NEAR(slice.zeta.sum(), 1.0, 1e-12);
    EXPECT_GE(slice.zeta.minCoeff(), 0.0);
    // The newest transition (k-1, k): row marginal is gamma at k-1, column marginal gamma at k.
    const auto len = slice.gamma.rows();
    EXPECT_LT((slice.zeta.rowwise().sum().transpose() - slice.gamma.row(len - 2)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((slice.zeta.colwise().sum() - slice.gamma.row(len - 1)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(slice.zeta_sum.sum(), static_cast<double>(len - 1), 1e-10);
}

TEST(Transition, ZeroScoreLeavesMatrixUnchanged) {
    ohmm::FilterState s;
    s.params = model();
    ohmm::SmoothingSlice slice;
    slice.zeta = Eigen::MatrixXd::Zero(3, 3);
    slice.mu = Eigen::MatrixXd::Zero(3, 3);
    slice.g = Eigen::MatrixXd::Zero(3, 3);
    EXPECT_LT((ohmm::update_transition(s, slice) - s.params.transition).cwiseAbs().maxCoeff(), 1e-15);
    // Non-zero mu with zero score also leaves A unchanged.
    slice.mu = Eigen::MatrixXd::Constant(3, 3, 2.0);
    EXPECT_LT((ohmm::update_transition(s, slice) - s.params.transition).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Transition, HandComputedTwoStateCase) {
    ohmm::FilterState s;
    s.params.transition = (Eigen::Matrix2d() << 0.7, 0.3, 0.4, 0.6).finished();
    ohmm::SmoothingSlice slice;
    slice.mu = (Eigen::Matrix2d() << 2.0, 4.0, 5.0, 1.0).finished();
    slice.g = (Eigen::Matrix2d() << 0.5, 0.1, 0.2, 0.8).finished();
    // Row 1: w = (1/2, 1/4); centre = (0.25 + 0.025) / 0.75 = 0.366666..
    //   increments (0.5)(0.5 - c) = 0.0666.., (0.25)(0.1 - c) = -0.0666..
    // Row 2: w = (1/5, 1); centre = (0.04 + 0.8) / 1.2 = 0.7
    //   increments (0.2)(0.2 - 0.7) = -0.1, (1)(0.8 - 0.7) = 0.1
    const Eigen::MatrixXd inc = ohmm::transition_increment(slice);
    EXPECT_NEAR(inc(0, 0), 0.5 * (0.5 - 0.275 / 0.75), 1e-15);
    EXPECT_NEAR(inc(0, 1), 0.25 * (0.1 - 0.275 / 0.75), 1e-15);
    EXPECT_NEAR(inc(1, 0), -0.1, 1e-15);
    EXPECT_NEAR(inc(1, 1), 0.1, 1e-15);
    const Eigen::MatrixXd a = ohmm::update_transition(s, slice);
    EXPECT_NEAR(a(0, 0), 0.7 + 0.2 / 3.0, 1e-15);
    EXPECT_NEAR(a(1, 0), 0.3, 1e-15);
    EXPECT_NEAR(a.row(0).sum(), 1.0, 1e-15);
}

TEST(Transition, CorrectionHasZeroWeightedMean) {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    for (int k = 0; k < 100; ++k) {
        ohmm::SmoothingSlice slice;
        slice.mu.resize(4, 4);
        slice.g.resize(4, 4);
        for (int i = 0; i < 16; ++i) slice.mu(i / 4, i % 4) = u(gen), slice.g(i / 4, i % 4) = u(gen);
        const Eigen::MatrixXd inc = ohmm::transition_increment(slice);
        // Each increment is (1/mu) x correction, so the plain row sum is the weighted mean of the corrections.
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(inc.row(i).sum(), 0.0, 1e-12);
    }
}

TEST(Transition, ProjectionClipsAndNormalizes) {
    const Eigen::MatrixXd raw = (Eigen::Matrix2d() << 1.3, -0.3, 0.5, 0.5).finished();
    const Eigen::MatrixXd a = ohmm::project_rows(raw, 1e-6);
    EXPECT_NEAR(a(0, 1), 1e-6 / (1 + 1e-6), 1e-18);
    EXPECT_NEAR(a.row(0).sum(), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(a(1, 0), 0.5);
}

TEST(Transition, ZeroMuEntryIsLeftOut) {
    ohmm::SmoothingSlice slice;
    slice.mu = (Eigen::Matrix3d() << 2.0, 0.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).finished();
    slice.g = (Eigen::Matrix3d() << 0.6, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0).finished();
    const Eigen::MatrixXd inc = ohmm::transition_increment(slice);
    // Row 1 behaves as the two-entry row {mu = 2, 4}: centre = (0.3 + 0.075) / 0.75 = 0.5.
    EXPECT_NEAR(inc(0, 0), (0.6 - 0.5) / 2.0, 1e-15);
    EXPECT_EQ(inc(0, 1), 0.0);
    EXPECT_NEAR(inc(0, 2), (0.3 - 0.5) / 4.0, 1e-15);
    EXPECT_NEAR(inc.row(0).sum(), 0.0, 1e-15);

    slice.g(0, 1) = 0.1; // evidence without mass is inconsistent
    EXPECT_THROW(ohmm::transition_increment(slice), ohmm::NumericalError);
    slice.g(0, 1) = 0.0;
    slice.mu(1, 1) = -1.0;
    EXPECT_THROW(ohmm::transition_increment(slice), ohmm::NumericalError);
}

TEST(Mean, StepFractionEndpoints) {
    ohmm::SmoothingSlice slice;
    // Column 1: all gamma mass at the newest step -> tau = 1. Column 2: none at the newest -> tau = 0.
    slice.gamma = (Eigen::MatrixXd(3, 2) << 0.0, 1.0, 0.0, 1.0, 1.0, 0.0).finished();
    const Eigen::VectorXd tau = ohmm::mean_step_fractions(slice);
    EXPECT_DOUBLE_EQ(tau(0), 1.0);
    EXPECT_DOUBLE_EQ(tau(1), 0.0);

    ohmm::FilterState s;
    s.params = separated_identity();
    const auto y = ManifoldPoint::disk(0.1, 0.2);
    const auto centers = ohmm::update_mean(s, slice, y);
    EXPECT_EQ(centers[0].as_disk(), y.as_disk());
    EXPECT_EQ(centers[1].as_disk(), s.params.components[1].center.as_disk());
}

TEST(Delta, HandStep) {
    EXPECT_DOUBLE_EQ(ohmm::delta_step(1.0, 0.5, 2.0, 4, 0.5), 1.25);
    EXPECT_DOUBLE_EQ(ohmm::delta_step(0.7, 0.9, 0.7, 10, 0.5), 0.7);
    EXPECT_DOUBLE_EQ(ohmm::delta_step(0.7, 0.0, 5.0, 10, 0.5), 0.7);
    EXPECT_THROW(ohmm::delta_step(1.0, 0.5, 2.0, 0, 0.5), ohmm::InvalidArgument);
}

TEST(FlatLimit, MatchesRealLineRules) {
    const auto o = suite::flat_limit_suite();
    EXPECT_TRUE(o.ok) << o.detail;
}

TEST(Run, SingleStateConvergesToBatchStatistics) {
    const auto c = ManifoldPoint::disk(0.2, -0.3);
    const auto truth = single_state(c, 0.5);
    const auto ys = ohmm::sample_gaussian(truth.components[0], 77, 10000);
    const auto mean = ohmm::karcher_mean(std::span<const ManifoldPoint>(ys));
    double msd = 0.0;
    for (const auto& y : ys) msd += ohmm::squared_distance(y, mean) / static_cast<double>(ys.size());

    // Start away from the answer: center at the origin, sigma 1.
    const auto start = single_state(ManifoldPoint::disk(0.0, 0.0), 1.0);
    const std::size_t delta = 1000;
    auto state = ohmm::seed_filter(start, std::span(ys).first(delta));
    const auto res = ohmm::run_online(state, std::span(ys).subspan(delta));
    const auto& est = res.params.components[0];
    EXPECT_LT(ohmm::distance(est.center, mean), 0.05) << "batch mean vs online center";
    EXPECT_NEAR(est.delta / msd, 1.0, 0.05) << "online delta " << est.delta << " batch " << msd;
}

TEST(Run, DeterministicAndConserving) {
    const auto p = model();
    const auto chain = ohmm::simulate_chain(p, 700, 13);
    auto run = [&](std::vector<Eigen::MatrixXd>* trace) {
        auto s = ohmm::seed_filter(p, std::span(chain.observations).first(50));
        return ohmm::run_online(s, std::span(chain.observations).subspan(50), {}, [&](const ohmm::StepRecord& r) {
            EXPECT_NEAR(r.gamma_filtered.sum(), 1.0, 1e-9);
            for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(r.params.transition.row(i).sum(), 1.0, 1e-12);
            EXPECT_GE(r.params.transition.minCoeff(), 1e-6 / 2);
            if (trace) trace->push_back(r.params.transition);
        });
    };
    std::vector<Eigen::MatrixXd> t1, t2;
    const auto a = run(&t1);
    const auto b = run(&t2);
    ASSERT_EQ(t1.size(), t2.size());
    for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_EQ(t1[i], t2[i]);
    EXPECT_EQ(a.gamma_filtered, b.gamma_filtered);
}

TEST(Run, MemoryBoundedByWindow) {
    const auto p = model();
    const auto chain = ohmm::simulate_chain(p, 2000, 21);
    for (std::size_t delta : {2u, 40u, 300u}) {
        auto s = ohmm::seed_filter(p, std::span(chain.observations).first(delta));
        std::size_t max_window = 0;
        ohmm::run_online(s, std::span(chain.observations).subspan(delta), {},
                         [&](const ohmm::StepRecord&) { max_window = std::max(max_window, s.window.size()); });
        EXPECT_EQ(s.peak_retained, delta);
        EXPECT_EQ(max_window, delta);
        EXPECT_EQ(s.k, chain.size());
    }
}

TEST(Run, FrozenFilterKeepsParameters) {
    const auto p = model();
    const auto chain = ohmm::simulate_chain(p, 300, 1);
    auto s = ohmm::seed_filter(p, std::span(chain.observations).first(20));
    const auto res = ohmm::run_online(s, std::span(chain.observations).subspan(20), {.adapt = false});
    EXPECT_EQ(res.params.transition, p.transition);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(res.params.components[i].center.as_disk(), p.components[i].center.as_disk());
}
