#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kdepi/epi_core.hpp"
#include "kdepi/rng.hpp"

using namespace kdepi;

namespace {

CommunityParams reference_params() {
    return make_community(1000.0, 0.0, 10.0, 0.0, 0.5, 0.2, 0.1);
}

CommunityParams random_params(Rng& rng) {
    const double n = std::exp(uniform_real(rng, std::log(1e3), std::log(1e7)));
    const double e0 = uniform_real(rng, 0.0, 0.01) * n;
    const double i0 = uniform_real(rng, 0.0, 0.01) * n;
    const double r0 = uniform_real(rng, 0.0, 0.2) * n;
    return make_community(n, e0, i0, r0, uniform_real(rng, 0.0, 1.0), uniform_real(rng, 0.05, 1.0),
                          uniform_real(rng, 0.05, 1.0));
}

}  // namespace

TEST(StepCommunity, UnseededStateIsAFixedPoint) {
    const auto p = make_community(5000.0, 0.0, 0.0, 0.0, 0.9, 0.3, 0.2);
    const auto next = step_community(p.initial, p);
    EXPECT_EQ(next.s, p.initial.s);
    EXPECT_EQ(next.e, 0.0);
    EXPECT_EQ(next.i, 0.0);
    EXPECT_EQ(next.r, 0.0);
}

TEST(StepCommunity, HandEvaluatedEulerUpdate) {
    const auto p = reference_params();
    const auto next = step_community(p.initial, p, 1.0);
    EXPECT_DOUBLE_EQ(next.s, 985.05);
    EXPECT_DOUBLE_EQ(next.e, 4.95);
    EXPECT_DOUBLE_EQ(next.i, 9.0);
    EXPECT_DOUBLE_EQ(next.r, 1.0);
    EXPECT_EQ(next.t, 1);
}

TEST(StepCommunity, ConservesTotalWithoutVitalDynamics) {
    Rng rng = make_rng(11);
    for (int k = 0; k < 500; ++k) {
        const auto p = random_params(rng);
        const auto next = step_community(p.initial, p);
        EXPECT_NEAR(next.total(), p.initial.total(), 4e-16 * 8 * p.population);
    }
}

TEST(StepCommunity, BirthAndDeathChangeTheTotalByTheNetRate) {
    auto p = make_community(1e4, 100.0, 50.0, 10.0, 0.3, 0.2, 0.1);
    p.alpha = 0.01;
    p.mu = 0.004;
    const auto next = step_community(p.initial, p);
    EXPECT_NEAR(next.total() - p.initial.total(), (p.alpha - p.mu) * p.population, 1e-9);
}

TEST(StepCommunity, RejectsNonFiniteState) {
    const auto p = reference_params();
    CompartmentState bad = p.initial;
    bad.i = std::nan("");
    EXPECT_THROW(step_community(bad, p), InvalidStateError);
    bad.i = INFINITY;
    EXPECT_THROW(step_community(bad, p), InvalidStateError);
}

TEST(StepCommunity, ClampsOvershootAtZero) {
    // beta * dt well above one drives raw Euler negative
    const auto p = make_community(100.0, 0.0, 60.0, 0.0, 5.0, 3.0, 2.5);
    auto x = p.initial;
    for (int k = 0; k < 20; ++k) {
        x = step_community(x, p);
        EXPECT_GE(x.s, 0.0);
        EXPECT_GE(x.e, 0.0);
        EXPECT_GE(x.i, 0.0);
        EXPECT_GE(x.r, 0.0);
    }
}

TEST(CommunityParams, ValidateChecksBoundaryCondition) {
    auto p = reference_params();
    EXPECT_NO_THROW(p.validate());
    p.initial.s += 5.0;
    EXPECT_THROW(p.validate(), InvalidStateError);
    p = reference_params();
    p.sigma = 0.0;
    EXPECT_THROW(p.validate(), InvalidStateError);
    p = reference_params();
    p.beta = -0.1;
    EXPECT_THROW(p.validate(), InvalidStateError);
}

TEST(SimulateCommunity, HorizonOneIsASingleStep) {
    const auto p = reference_params();
    EXPECT_THROW(simulate_community(p, 0), ConfigError);
    const auto traj = simulate_community(p, 1);
    ASSERT_EQ(traj.states.size(), 2u);
    ASSERT_EQ(traj.incidence.size(), 1u);
    EXPECT_EQ(traj.states[0], p.initial);
    EXPECT_EQ(traj.states[1], step_community(p.initial, p));
}

TEST(SimulateCommunity, NoSeedMeansNoIncidence) {
    const auto p = make_community(1e5, 0.0, 0.0, 200.0, 0.8, 0.3, 0.1);
    const auto traj = simulate_community(p, 60);
    for (double v : traj.incidence) EXPECT_EQ(v, 0.0);
}

TEST(SimulateCommunity, IncidenceIsLatentOutflow) {
    const auto p = reference_params();
    const auto traj = simulate_community(p, 50);
    for (std::size_t t = 0; t < traj.horizon(); ++t) EXPECT_EQ(traj.incidence[t], p.sigma * traj.states[t].e);
}

// Values from tests/oracles/seir_euler_oracle.py
TEST(SimulateCommunity, MatchesStandaloneEulerScript) {
    const auto traj = simulate_community(reference_params(), 30);
    std::size_t peak = 0;
    for (std::size_t t = 1; t < traj.horizon(); ++t)
        if (traj.incidence[t] > traj.incidence[peak]) peak = t;
    EXPECT_EQ(peak, 29u);
    EXPECT_NEAR(traj.incidence[peak], 41.42436460023637, 1e-12);
    EXPECT_NEAR(traj.states[30].s, 265.6083837824139, 1e-10);
    EXPECT_NEAR(traj.states[30].e, 205.56142723886853, 1e-10);
    EXPECT_NEAR(traj.states[30].i, 276.3233441404371, 1e-10);
    EXPECT_NEAR(traj.states[30].r, 252.5068448382802, 1e-10);

    const auto longer = simulate_community(reference_params(), 120);
    EXPECT_NEAR(longer.states[120].s, 5.13859288142888, 1e-10);
    EXPECT_NEAR(longer.states[120].r, 994.6618909928326, 1e-10);
}

TEST(SimulateCommunity, ConservationMonotoneRecoveryAndNonNegativity) {
    Rng rng = make_rng(5);
    for (int k = 0; k < 50; ++k) {
        const auto p = random_params(rng);
        const auto traj = simulate_community(p, 365);
        for (std::size_t t = 0; t < traj.states.size(); ++t) {
            const auto& x = traj.states[t];
            EXPECT_LE(std::abs(x.total() - p.population), 1e-9 * p.population);
            EXPECT_GE(std::min({x.s, x.e, x.i, x.r}), 0.0);
            if (t > 0) EXPECT_GE(x.r, traj.states[t - 1].r);
        }
    }
}

TEST(SimulateCommunity, SubDailyStepsAccumulateDailyIncidence) {
    const auto p = reference_params();
    const auto coarse = simulate_community(p, 40, 1.0);
    const auto fine = simulate_community(p, 40, 0.25);
    ASSERT_EQ(fine.incidence.size(), 40u);
    ASSERT_EQ(fine.states.back().t, 40);
    EXPECT_NEAR(fine.states.back().total(), p.population, 1e-9 * p.population);
    // both discretizations follow the same epidemic closely
    EXPECT_NEAR(fine.states.back().r / coarse.states.back().r, 1.0, 0.25);
    EXPECT_THROW(simulate_community(p, 10, 0.3), ConfigError);
    EXPECT_THROW(simulate_community(p, 10, 2.0), ConfigError);
}

TEST(SimulateCommunity, IsDeterministic) {
    const auto p = reference_params();
    EXPECT_EQ(simulate_community(p, 200).states, simulate_community(p, 200).states);
}

TEST(SimulateMixture, EmptyKeyIsAConfigError) {
    EXPECT_THROW(simulate_mixture({}, 10), ConfigError);
}

TEST(SimulateMixture, SingleCommunityMatchesCommunitySimulation) {
    const std::vector<CommunityParams> key{reference_params()};
    const auto mix = simulate_mixture(key, 80);
    const auto one = simulate_community(key[0], 80);
    EXPECT_EQ(mix.states, one.states);
    EXPECT_EQ(mix.incidence, one.incidence);
}

TEST(SimulateMixture, TwoIdenticalCommunitiesDoubleTheTrajectory) {
    const std::vector<CommunityParams> key{reference_params(), reference_params()};
    const auto mix = simulate_mixture(key, 80);
    const auto one = simulate_community(key[0], 80);
    for (std::size_t t = 0; t < one.states.size(); ++t) {
        EXPECT_EQ(mix.states[t].s, 2.0 * one.states[t].s);
        EXPECT_EQ(mix.states[t].e, 2.0 * one.states[t].e);
        EXPECT_EQ(mix.states[t].i, 2.0 * one.states[t].i);
        EXPECT_EQ(mix.states[t].r, 2.0 * one.states[t].r);
    }
    for (std::size_t t = 0; t < one.incidence.size(); ++t) EXPECT_EQ(mix.incidence[t], 2.0 * one.incidence[t]);
}

TEST(SimulateMixture, EqualsSimulateThenSumOracle) {
    Rng rng = make_rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<CommunityParams> key;
        for (int c = 0; c < 3; ++c) key.push_back(random_params(rng));
        const int horizon = 90;
        const auto mix = simulate_mixture(key, horizon);

        // oracle: independent per-community runs summed by a plain loop
        std::vector<double> s(horizon + 1, 0.0), e(horizon + 1, 0.0), i(horizon + 1, 0.0), r(horizon + 1, 0.0);
        std::vector<double> inc(horizon, 0.0);
        for (const auto& c : key) {
            const auto part = simulate_community(c, horizon);
            for (int t = 0; t <= horizon; ++t) {
                s[t] += part.states[t].s;
                e[t] += part.states[t].e;
                i[t] += part.states[t].i;
                r[t] += part.states[t].r;
            }
            for (int t = 0; t < horizon; ++t) inc[t] += part.incidence[t];
        }
        for (int t = 0; t <= horizon; ++t) {
            EXPECT_EQ(mix.states[t].s, s[t]);
            EXPECT_EQ(mix.states[t].e, e[t]);
            EXPECT_EQ(mix.states[t].i, i[t]);
            EXPECT_EQ(mix.states[t].r, r[t]);
        }
        EXPECT_EQ(mix.incidence, inc);
        EXPECT_EQ(mixture_incidence(key, horizon), mix.incidence);
    }
}
