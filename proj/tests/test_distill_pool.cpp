#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "kdepi/distill_pool.hpp"

using namespace kdepi;

namespace {

ParameterGrid pool_grid() {
    ParameterGrid g;
    g.n_communities = 2;
    g.population_choices = {2e4, 5e4, 1e5};
    g.ic_choices = {{0.0, 0.0, 0.0, false}, {50.0, 10.0, 0.0, false}, {150.0, 30.0, 0.0, false}};
    g.beta_choices = {0.15, 0.25, 0.4};
    g.sigma_choices = {0.2, 0.33};
    g.gamma_choices = {0.1, 0.2};
    return g;
}

CommunityParams scaled(const CommunityParams& c, double w) {
    CommunityParams s = c;
    s.population *= w;
    s.initial.s *= w;
    s.initial.e *= w;
    s.initial.i *= w;
    s.initial.r *= w;
    return s;
}

double rel_diff(double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

}  // namespace

TEST(QueryByKey, UnseededKeyGivesZeros) {
    const auto g = pool_grid();
    const auto key = key_from_indices(g, {GridIndex{1, 0, 2, 1, 0}, GridIndex{2, 0, 0, 0, 1}});
    const auto pair = query_by_key(key, 30, 10);
    EXPECT_EQ(pair.observation, std::vector<double>(30, 0.0));
    EXPECT_EQ(pair.projection, std::vector<double>(40, 0.0));
}

TEST(QueryByKey, ObservationIsPrefixAndMatchesMixtureSimulation) {
    const auto g = pool_grid();
    const auto key = key_from_indices(g, {GridIndex{1, 1, 2, 1, 0}, GridIndex{2, 2, 1, 0, 1}});
    const auto pair = query_by_key(key, 50, 14);
    ASSERT_EQ(pair.observation.size(), 50u);
    ASSERT_EQ(pair.projection.size(), 64u);
    EXPECT_TRUE(std::equal(pair.observation.begin(), pair.observation.end(), pair.projection.begin()));
    EXPECT_EQ(pair.projection, simulate_mixture(key.communities, 64).incidence);
    EXPECT_EQ(pair.provenance.kind, Provenance::Kind::query);
    EXPECT_EQ(pair.provenance.key_indices, key.grid_indices);
}

TEST(Mixup, IdentityWeightReproducesFirstParent) {
    const auto keys = sample_scenarios(pool_grid(), 2, 3);
    const std::vector<SequencePair> parents{query_by_key(keys[0], 20, 5), query_by_key(keys[1], 20, 5)};
    const auto mixed = mixup(parents, MixWeights{{1.0, 0.0}});
    EXPECT_EQ(mixed.observation, parents[0].observation);
    EXPECT_EQ(mixed.projection, parents[0].projection);
    EXPECT_EQ(mixed.provenance.kind, Provenance::Kind::mixup);
}

TEST(Mixup, HalfAndHalfOfDuplicatesIsIdempotent) {
    const auto key = sample_scenarios(pool_grid(), 1, 4)[0];
    const auto p = query_by_key(key, 25, 6);
    const std::vector<SequencePair> parents{p, p};
    const auto mixed = mixup(parents, MixWeights{{0.5, 0.5}});
    EXPECT_EQ(mixed.observation, p.observation);
    EXPECT_EQ(mixed.projection, p.projection);
}

TEST(Mixup, ErrorPaths) {
    const auto keys = sample_scenarios(pool_grid(), 2, 5);
    const std::vector<SequencePair> parents{query_by_key(keys[0], 20, 5), query_by_key(keys[1], 20, 5)};
    EXPECT_THROW(mixup(parents, MixWeights{{0.5, 0.4}}), ConfigError);
    EXPECT_THROW(mixup(parents, MixWeights{{1.2, -0.2}}), ConfigError);
    EXPECT_THROW(mixup(parents, MixWeights{{1.0}}), ConfigError);
    const std::vector<SequencePair> uneven{query_by_key(keys[0], 20, 5), query_by_key(keys[1], 20, 6)};
    EXPECT_THROW(mixup(uneven, MixWeights{{0.5, 0.5}}), DataError);
}

// A mixed pair must equal the incidence of the society made of both parents'
// communities scaled by their weights.
TEST(Mixup, EqualsSimulationOfWeightScaledUnion) {
    const auto g = pool_grid();
    const auto keys = sample_scenarios(g, 40, 17);
    for (std::size_t k = 0; k + 1 < keys.size(); k += 2) {
        const auto& a = keys[k];
        const auto& b = keys[k + 1];
        const std::vector<SequencePair> parents{query_by_key(a, 60, 21), query_by_key(b, 60, 21)};
        const MixWeights w{{0.3, 0.7}};
        const auto mixed = mixup(parents, w);

        std::vector<CommunityParams> society;
        for (const auto& c : a.communities) society.push_back(scaled(c, 0.3));
        for (const auto& c : b.communities) society.push_back(scaled(c, 0.7));
        const auto oracle = simulate_mixture(society, 81).incidence;
        for (std::size_t t = 0; t < oracle.size(); ++t)
            EXPECT_LE(rel_diff(mixed.projection[t], oracle[t]), 1e-9) << "t=" << t;
    }
}

TEST(SampleWeights, ValidationAndDeterminism) {
    EXPECT_THROW(sample_weights(1, 1.0, 0), ConfigError);
    EXPECT_THROW(sample_weights(2, 0.0, 0), ConfigError);
    const auto a = sample_weights(4, 1.0, 99);
    EXPECT_EQ(a.w, sample_weights(4, 1.0, 99).w);
    EXPECT_NE(a.w, sample_weights(4, 1.0, 100).w);
    EXPECT_NO_THROW(a.validate());
}

TEST(SampleWeights, InfiniteConcentrationIsUniform) {
    const auto w = sample_weights(5, INFINITY, 1);
    for (double v : w.w) EXPECT_DOUBLE_EQ(v, 0.2);
    // large finite concentrations approach the same point
    const auto near = sample_weights(5, 1e6, 1);
    for (double v : near.w) EXPECT_NEAR(v, 0.2, 0.01);
}

TEST(SampleWeights, UniformSimplexMeanIsOneHalf) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const auto w = sample_weights(2, 1.0, seed);
        EXPECT_LE(std::abs(w.w[0] + w.w[1] - 1.0), 1e-12);
        sum += w.w[0];
    }
    EXPECT_NEAR(sum / 10000.0, 0.5, 0.01);
}

TEST(BuildPool, SizesAndPassthrough) {
    PoolConfig cfg;
    cfg.n_queries = 30;
    cfg.n_mixed = 0;
    cfg.calibration_len = 28;
    cfg.projection_len = 7;
    cfg.seed = 5;
    const auto pool = build_pool(pool_grid(), cfg);
    EXPECT_EQ(pool.pairs.size(), 30u);
    for (const auto& p : pool.pairs) EXPECT_EQ(p.provenance.kind, Provenance::Kind::query);

    cfg.n_mixed = 70;
    const auto bigger = build_pool(pool_grid(), cfg);
    EXPECT_EQ(bigger.pairs.size(), 100u);
    EXPECT_EQ(bigger.n_queries, 30u);
    EXPECT_TRUE(std::equal(pool.pairs.begin(), pool.pairs.end(), bigger.pairs.begin()));

    cfg.n_queries = 1;
    EXPECT_THROW(build_pool(pool_grid(), cfg), ConfigError);
}

TEST(BuildPool, MixedPairsStayInsideTheirParentsBounds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        PoolConfig cfg;
        cfg.n_queries = 25;
        cfg.n_mixed = 200;
        cfg.k = 2 + static_cast<int>(seed % 3);
        cfg.concentration = 0.5 * static_cast<double>(seed);
        cfg.calibration_len = 35;
        cfg.projection_len = 14;
        cfg.seed = seed;
        const auto pool = build_pool(pool_grid(), cfg);
        for (std::size_t m = pool.n_queries; m < pool.pairs.size(); ++m) {
            const auto& pair = pool.pairs[m];
            const auto& prov = pair.provenance;
            ASSERT_EQ(prov.parents.size(), static_cast<std::size_t>(cfg.k));
            auto sorted = prov.parents;
            std::sort(sorted.begin(), sorted.end());
            EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
            for (std::size_t t = 0; t < pair.projection.size(); ++t) {
                double lo = INFINITY, hi = -INFINITY;
                for (auto p : prov.parents) {
                    ASSERT_LT(p, pool.n_queries);
                    lo = std::min(lo, pool.pairs[p].projection[t]);
                    hi = std::max(hi, pool.pairs[p].projection[t]);
                }
                const double slack = 1e-12 * std::max(1.0, hi);
                EXPECT_GE(pair.projection[t], lo - slack);
                EXPECT_LE(pair.projection[t], hi + slack);
            }
            EXPECT_TRUE(std::equal(pair.observation.begin(), pair.observation.end(), pair.projection.begin()));
        }
    }
}

TEST(BuildPool, DeterministicAndWorkerIndependent) {
    PoolConfig cfg;
    cfg.n_queries = 40;
    cfg.n_mixed = 160;
    cfg.calibration_len = 21;
    cfg.projection_len = 7;
    cfg.seed = 8;
    const auto a = build_pool(pool_grid(), cfg);
    cfg.workers = 4;
    const auto b = build_pool(pool_grid(), cfg);
    EXPECT_EQ(a, b);
    cfg.seed = 9;
    EXPECT_NE(a, build_pool(pool_grid(), cfg));
}

TEST(PoolFile, RoundTripsAndIsByteStable) {
    PoolConfig cfg;
    cfg.n_queries = 12;
    cfg.n_mixed = 30;
    cfg.k = 3;
    cfg.calibration_len = 14;
    cfg.projection_len = 7;
    cfg.seed = 2;
    const auto pool = build_pool(pool_grid(), cfg);
    std::stringstream first, second;
    write_pool(first, pool);
    write_pool(second, build_pool(pool_grid(), cfg));
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(read_pool(first), pool);

    std::stringstream junk("not a pool at all");
    EXPECT_THROW(read_pool(junk), DataError);
    std::string truncated = second.str().substr(0, 200);
    std::stringstream cut(truncated);
    EXPECT_THROW(read_pool(cut), DataError);
}

TEST(SelectSubset, UniformWithoutReplacement) {
    const auto idx = select_subset(1000, 100, 3);
    ASSERT_EQ(idx.size(), 100u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    EXPECT_EQ(idx, select_subset(1000, 100, 3));
    EXPECT_EQ(select_subset(10, 50, 3).size(), 10u);
}
