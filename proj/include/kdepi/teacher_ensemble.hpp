#pragma once

// The teacher: a discrete ensemble of mixture-SEIR scenarios, randomly
// sampled and calibrated against an observation series by minimum MSE.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdepi/epi_core.hpp"
#include "kdepi/errors.hpp"
#include "kdepi/rng.hpp"

namespace kdepi {

// One initial-condition option. In count mode the fields are persons; in
// fraction mode they are fractions of the community population.
struct IcChoice {
    double exposed = 0.0;
    double infectious = 0.0;
    double recovered = 0.0;
    bool as_fraction = false;

    friend bool operator==(const IcChoice&, const IcChoice&) = default;
};

// Order of the per-community choice dimensions inside a GridIndex.
enum Dim : std::size_t { kPopulation = 0, kIc = 1, kBeta = 2, kSigma = 3, kGamma = 4, kNumDims = 5 };

using GridIndex = std::array<std::uint32_t, kNumDims>;

struct ParameterGrid {
    int n_communities = 1;
    std::vector<double> population_choices;
    std::vector<IcChoice> ic_choices;
    std::vector<double> beta_choices;
    std::vector<double> sigma_choices;
    std::vector<double> gamma_choices;

    std::array<std::size_t, kNumDims> dim_sizes() const {
        return {population_choices.size(), ic_choices.size(), beta_choices.size(),
                sigma_choices.size(), gamma_choices.size()};
    }

    void validate() const {
        if (n_communities < 1) throw ConfigError("grid needs at least one community");
        for (std::size_t n : dim_sizes())
            if (n == 0) throw ConfigError("every grid choice list must be non-empty");
        for (double p : population_choices)
            if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("population choices must be positive");
        for (const auto* list : {&beta_choices, &sigma_choices, &gamma_choices})
            for (double v : *list)
                if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("rate choices must be positive");
        const double min_pop = *std::min_element(population_choices.begin(), population_choices.end());
        for (const auto& ic : ic_choices) {
            if (ic.exposed < 0.0 || ic.infectious < 0.0 || ic.recovered < 0.0)
                throw ConfigError("initial-condition choices must be non-negative");
            const double seeded = ic.exposed + ic.infectious + ic.recovered;
            if (ic.as_fraction ? seeded > 1.0 : seeded > min_pop)
                throw ConfigError("initial-condition choice exceeds the smallest community population");
        }
    }

    std::uint64_t per_community_count() const {
        std::uint64_t n = 1;
        for (std::size_t d : dim_sizes()) {
            if (n > std::numeric_limits<std::uint64_t>::max() / d)
                throw ConfigError("per-community scenario count overflows 64 bits");
            n *= d;
        }
        return n;
    }

    double total_count_log10() const {
        return n_communities * std::log10(static_cast<double>(per_community_count()));
    }

    // Exact decimal expansion of per_community_count()^n_communities.
    std::string total_count_decimal() const {
        // little-endian base-1e9 limbs
        std::vector<std::uint64_t> limbs{1};
        const std::uint64_t base = per_community_count();
        for (int k = 0; k < n_communities; ++k) {
            unsigned __int128 carry = 0;
            for (auto& limb : limbs) {
                const unsigned __int128 v = static_cast<unsigned __int128>(limb) * base + carry;
                limb = static_cast<std::uint64_t>(v % 1000000000u);
                carry = v / 1000000000u;
            }
            while (carry > 0) {
                limbs.push_back(static_cast<std::uint64_t>(carry % 1000000000u));
                carry /= 1000000000u;
            }
        }
        std::string out = std::to_string(limbs.back());
        for (auto it = limbs.rbegin() + 1; it != limbs.rend(); ++it) {
            std::string chunk = std::to_string(*it);
            out += std::string(9 - chunk.size(), '0') + chunk;
        }
        return out;
    }
};

struct ScenarioKey {
    std::vector<CommunityParams> communities;
    std::vector<GridIndex> grid_indices;  // one entry per community

    friend bool operator==(const ScenarioKey&, const ScenarioKey&) = default;
};

inline CommunityParams community_from_index(const ParameterGrid& grid, const GridIndex& idx) {
    const auto sizes = grid.dim_sizes();
    for (std::size_t d = 0; d < kNumDims; ++d)
        if (idx[d] >= sizes[d]) throw ConfigError("grid index out of range");
    const double n = grid.population_choices[idx[kPopulation]];
    const IcChoice& ic = grid.ic_choices[idx[kIc]];
    const double scale = ic.as_fraction ? n : 1.0;
    return make_community(n, ic.exposed * scale, ic.infectious * scale, ic.recovered * scale,
                          grid.beta_choices[idx[kBeta]], grid.sigma_choices[idx[kSigma]],
                          grid.gamma_choices[idx[kGamma]]);
}

inline ScenarioKey key_from_indices(const ParameterGrid& grid, std::vector<GridIndex> indices) {
    if (indices.size() != static_cast<std::size_t>(grid.n_communities))
        throw ConfigError("scenario key must have one index tuple per community");
    ScenarioKey key;
    key.communities.reserve(indices.size());
    for (const auto& idx : indices) key.communities.push_back(community_from_index(grid, idx));
    key.grid_indices = std::move(indices);
    return key;
}

// n keys, each dimension of each community drawn independently and uniformly
// (with replacement).
inline std::vector<ScenarioKey> sample_scenarios(const ParameterGrid& grid, std::size_t n,
                                                 std::uint64_t seed) {
    if (n < 1) throw ConfigError("must sample at least one scenario");
    grid.validate();
    Rng rng = make_rng(seed, 0x5CE7A);
    const auto sizes = grid.dim_sizes();
    std::vector<ScenarioKey> keys;
    keys.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<GridIndex> indices(static_cast<std::size_t>(grid.n_communities));
        for (auto& idx : indices)
            for (std::size_t d = 0; d < kNumDims; ++d)
                idx[d] = static_cast<std::uint32_t>(uniform_index(rng, sizes[d]));
        keys.push_back(key_from_indices(grid, std::move(indices)));
    }
    return keys;
}

// Candidate score as reduced across workers: ordered by (mse, index).
struct ScoredIndex {
    double mse = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();

    bool better_than(const ScoredIndex& other) const {
        return mse < other.mse || (mse == other.mse && index < other.index);
    }
};

// Deterministic argmin over a list of scores; ties go to the lowest index.
inline ScoredIndex best_of(std::span<const double> scores) {
    ScoredIndex best;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        const ScoredIndex cand{scores[k], k};
        if (std::isfinite(cand.mse) && cand.better_than(best)) best = cand;
    }
    return best;
}

struct CalibrationResult {
    ScenarioKey best_key;
    std::size_t best_index = 0;
    double fit_mse = 0.0;            // (persons/day)^2 over the calibration window
    Trajectory fitted_trajectory;    // calibration + projection window
    std::size_t scenarios_evaluated = 0;
    double wall_time = 0.0;          // seconds
};

inline double calibration_mse(std::span<const double> simulated, std::span<const double> observed) {
    double acc = 0.0;
    for (std::size_t t = 0; t < observed.size(); ++t) {
        const double d = simulated[t] - observed[t];
        acc += d * d;
    }
    return acc / static_cast<double>(observed.size());
}

// Minimum-MSE search over `keys`. Candidates are scored on the calibration
// window only, in contiguous chunks per worker; the chunk winners are reduced
// by (mse, index) so the result does not depend on the worker count.
inline CalibrationResult calibrate(std::span<const double> observation,
                                   std::span<const ScenarioKey> keys, int calibration_len,
                                   int projection_len, int workers = 1) {
    const auto start = std::chrono::steady_clock::now();
    if (calibration_len < 1 || projection_len < 0)
        throw ConfigError("calibration window must be at least one day");
    if (observation.size() != static_cast<std::size_t>(calibration_len))
        throw DataError("observation length does not match the calibration window");
    if (keys.empty()) throw ConfigError("no candidate scenarios to calibrate");
    workers = std::max(1, std::min<int>(workers, static_cast<int>(keys.size())));

    std::vector<ScoredIndex> chunk_best(static_cast<std::size_t>(workers));
    std::vector<std::size_t> chunk_ok(static_cast<std::size_t>(workers), 0);
    auto run_chunk = [&](int w) {
        const std::size_t lo = keys.size() * static_cast<std::size_t>(w) / workers;
        const std::size_t hi = keys.size() * static_cast<std::size_t>(w + 1) / workers;
        std::vector<double> sim(static_cast<std::size_t>(calibration_len));
        ScoredIndex best;
        std::size_t ok = 0;
        for (std::size_t k = lo; k < hi; ++k) {
            try {
                mixture_incidence(keys[k].communities, std::span<double>(sim));
            } catch (const Error&) {
                continue;
            }
            ++ok;
            const ScoredIndex cand{calibration_mse(sim, observation), k};
            if (std::isfinite(cand.mse) && cand.better_than(best)) best = cand;
        }
        chunk_best[static_cast<std::size_t>(w)] = best;
        chunk_ok[static_cast<std::size_t>(w)] = ok;
    };
    if (workers == 1) {
        run_chunk(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
        for (auto& th : pool) th.join();
    }

    ScoredIndex best;
    std::size_t evaluated = 0;
    for (std::size_t w = 0; w < chunk_best.size(); ++w) {
        evaluated += chunk_ok[w];
        if (chunk_best[w].better_than(best)) best = chunk_best[w];
    }
    if (evaluated == 0 || best.index == std::numeric_limits<std::size_t>::max())
        throw InvalidStateError("every candidate scenario failed to simulate");

    CalibrationResult result;
    result.best_key = keys[best.index];
    result.best_index = best.index;
    result.fit_mse = best.mse;
    result.fitted_trajectory = simulate_mixture(result.best_key.communities, calibration_len + projection_len);
    result.scenarios_evaluated = evaluated;
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// Sampled-search forecast: sample_scenarios followed by calibrate. The
// reported wall time covers both stages.
inline CalibrationResult forecast(std::span<const double> observation, const ParameterGrid& grid,
                                  std::size_t n_samples, std::uint64_t seed, int projection_len,
                                  int workers = 1) {
    const auto start = std::chrono::steady_clock::now();
    const auto keys = sample_scenarios(grid, n_samples, seed);
    auto result = calibrate(observation, keys, static_cast<int>(observation.size()), projection_len, workers);
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// ---------------------------------------------------------------------------
// Config parsing and export

namespace detail {

// A choice list is either an explicit array or a generator object
// {"linspace": [lo, hi, n]} / {"logspace": [lo, hi, n]}.
inline std::vector<double> parse_choices(const nlohmann::json& j, const char* name) {
    if (j.is_array()) {
        std::vector<double> out;
        for (const auto& v : j) {
            if (!v.is_number()) throw ConfigError(std::string(name) + ": choices must be numbers");
            out.push_back(v.get<double>());
        }
        return out;
    }
    if (j.is_object() && (j.contains("linspace") || j.contains("logspace"))) {
        const bool log = j.contains("logspace");
        const auto& spec = log ? j.at("logspace") : j.at("linspace");
        if (!spec.is_array() || spec.size() != 3)
            throw ConfigError(std::string(name) + ": range must be [lo, hi, count]");
        const double lo = spec[0].get<double>();
        const double hi = spec[1].get<double>();
        const int n = spec[2].get<int>();
        if (n < 1) throw ConfigError(std::string(name) + ": range count must be positive");
        if (log && !(lo > 0.0 && hi > 0.0)) throw ConfigError(std::string(name) + ": logspace bounds must be positive");
        std::vector<double> out;
        for (int k = 0; k < n; ++k) {
            const double f = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
            out.push_back(log ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))) : lo + f * (hi - lo));
        }
        return out;
    }
    throw ConfigError(std::string(name) + ": expected a list or a linspace/logspace range");
}

}  // namespace detail

inline ParameterGrid grid_from_config(const nlohmann::json& cfg) {
    try {
        ParameterGrid grid;
        grid.n_communities = cfg.at("n_communities").get<int>();
        grid.population_choices = detail::parse_choices(cfg.at("population"), "population");
        grid.beta_choices = detail::parse_choices(cfg.at("beta"), "beta");
        grid.sigma_choices = detail::parse_choices(cfg.at("sigma"), "sigma");
        grid.gamma_choices = detail::parse_choices(cfg.at("gamma"), "gamma");
        for (const auto& ic : cfg.at("ic")) {
            IcChoice c;
            c.as_fraction = ic.value("fraction", false);
            c.exposed = ic.value("exposed", 0.0);
            c.infectious = ic.value("infectious", 0.0);
            c.recovered = ic.value("recovered", 0.0);
            grid.ic_choices.push_back(c);
        }
        grid.validate();
        return grid;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid config: ") + e.what());
    }
}

inline nlohmann::json grid_summary(const ParameterGrid& grid) {
    nlohmann::json j;
    j["n_communities"] = grid.n_communities;
    j["population"] = grid.population_choices;
    j["beta"] = grid.beta_choices;
    j["sigma"] = grid.sigma_choices;
    j["gamma"] = grid.gamma_choices;
    j["ic"] = nlohmann::json::array();
    for (const auto& ic : grid.ic_choices)
        j["ic"].push_back({{"exposed", ic.exposed}, {"infectious", ic.infectious},
                           {"recovered", ic.recovered}, {"fraction", ic.as_fraction}});
    j["per_community_scenarios"] = grid.per_community_count();
    j["total_scenarios"] = grid.total_count_decimal();
    j["total_scenarios_log10"] = grid.total_count_log10();
    return j;
}

inline nlohmann::json community_to_json(const CommunityParams& c) {
    return {{"population", c.population},
            {"initial", {c.initial.s, c.initial.e, c.initial.i, c.initial.r}},
            {"beta", c.beta}, {"sigma", c.sigma}, {"gamma", c.gamma},
            {"alpha", c.alpha}, {"mu", c.mu}};
}

inline nlohmann::json to_json(const ScenarioKey& key) {
    nlohmann::json j;
    j["communities"] = nlohmann::json::array();
    for (const auto& c : key.communities) j["communities"].push_back(community_to_json(c));
    j["grid_indices"] = nlohmann::json::array();
    for (const auto& idx : key.grid_indices) j["grid_indices"].push_back(idx);
    return j;
}

// Wall time is left out so that exported results are reproducible byte for byte.
inline nlohmann::json to_json(const CalibrationResult& r) {
    nlohmann::json j;
    j["best_key"] = to_json(r.best_key);
    j["best_index"] = r.best_index;
    j["fit_mse"] = r.fit_mse;
    j["scenarios_evaluated"] = r.scenarios_evaluated;
    j["incidence"] = r.fitted_trajectory.incidence;
    return j;
}

}  // namespace kdepi
