#pragma once

// Teacher queries, sequence mixup and the persisted training pool.
//
// A query pair is the simulated incidence of one scenario key: the
// observation covers the calibration window and the projection covers the
// calibration plus projection window. A mixed pair is the convex combination
// of k query pairs, with the same weights applied to both sequences. Because
// every community update is homogeneous of degree one in (S, E, I, R, N), a
// mixed pair is itself the incidence of a valid mixture society made of the
// parents' communities scaled by their weights.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "kdepi/epi_core.hpp"
#include "kdepi/errors.hpp"
#include "kdepi/rng.hpp"
#include "kdepi/teacher_ensemble.hpp"

namespace kdepi {

struct Provenance {
    enum class Kind : std::uint8_t { query = 0, mixup = 1 };
    Kind kind = Kind::query;
    std::vector<GridIndex> key_indices;   // query pairs
    std::vector<std::uint64_t> parents;   // mixup pairs: pool indices
    std::vector<double> weights;          // mixup pairs

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct SequencePair {
    std::vector<double> observation;  // calibration window
    std::vector<double> projection;   // calibration + projection window
    Provenance provenance;

    friend bool operator==(const SequencePair&, const SequencePair&) = default;
};

struct MixWeights {
    std::vector<double> w;

    void validate() const {
        double sum = 0.0;
        for (double v : w) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("mix weights must be non-negative");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("mix weights must sum to one");
    }
};

inline SequencePair query_by_key(const ScenarioKey& key, int calibration_len, int projection_len) {
    if (calibration_len < 1 || projection_len < 0) throw ConfigError("invalid window lengths");
    SequencePair pair;
    pair.projection = mixture_incidence(key.communities, calibration_len + projection_len);
    pair.observation.assign(pair.projection.begin(), pair.projection.begin() + calibration_len);
    pair.provenance.kind = Provenance::Kind::query;
    pair.provenance.key_indices = key.grid_indices;
    return pair;
}

// Elementwise convex combination. `parent_ids` are recorded in the
// provenance; pass an empty span when the parents are not pool members.
inline SequencePair mixup(std::span<const SequencePair* const> pairs, const MixWeights& weights,
                          std::span<const std::uint64_t> parent_ids = {}) {
    if (pairs.empty() || pairs.size() != weights.w.size())
        throw ConfigError("mixup needs one weight per parent pair");
    weights.validate();
    const std::size_t obs_len = pairs[0]->observation.size();
    const std::size_t proj_len = pairs[0]->projection.size();
    for (const auto* p : pairs)
        if (p->observation.size() != obs_len || p->projection.size() != proj_len)
            throw DataError("mixup parents differ in sequence length");

    SequencePair out;
    out.observation.assign(obs_len, 0.0);
    out.projection.assign(proj_len, 0.0);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const double w = weights.w[k];
        for (std::size_t t = 0; t < obs_len; ++t) out.observation[t] += w * pairs[k]->observation[t];
        for (std::size_t t = 0; t < proj_len; ++t) out.projection[t] += w * pairs[k]->projection[t];
    }
    out.provenance.kind = Provenance::Kind::mixup;
    out.provenance.parents.assign(parent_ids.begin(), parent_ids.end());
    out.provenance.weights = weights.w;
    return out;
}

inline SequencePair mixup(std::span<const SequencePair> pairs, const MixWeights& weights) {
    std::vector<const SequencePair*> ptrs;
    for (const auto& p : pairs) ptrs.push_back(&p);
    return mixup(std::span<const SequencePair* const>(ptrs), weights);
}

namespace detail {

inline MixWeights dirichlet(Rng& rng, int k, double concentration) {
    MixWeights out;
    if (std::isinf(concentration)) {
        out.w.assign(static_cast<std::size_t>(k), 1.0 / k);
        return out;
    }
    out.w.resize(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (double& v : out.w) {
        v = gamma_draw(rng, concentration);
        sum += v;
    }
    if (!(sum > 0.0)) {
        // every gamma draw underflowed; only reachable for tiny concentrations
        out.w.assign(static_cast<std::size_t>(k), 0.0);
        out.w[uniform_index(rng, static_cast<std::uint64_t>(k))] = 1.0;
        return out;
    }
    for (double& v : out.w) v /= sum;
    return out;
}

}  // namespace detail

// Dirichlet(concentration * 1_k) draw. An infinite concentration yields the
// uniform weights 1/k.
inline MixWeights sample_weights(int k, double concentration, std::uint64_t seed) {
    if (k < 2) throw ConfigError("mixup needs at least two parents");
    if (!(concentration > 0.0)) throw ConfigError("Dirichlet concentration must be positive");
    Rng rng = make_rng(seed, 0xD1C7);
    return detail::dirichlet(rng, k, concentration);
}

struct PoolConfig {
    std::size_t n_queries = 1000;
    std::size_t n_mixed = 99000;
    int k = 2;
    double concentration = 1.0;
    int calibration_len = 140;
    int projection_len = 21;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct Pool {
    int calibration_len = 0;
    int projection_len = 0;
    std::size_t n_queries = 0;        // the first n_queries pairs are query pairs
    std::vector<SequencePair> pairs;

    friend bool operator==(const Pool&, const Pool&) = default;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = n * w / workers; i < n * (w + 1) / workers; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Query n_queries sampled keys, then append n_mixed convex combinations of k
// distinct query pairs. Every mixed element draws from its own RNG stream, so
// the pool is identical for any worker count.
inline Pool build_pool(const ParameterGrid& grid, const PoolConfig& cfg) {
    if (cfg.k < 2) throw ConfigError("mixup needs at least two parents");
    if (cfg.n_queries < static_cast<std::size_t>(cfg.k))
        throw ConfigError("not enough query pairs for the chosen number of mixup parents");
    if (!(cfg.concentration > 0.0)) throw ConfigError("Dirichlet concentration must be positive");

    const auto keys = sample_scenarios(grid, cfg.n_queries, cfg.seed);
    Pool pool;
    pool.calibration_len = cfg.calibration_len;
    pool.projection_len = cfg.projection_len;
    pool.n_queries = cfg.n_queries;
    pool.pairs.resize(cfg.n_queries + cfg.n_mixed);

    detail::parallel_for(cfg.n_queries, cfg.workers, [&](std::size_t q) {
        pool.pairs[q] = query_by_key(keys[q], cfg.calibration_len, cfg.projection_len);
    });

    detail::parallel_for(cfg.n_mixed, cfg.workers, [&](std::size_t m) {
        Rng rng = make_rng(cfg.seed, 0x100000000ULL + m);
        // k distinct parents, rejection on repeats
        std::vector<std::uint64_t> parents;
        parents.reserve(static_cast<std::size_t>(cfg.k));
        while (parents.size() < static_cast<std::size_t>(cfg.k)) {
            const std::uint64_t cand = uniform_index(rng, cfg.n_queries);
            if (std::find(parents.begin(), parents.end(), cand) == parents.end()) parents.push_back(cand);
        }
        const MixWeights w = detail::dirichlet(rng, cfg.k, cfg.concentration);
        std::vector<const SequencePair*> ptrs;
        for (auto p : parents) ptrs.push_back(&pool.pairs[p]);
        pool.pairs[cfg.n_queries + m] = mixup(std::span<const SequencePair* const>(ptrs), w, parents);
    });
    return pool;
}

// Uniform random subset without replacement, kept in pool order. The whole
// pool is returned when size >= pool size.
inline std::vector<std::size_t> select_subset(std::size_t pool_size, std::size_t size, std::uint64_t seed) {
    std::vector<std::size_t> idx(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) idx[i] = i;
    if (size >= pool_size) return idx;
    Rng rng = make_rng(seed, 0x5B5E7);
    for (std::size_t i = 0; i < size; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, pool_size - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Pool file, version 1. All integers and doubles little-endian.
//
//   header:  magic "KDEPOOL\0" | u32 version | u32 calibration_len |
//            u32 projection_len | u32 reserved (0) | u64 n_queries | u64 n_mixed
//   record:  f64[calibration_len] observation |
//            f64[calibration_len + projection_len] projection |
//            u8 kind, then
//              kind 0 (query): u32 n_communities, n_communities x 5 x u32 grid indices
//              kind 1 (mixup): u32 k, k x u64 parent ids, k x f64 weights

inline constexpr char kPoolMagic[8] = {'K', 'D', 'E', 'P', 'O', 'O', 'L', '\0'};
inline constexpr std::uint32_t kPoolVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("unexpected end of binary file");
    return v;
}

inline void put_doubles(std::ostream& os, std::span<const double> v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

inline std::vector<double> get_doubles(std::istream& is, std::size_t n) {
    std::vector<double> v(n);
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw DataError("unexpected end of binary file");
    return v;
}

}  // namespace io

inline void write_pool(std::ostream& os, const Pool& pool) {
    os.write(kPoolMagic, sizeof(kPoolMagic));
    io::put<std::uint32_t>(os, kPoolVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(pool.calibration_len));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(pool.projection_len));
    io::put<std::uint32_t>(os, 0);
    io::put<std::uint64_t>(os, pool.n_queries);
    io::put<std::uint64_t>(os, pool.pairs.size() - pool.n_queries);
    for (const auto& pair : pool.pairs) {
        io::put_doubles(os, pair.observation);
        io::put_doubles(os, pair.projection);
        const auto& prov = pair.provenance;
        io::put<std::uint8_t>(os, static_cast<std::uint8_t>(prov.kind));
        if (prov.kind == Provenance::Kind::query) {
            io::put<std::uint32_t>(os, static_cast<std::uint32_t>(prov.key_indices.size()));
            for (const auto& idx : prov.key_indices)
                for (auto v : idx) io::put<std::uint32_t>(os, v);
        } else {
            io::put<std::uint32_t>(os, static_cast<std::uint32_t>(prov.parents.size()));
            for (auto p : prov.parents) io::put<std::uint64_t>(os, p);
            io::put_doubles(os, prov.weights);
        }
    }
    if (!os) throw DataError("failed to write pool file");
}

inline Pool read_pool(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kPoolMagic, sizeof(magic)) != 0)
        throw DataError("not a pool file");
    if (io::get<std::uint32_t>(is) != kPoolVersion) throw DataError("unsupported pool file version");
    Pool pool;
    pool.calibration_len = static_cast<int>(io::get<std::uint32_t>(is));
    pool.projection_len = static_cast<int>(io::get<std::uint32_t>(is));
    io::get<std::uint32_t>(is);
    pool.n_queries = io::get<std::uint64_t>(is);
    const auto n_mixed = io::get<std::uint64_t>(is);
    const auto obs_len = static_cast<std::size_t>(pool.calibration_len);
    const auto proj_len = static_cast<std::size_t>(pool.calibration_len + pool.projection_len);
    pool.pairs.resize(pool.n_queries + n_mixed);
    for (auto& pair : pool.pairs) {
        pair.observation = io::get_doubles(is, obs_len);
        pair.projection = io::get_doubles(is, proj_len);
        const auto kind = io::get<std::uint8_t>(is);
        if (kind == 0) {
            pair.provenance.kind = Provenance::Kind::query;
            pair.provenance.key_indices.resize(io::get<std::uint32_t>(is));
            for (auto& idx : pair.provenance.key_indices)
                for (auto& v : idx) v = io::get<std::uint32_t>(is);
        } else if (kind == 1) {
            pair.provenance.kind = Provenance::Kind::mixup;
            const auto k = io::get<std::uint32_t>(is);
            pair.provenance.parents.resize(k);
            for (auto& p : pair.provenance.parents) p = io::get<std::uint64_t>(is);
            pair.provenance.weights = io::get_doubles(is, k);
        } else {
            throw DataError("corrupt pool record");
        }
    }
    return pool;
}

inline void save_pool(const std::string& path, const Pool& pool) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    write_pool(os, pool);
}

inline Pool load_pool(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open pool file " + path);
    return read_pool(is);
}

}  // namespace kdepi
