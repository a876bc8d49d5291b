#pragma once

// Run configuration shared by every pipeline stage, plus the stage
// compositions used by the CLI: query + mixup pool, student training and
// sampled-search forecasts.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdepi/data_pipeline.hpp"
#include "kdepi/distill_pool.hpp"
#include "kdepi/errors.hpp"
#include "kdepi/student_net.hpp"
#include "kdepi/teacher_ensemble.hpp"

namespace kdepi {

struct Seeds {
    std::uint64_t teacher = 1;  // teacher scenario sampling
    std::uint64_t coarse = 2;   // coarse scenario sampling
    std::uint64_t pool = 3;     // query keys and mixup draws
    std::uint64_t subset = 4;   // training subset selection
    std::uint64_t train = 5;    // weight init and batch shuffling
};

struct RunConfig {
    ParameterGrid teacher_grid;
    ParameterGrid coarse_grid;
    std::size_t teacher_samples = 10'000'000;
    std::size_t coarse_samples = 100'000;
    int workers = 1;

    Date cal_start{};
    Date cal_end{};
    Date proj_end{};

    PoolConfig pool;
    std::size_t train_subset = 1000;
    double normalization_scale = 0.0;  // global mode; <= 0: peak of the training subset
    TrainConfig train;

    std::string region;
    std::string data_path;
    IngestOptions ingest;

    std::string run_dir = "run";
    Seeds seeds;
    nlohmann::json raw;  // the merged document the fields were read from

    int calibration_len() const { return static_cast<int>(days_between(cal_start, cal_end)) + 1; }
    int projection_len() const { return static_cast<int>(days_between(cal_end, proj_end)); }
};

// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + name + "'");
}

inline Normalization parse_normalization(const std::string& name) {
    if (name == "per_sequence") return Normalization::per_sequence;
    if (name == "global") return Normalization::global;
    throw ConfigError("unknown normalization '" + name + "'");
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig c;
    c.raw = j;
    try {
        const auto& grid = j.at("grid");
        c.teacher_grid = grid_from_config(grid.at("teacher"));
        c.coarse_grid = grid.contains("coarse") ? grid_from_config(grid.at("coarse")) : c.teacher_grid;

        const auto search = j.value("search", nlohmann::json::object());
        c.teacher_samples = search.value("teacher_samples", c.teacher_samples);
        c.coarse_samples = search.value("coarse_samples", c.coarse_samples);
        c.workers = search.value("workers", c.workers);

        const auto& dates = j.at("dates");
        c.cal_start = parse_date_or_throw(dates.at("cal_start").get<std::string>());
        c.cal_end = parse_date_or_throw(dates.at("cal_end").get<std::string>());
        c.proj_end = parse_date_or_throw(dates.at("proj_end").get<std::string>());
        if (c.calibration_len() < 1 || c.projection_len() < 1)
            throw ConfigError("dates must give positive calibration and projection windows");

        const auto seeds = j.value("seeds", nlohmann::json::object());
        c.seeds.teacher = seeds.value("teacher", c.seeds.teacher);
        c.seeds.coarse = seeds.value("coarse", c.seeds.coarse);
        c.seeds.pool = seeds.value("pool", c.seeds.pool);
        c.seeds.subset = seeds.value("subset", c.seeds.subset);
        c.seeds.train = seeds.value("train", c.seeds.train);

        const auto pool = j.value("pool", nlohmann::json::object());
        c.pool.n_queries = pool.value("n_queries", c.pool.n_queries);
        c.pool.n_mixed = pool.value("n_mixed", c.pool.n_mixed);
        c.pool.k = pool.value("k", c.pool.k);
        c.pool.concentration = pool.value("concentration", c.pool.concentration);
        c.pool.calibration_len = c.calibration_len();
        c.pool.projection_len = c.projection_len();
        c.pool.seed = c.seeds.pool;
        c.pool.workers = c.workers;

        const auto train = j.value("train", nlohmann::json::object());
        c.train_subset = train.value("subset", c.train_subset);
        if (train.contains("normalization_scale") && train.at("normalization_scale").is_number())
            c.normalization_scale = train.at("normalization_scale").get<double>();
        c.train.batch_size = train.value("batch_size", c.train.batch_size);
        c.train.learning_rate = train.value("learning_rate", c.train.learning_rate);
        c.train.weight_decay = train.value("weight_decay", c.train.weight_decay);
        c.train.epochs = train.value("epochs", c.train.epochs);
        c.train.lr_decay_epochs = train.value("lr_decay_epochs", c.train.lr_decay_epochs);
        c.train.lr_decay_factor = train.value("lr_decay_factor", c.train.lr_decay_factor);
        c.train.hidden = train.value("hidden", c.train.hidden);
        c.train.activation = parse_activation(train.value("activation", std::string("relu")));
        c.train.normalization = parse_normalization(train.value("normalization", std::string("per_sequence")));
        c.train.seed = c.seeds.train;
        c.train.validate();

        const auto eval = j.value("eval", nlohmann::json::object());
        c.region = eval.value("region", std::string{});
        c.data_path = eval.value("data", std::string{});
        c.ingest.max_correction = eval.value("max_correction", c.ingest.max_correction);
        c.ingest.smoothing_window = eval.value("smoothing_window", c.ingest.smoothing_window);

        c.run_dir = j.value("run_dir", c.run_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (c.workers < 1) throw ConfigError("workers must be at least 1");
    return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
        return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Stage compositions

inline Pool build_pool_for(const RunConfig& c) { return build_pool(c.teacher_grid, c.pool); }

inline std::vector<std::size_t> training_subset_for(const RunConfig& c, const Pool& pool) {
    return select_subset(pool.pairs.size(), c.train_subset, c.seeds.subset);
}

inline TrainResult train_for(const RunConfig& c, const Pool& pool) {
    if (pool.calibration_len != c.calibration_len() || pool.projection_len != c.projection_len())
        throw ConfigError("pool windows do not match the configured dates");
    const auto subset = training_subset_for(c, pool);
    return train_student(pool, subset, c.train, c.normalization_scale);
}

}  // namespace kdepi
