// kdepi command-line pipeline.
//
// Every subcommand reads one JSON config. Flags override config fields and
// are folded into the config document before it is parsed, so the manifest
// hash always describes the effective settings. Precedence: flag > config
// file > built-in default.
//
// Exit codes: 0 success, 1 unexpected failure, 2 config error, 3 data error,
// 4 numerical divergence.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kdepi/kdepi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::string> run_dir;
    std::optional<int> workers;
    std::vector<std::string> sets;  // dotted.path=json-value
};

// "train.epochs=10" -> doc["train"]["epochs"] = 10. Values parse as JSON and
// fall back to plain strings.
void apply_set(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw kdepi::ConfigError("--set expects path=value, got '" + assignment + "'");
    json value;
    const std::string text = assignment.substr(eq + 1);
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream path(assignment.substr(0, eq));
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        if (!node->contains(parts[k]) || !(*node)[parts[k]].is_object()) (*node)[parts[k]] = json::object();
        node = &(*node)[parts[k]];
    }
    (*node)[parts.back()] = std::move(value);
}

json load_document(const Common& c, const std::map<std::string, json>& overrides) {
    json doc = kdepi::read_json_file(c.config_path);
    for (const auto& [path, value] : overrides) apply_set(doc, path + "=" + value.dump());
    if (c.workers) apply_set(doc, "search.workers=" + std::to_string(*c.workers));
    if (c.run_dir) doc["run_dir"] = *c.run_dir;
    for (const auto& s : c.sets) apply_set(doc, s);
    return doc;
}

fs::path ensure_run_dir(const kdepi::RunConfig& cfg) {
    fs::path dir(cfg.run_dir);
    fs::create_directories(dir);
    return dir;
}

// manifest.json accumulates one entry per subcommand; it never records wall
// clock timestamps so reruns produce identical manifests.
void update_manifest(const fs::path& dir, const kdepi::RunConfig& cfg, const std::string& command,
                     const json& outputs) {
    const fs::path path = dir / "manifest.json";
    json manifest = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        manifest = json::parse(in, nullptr, false);
        if (manifest.is_discarded()) manifest = json::object();
    }
    manifest["config_hash"] = kdepi::config_hash(cfg.raw);
    manifest["seeds"] = {{"teacher", cfg.seeds.teacher},
                         {"coarse", cfg.seeds.coarse},
                         {"pool", cfg.seeds.pool},
                         {"subset", cfg.seeds.subset},
                         {"train", cfg.seeds.train}};
    manifest["config"] = cfg.raw;
    manifest["stages"][command] = {{"config_hash", kdepi::config_hash(cfg.raw)}, {"outputs", outputs}};
    std::ofstream out(path);
    out << manifest.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw kdepi::DataError("cannot write " + path.string());
    out << text;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// simulate

// Key spec: either a JSON file with an array of explicit communities
//   [{"population": N, "exposed": E0, "infectious": I0, "recovered": R0,
//     "beta": b, "sigma": s, "gamma": g, "alpha": 0, "mu": 0}, ...]
// or grid indices into the teacher grid, "p,ic,beta,sigma,gamma;..." .
std::vector<kdepi::CommunityParams> parse_key_spec(const kdepi::RunConfig& cfg, const std::string& key_file,
                                                   const std::string& indices) {
    std::vector<kdepi::CommunityParams> key;
    if (!key_file.empty()) {
        const json j = kdepi::read_json_file(key_file);
        if (!j.is_array() || j.empty()) throw kdepi::ConfigError("key file must hold a non-empty array of communities");
        try {
            for (const auto& c : j) {
                auto p = kdepi::make_community(c.at("population").get<double>(), c.value("exposed", 0.0),
                                               c.value("infectious", 0.0), c.value("recovered", 0.0),
                                               c.at("beta").get<double>(), c.at("sigma").get<double>(),
                                               c.at("gamma").get<double>());
                p.alpha = c.value("alpha", 0.0);
                p.mu = c.value("mu", 0.0);
                p.validate();
                key.push_back(p);
            }
        } catch (const json::exception& e) {
            throw kdepi::ConfigError(std::string("key file: ") + e.what());
        } catch (const kdepi::InvalidStateError& e) {
            throw kdepi::ConfigError(std::string("key file: ") + e.what());
        }
        return key;
    }
    if (indices.empty()) throw kdepi::ConfigError("simulate needs --key or --indices");
    std::vector<kdepi::GridIndex> parsed;
    std::stringstream communities(indices);
    std::string community;
    while (std::getline(communities, community, ';')) {
        kdepi::GridIndex idx{};
        std::stringstream fields(community);
        std::string f;
        std::size_t d = 0;
        while (std::getline(fields, f, ',')) {
            if (d >= idx.size()) throw kdepi::ConfigError("grid index needs exactly 5 fields: " + community);
            try {
                idx[d++] = static_cast<std::uint32_t>(std::stoul(f));
            } catch (const std::exception&) {
                throw kdepi::ConfigError("bad grid index '" + f + "'");
            }
        }
        if (d != idx.size()) throw kdepi::ConfigError("grid index needs exactly 5 fields: " + community);
        parsed.push_back(idx);
    }
    try {
        return kdepi::key_from_indices(cfg.teacher_grid, parsed).communities;
    } catch (const std::out_of_range& e) {
        throw kdepi::ConfigError(std::string("grid index out of range: ") + e.what());
    }
}

int cmd_simulate(const kdepi::RunConfig& cfg, const std::string& key_file, const std::string& indices, int horizon,
                 double dt, const std::string& cases_region) {
    const auto key = parse_key_spec(cfg, key_file, indices);
    if (horizon <= 0) horizon = cfg.calibration_len() + cfg.projection_len();
    const auto traj = kdepi::simulate_mixture(key, horizon, dt);
    const auto dir = ensure_run_dir(cfg);

    std::ostringstream csv;
    csv << "day,S,E,I,R,incidence\n";
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
        const auto& x = traj.states[t];
        csv << t << ',' << num(x.s) << ',' << num(x.e) << ',' << num(x.i) << ',' << num(x.r) << ','
            << (t < traj.incidence.size() ? num(traj.incidence[t]) : std::string{}) << '\n';
    }
    write_text(dir / "trajectory.csv", csv.str());
    json outputs = {"trajectory.csv"};

    // Optional synthetic case file: cumulative counts in the long layout,
    // dated so that day 0 of the simulation is the calibration start.
    if (!cases_region.empty()) {
        std::ostringstream cases;
        cases << "date,region,count\n";
        double cumulative = 0.0;
        for (std::size_t t = 0; t < traj.incidence.size(); ++t) {
            cumulative += traj.incidence[t];
            cases << kdepi::format_date(cfg.cal_start + std::chrono::days{static_cast<long>(t)}) << ',' << cases_region
                  << ',' << num(cumulative) << '\n';
        }
        write_text(dir / "cases.csv", cases.str());
        outputs.push_back("cases.csv");
    }
    update_manifest(dir, cfg, "simulate", outputs);
    std::cout << "simulated " << key.size() << " communities for " << horizon << " days -> "
              << (dir / "trajectory.csv").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// build-teacher-grid

int cmd_build_teacher_grid(const kdepi::RunConfig& cfg, std::size_t export_keys) {
    const auto dir = ensure_run_dir(cfg);
    json summary = {{"teacher", kdepi::grid_summary(cfg.teacher_grid)},
                    {"coarse", kdepi::grid_summary(cfg.coarse_grid)},
                    {"teacher_samples", cfg.teacher_samples},
                    {"coarse_samples", cfg.coarse_samples}};
    write_text(dir / "grid.json", summary.dump(2) + "\n");
    json outputs = {"grid.json"};
    if (export_keys > 0) {
        const auto keys = kdepi::sample_scenarios(cfg.teacher_grid, export_keys, cfg.seeds.teacher);
        std::ostringstream csv;
        csv << "scenario,community,population,ic,beta,sigma,gamma\n";
        for (std::size_t k = 0; k < keys.size(); ++k)
            for (std::size_t c = 0; c < keys[k].grid_indices.size(); ++c) {
                const auto& g = keys[k].grid_indices[c];
                csv << k << ',' << c << ',' << g[0] << ',' << g[1] << ',' << g[2] << ',' << g[3] << ',' << g[4] << '\n';
            }
        write_text(dir / "teacher_keys.csv", csv.str());
        outputs.push_back("teacher_keys.csv");
    }
    update_manifest(dir, cfg, "build-teacher-grid", outputs);
    std::cout << "teacher grid: " << cfg.teacher_grid.per_community_count() << " scenarios per community, "
              << cfg.teacher_grid.total_count_decimal() << " in total\n";
    return 0;
}

// ---------------------------------------------------------------------------
// build-pool / train

int cmd_build_pool(const kdepi::RunConfig& cfg) {
    const auto dir = ensure_run_dir(cfg);
    const auto start = std::chrono::steady_clock::now();
    const auto pool = kdepi::build_pool_for(cfg);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    kdepi::save_pool((dir / "pool.bin").string(), pool);
    update_manifest(dir, cfg, "build-pool", json{"pool.bin"});
    std::cout << "pool: " << pool.n_queries << " query + " << pool.pairs.size() - pool.n_queries << " mixed pairs in "
              << seconds << " s -> " << (dir / "pool.bin").string() << '\n';
    return 0;
}

int cmd_train(const kdepi::RunConfig& cfg, std::string pool_path) {
    const auto dir = ensure_run_dir(cfg);
    if (pool_path.empty()) pool_path = (dir / "pool.bin").string();
    const auto pool = kdepi::load_pool(pool_path);
    const auto start = std::chrono::steady_clock::now();
    const auto result = kdepi::train_for(cfg, pool);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    kdepi::save_checkpoint((dir / "student.ckpt").string(), result.model);
    std::ofstream hist(dir / "loss_history.csv", std::ios::binary);
    kdepi::write_loss_history_csv(hist, result.history);
    update_manifest(dir, cfg, "train", json{"student.ckpt", "loss_history.csv"});
    std::cout << "trained " << result.model.parameter_count() << " parameters for " << result.history.size()
              << " epochs in " << seconds << " s, final loss " << result.history.back().loss << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// forecast / evaluate

kdepi::CaseSeries load_cases(const kdepi::RunConfig& cfg) {
    if (cfg.data_path.empty()) throw kdepi::ConfigError("eval.data is not set");
    if (cfg.region.empty()) throw kdepi::ConfigError("eval.region is not set");
    return kdepi::ingest_csv(cfg.data_path, cfg.region, cfg.ingest);
}

void write_forecast_csv(const fs::path& path, const kdepi::RunConfig& cfg, const std::vector<double>& daily) {
    std::ostringstream csv;
    csv << "date,window,daily_new\n";
    const auto cal = static_cast<std::size_t>(cfg.calibration_len());
    for (std::size_t t = 0; t < daily.size(); ++t)
        csv << kdepi::format_date(cfg.cal_start + std::chrono::days{static_cast<long>(t)}) << ','
            << (t < cal ? "calibration" : "projection") << ',' << num(daily[t]) << '\n';
    write_text(path, csv.str());
}

std::vector<double> read_forecast_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw kdepi::DataError("cannot open forecast " + path);
    std::string line;
    std::getline(in, line);
    std::vector<double> daily;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = kdepi::detail::split_csv_line(line);
        if (f.size() != 3) throw kdepi::DataError("malformed forecast row in " + path);
        daily.push_back(kdepi::detail::parse_count(f[2]));
    }
    return daily;
}

int cmd_forecast(const kdepi::RunConfig& cfg, const std::string& method, std::string checkpoint) {
    const auto dir = ensure_run_dir(cfg);
    const auto series = load_cases(cfg);
    const auto w = kdepi::window(series, cfg.cal_start, cfg.cal_end, cfg.proj_end);

    std::vector<double> daily;
    json timing = {{"method", method}};
    if (method == "student") {
        if (checkpoint.empty()) checkpoint = (dir / "student.ckpt").string();
        const auto model = kdepi::load_checkpoint(checkpoint);
        const auto start = std::chrono::steady_clock::now();
        daily = kdepi::predict(model, w.calibration);
        timing["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        timing["simulations"] = 0;
    } else if (method == "teacher" || method == "coarse") {
        const bool teacher = method == "teacher";
        const auto r = kdepi::forecast(w.calibration, teacher ? cfg.teacher_grid : cfg.coarse_grid,
                                       teacher ? cfg.teacher_samples : cfg.coarse_samples,
                                       teacher ? cfg.seeds.teacher : cfg.seeds.coarse, cfg.projection_len(), cfg.workers);
        daily = r.fitted_trajectory.incidence;
        timing["wall_time_s"] = r.wall_time;
        timing["simulations"] = r.scenarios_evaluated;
        write_text(dir / ("calibration_" + method + ".json"), kdepi::to_json(r).dump(2) + "\n");
    } else {
        throw kdepi::ConfigError("unknown forecast method '" + method + "' (student, teacher or coarse)");
    }
    const std::string name = "forecast_" + method + ".csv";
    write_forecast_csv(dir / name, cfg, daily);
    // timing lives outside the manifest so that reruns stay byte-identical
    write_text(dir / ("timing_" + method + ".json"), timing.dump(2) + "\n");
    update_manifest(dir, cfg, "forecast-" + method, json{name});
    std::cout << method << " forecast -> " << (dir / name).string() << " (" << timing["wall_time_s"].get<double>()
              << " s)\n";
    return 0;
}

int cmd_evaluate(const kdepi::RunConfig& cfg, const std::vector<std::string>& specs) {
    const auto dir = ensure_run_dir(cfg);
    const auto series = load_cases(cfg);
    const auto w = kdepi::window(series, cfg.cal_start, cfg.cal_end, cfg.proj_end);
    std::vector<double> observed = w.calibration;
    observed.insert(observed.end(), w.projection.begin(), w.projection.end());

    std::vector<std::string> entries = specs;
    if (entries.empty())
        for (const char* m : {"teacher", "coarse", "student"})
            if (fs::exists(dir / ("forecast_" + std::string(m) + ".csv"))) entries.push_back(m);
    if (entries.empty()) throw kdepi::ConfigError("no forecasts to evaluate");

    std::vector<kdepi::ModelForecast> forecasts;
    for (const auto& e : entries) {
        kdepi::ModelForecast f;
        const auto eq = e.find('=');
        std::string path;
        if (eq == std::string::npos) {
            f.name = e;
            path = (dir / ("forecast_" + e + ".csv")).string();
        } else {
            f.name = e.substr(0, eq);
            path = e.substr(eq + 1);
        }
        f.daily = read_forecast_csv(path);
        forecasts.push_back(std::move(f));
    }
    const auto rep = kdepi::compare_models(observed, forecasts, cfg.calibration_len(), cfg.projection_len(), cfg.cal_start);
    std::ostringstream text, csv, plot;
    kdepi::write_report_text(text, rep);
    kdepi::write_report_csv(csv, rep);
    kdepi::write_plot_csv(plot, rep);
    write_text(dir / "report.txt", text.str());
    write_text(dir / "report.csv", csv.str());
    write_text(dir / "plot.csv", plot.str());
    update_manifest(dir, cfg, "evaluate", json{"report.txt", "report.csv", "plot.csv"});
    std::cout << text.str();
    return 0;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const kdepi::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const kdepi::DataError*>(&e)) return 3;
    if (dynamic_cast<const kdepi::DivergenceError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Epidemic model distillation pipeline"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "JSON run config")->required()->check(CLI::ExistingFile);
        sub->add_option("--run-dir", common.run_dir, "output directory (overrides run_dir)");
        sub->add_option("--workers", common.workers, "worker threads (overrides search.workers)");
        sub->add_option("--set", common.sets, "override any config field, e.g. train.epochs=50");
    };
    std::map<std::string, json> overrides;
    auto add_override = [&](CLI::App* sub, const std::string& flag, const std::string& path, const std::string& help,
                            auto type_tag) {
        using T = decltype(type_tag);
        sub->add_option_function<T>(flag, [&overrides, path](const T& v) { overrides[path] = v; }, help);
    };

    auto* simulate = app.add_subcommand("simulate", "run the mixture SEIR model on an explicit key");
    add_common(simulate);
    std::string key_file, indices, cases_region;
    int horizon = 0;
    double dt = 1.0;
    simulate->add_option("--key", key_file, "JSON file listing explicit communities");
    simulate->add_option("--indices", indices, "teacher grid indices, 'p,ic,beta,sigma,gamma;...'");
    simulate->add_option("--horizon", horizon, "days to simulate (default: calibration + projection)");
    simulate->add_option("--dt", dt, "Euler step in days; 1/dt must be an integer");
    simulate->add_option("--emit-cases", cases_region, "also write cases.csv for this region name");

    auto* grid = app.add_subcommand("build-teacher-grid", "summarise the teacher and coarse grids");
    add_common(grid);
    std::size_t export_keys = 0;
    grid->add_option("--export-keys", export_keys, "write this many sampled teacher keys");
    add_override(grid, "--n-samples", "search.teacher_samples", "teacher samples", std::size_t{});
    add_override(grid, "--seed", "seeds.teacher", "teacher sampling seed", std::uint64_t{});

    auto* pool = app.add_subcommand("build-pool", "query the teacher and append mixed pairs");
    add_common(pool);
    add_override(pool, "--n-queries", "pool.n_queries", "query pairs", std::size_t{});
    add_override(pool, "--n-mixed", "pool.n_mixed", "mixed pairs", std::size_t{});
    add_override(pool, "--k", "pool.k", "parents per mixed pair", int{});
    add_override(pool, "--concentration", "pool.concentration", "Dirichlet concentration", double{});
    add_override(pool, "--seed", "seeds.pool", "pool seed", std::uint64_t{});

    auto* train = app.add_subcommand("train", "train the student network on a pool subset");
    add_common(train);
    std::string pool_path;
    train->add_option("--pool", pool_path, "pool file (default: <run_dir>/pool.bin)");
    add_override(train, "--epochs", "train.epochs", "training epochs", int{});
    add_override(train, "--subset", "train.subset", "training subset size", std::size_t{});
    add_override(train, "--lr", "train.learning_rate", "learning rate", double{});
    add_override(train, "--seed", "seeds.train", "training seed", std::uint64_t{});

    auto* fc = app.add_subcommand("forecast", "produce a calibration + projection forecast");
    add_common(fc);
    std::string method = "student", checkpoint;
    fc->add_option("--method", method, "student, teacher or coarse");
    fc->add_option("--checkpoint", checkpoint, "student checkpoint (default: <run_dir>/student.ckpt)");
    add_override(fc, "--n-samples", "search.teacher_samples", "teacher samples", std::size_t{});
    add_override(fc, "--data", "eval.data", "case CSV", std::string{});
    add_override(fc, "--region", "eval.region", "region name", std::string{});

    auto* ev = app.add_subcommand("evaluate", "score forecasts against reported cases");
    add_common(ev);
    std::vector<std::string> specs;
    ev->add_option("--forecast", specs, "name or name=path; default: every forecast_*.csv in the run dir");
    add_override(ev, "--data", "eval.data", "case CSV", std::string{});
    add_override(ev, "--region", "eval.region", "region name", std::string{});

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = kdepi::parse_run_config(load_document(common, overrides));
        if (simulate->parsed()) return cmd_simulate(cfg, key_file, indices, horizon, dt, cases_region);
        if (grid->parsed()) return cmd_build_teacher_grid(cfg, export_keys);
        if (pool->parsed()) return cmd_build_pool(cfg);
        if (train->parsed()) return cmd_train(cfg, pool_path);
        if (fc->parsed()) return cmd_forecast(cfg, method, checkpoint);
        if (ev->parsed()) return cmd_evaluate(cfg, specs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return 1;
}
