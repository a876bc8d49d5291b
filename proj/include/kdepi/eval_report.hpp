#pragma once

// Forecast scoring. Metrics are computed on weekly sums of the daily series,
// separately for the calibration and projection windows.

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kdepi/data_pipeline.hpp"
#include "kdepi/errors.hpp"

namespace kdepi {

struct MapeResult {
    double value = 0.0;
    std::size_t excluded = 0;  // observed entries equal to zero
};

// mean |o - m| / |o| over entries with o != 0.
inline MapeResult mape(std::span<const double> observed, std::span<const double> modeled) {
    if (observed.size() != modeled.size()) throw DataError("MAPE inputs differ in length");
    if (observed.empty()) throw DataError("MAPE of an empty series");
    MapeResult r;
    double acc = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
        if (observed[k] == 0.0) {
            ++r.excluded;
            continue;
        }
        acc += std::abs((observed[k] - modeled[k]) / observed[k]);
    }
    if (r.excluded == observed.size()) throw DataError("MAPE undefined: every observed value is zero");
    r.value = acc / static_cast<double>(observed.size() - r.excluded);
    return r;
}

inline double rmse(std::span<const double> observed, std::span<const double> modeled) {
    if (observed.size() != modeled.size()) throw DataError("RMSE inputs differ in length");
    if (observed.empty()) throw DataError("RMSE of an empty series");
    double acc = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
        const double d = observed[k] - modeled[k];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(observed.size()));
}

struct ModelForecast {
    std::string name;
    std::vector<double> daily;            // calibration + projection window, persons/day
    std::optional<double> scenarios;      // simulations needed for one forecast
    std::optional<double> wall_time;      // seconds
};

struct WindowScore {
    double mape = 0.0;
    std::size_t mape_excluded = 0;
    double rmse = 0.0;  // persons/week
};

struct ModelScore {
    std::string name;
    WindowScore calibration;
    WindowScore projection;
    std::vector<double> horizon_mape;  // one entry per projection week, NaN if observed is zero
    std::optional<double> scenarios;
    std::optional<double> wall_time;
};

struct EvalReport {
    Date cal_start{};
    int calibration_len = 0;
    int projection_len = 0;
    std::vector<double> observed_cal_weekly;
    std::vector<double> observed_proj_weekly;
    std::vector<ModelScore> models;
    std::vector<std::vector<double>> cal_weekly;   // per model
    std::vector<std::vector<double>> proj_weekly;  // per model
};

inline EvalReport compare_models(std::span<const double> observed, std::span<const ModelForecast> forecasts,
                                 int calibration_len, int projection_len, Date cal_start = {}) {
    const auto cal = static_cast<std::size_t>(calibration_len);
    const auto total = cal + static_cast<std::size_t>(projection_len);
    if (calibration_len < 7 || projection_len < 7)
        throw ConfigError("both windows must contain at least one whole week");
    if (observed.size() != total) throw DataError("observed series does not cover both windows");

    EvalReport rep;
    rep.cal_start = cal_start;
    rep.calibration_len = calibration_len;
    rep.projection_len = projection_len;
    rep.observed_cal_weekly = weekly_aggregate(observed.subspan(0, cal)).values;
    rep.observed_proj_weekly = weekly_aggregate(observed.subspan(cal)).values;

    for (const auto& f : forecasts) {
        if (f.daily.size() != total)
            throw DataError("forecast '" + f.name + "' is not aligned with the evaluation windows");
        const std::span<const double> daily(f.daily);
        auto cw = weekly_aggregate(daily.subspan(0, cal)).values;
        auto pw = weekly_aggregate(daily.subspan(cal)).values;
        ModelScore s;
        s.name = f.name;
        const auto mc = mape(rep.observed_cal_weekly, cw);
        const auto mp = mape(rep.observed_proj_weekly, pw);
        s.calibration = {mc.value, mc.excluded, rmse(rep.observed_cal_weekly, cw)};
        s.projection = {mp.value, mp.excluded, rmse(rep.observed_proj_weekly, pw)};
        for (std::size_t h = 0; h < pw.size(); ++h) {
            const double o = rep.observed_proj_weekly[h];
            s.horizon_mape.push_back(o == 0.0 ? std::nan("") : std::abs((o - pw[h]) / o));
        }
        s.scenarios = f.scenarios;
        s.wall_time = f.wall_time;
        rep.models.push_back(std::move(s));
        rep.cal_weekly.push_back(std::move(cw));
        rep.proj_weekly.push_back(std::move(pw));
    }
    return rep;
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace detail

// Aligned-text summary mirroring the calibration/projection error table,
// followed by per-horizon MAPE and the complexity record.
inline void write_report_text(std::ostream& os, const EvalReport& rep) {
    os << "Weekly-aggregated errors (MAPE dimensionless, RMSE in 1e5 persons/week)\n";
    os << "calibration window: " << rep.calibration_len << " days from " << format_date(rep.cal_start)
       << ", projection window: " << rep.projection_len << " days\n\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s %12s %12s %12s %12s\n", "model", "cal MAPE", "cal RMSE", "proj MAPE",
                  "proj RMSE");
    os << line;
    for (const auto& m : rep.models) {
        std::snprintf(line, sizeof(line), "%-12s %12.4f %12.3f %12.4f %12.3f\n", m.name.c_str(), m.calibration.mape,
                      m.calibration.rmse / 1e5, m.projection.mape, m.projection.rmse / 1e5);
        os << line;
    }
    os << "\nProjection MAPE by horizon\n";
    for (const auto& m : rep.models) {
        std::snprintf(line, sizeof(line), "%-12s", m.name.c_str());
        os << line;
        for (std::size_t h = 0; h < m.horizon_mape.size(); ++h)
            os << "  " << (h + 1) << "w " << detail::fmt("%.4f", m.horizon_mape[h]);
        os << "\n";
    }
    bool any_complexity = false;
    for (const auto& m : rep.models) any_complexity |= m.scenarios.has_value() || m.wall_time.has_value();
    if (any_complexity) {
        os << "\nComplexity per forecast\n";
        for (const auto& m : rep.models) {
            std::snprintf(line, sizeof(line), "%-12s simulations %-12s time(s) %s\n", m.name.c_str(),
                          m.scenarios ? detail::fmt("%.0f", *m.scenarios).c_str() : "n/a",
                          m.wall_time ? detail::fmt("%.4g", *m.wall_time).c_str() : "n/a");
            os << line;
        }
    }
}

// One row per (model, window): raw and 1e5-scaled RMSE plus excluded counts.
inline void write_report_csv(std::ostream& os, const EvalReport& rep) {
    os << "model,window,mape,mape_excluded,rmse,rmse_1e5\n";
    for (const auto& m : rep.models) {
        for (const auto& [window, score] : {std::pair{"calibration", m.calibration}, std::pair{"projection", m.projection}}) {
            os << m.name << ',' << window << ',' << detail::fmt("%.17g", score.mape) << ',' << score.mape_excluded << ','
               << detail::fmt("%.17g", score.rmse) << ',' << detail::fmt("%.17g", score.rmse / 1e5) << '\n';
        }
    }
    for (const auto& m : rep.models)
        for (std::size_t h = 0; h < m.horizon_mape.size(); ++h)
            os << m.name << ",week_" << (h + 1) << "_ahead," << detail::fmt("%.17g", m.horizon_mape[h]) << ",,,\n";
}

// Plot data: week start date, window, observed and one column per model.
inline void write_plot_csv(std::ostream& os, const EvalReport& rep) {
    os << "week_start,window,observed";
    for (const auto& m : rep.models) os << ',' << m.name;
    os << '\n';
    auto rows = [&](const std::vector<double>& obs, const std::vector<std::vector<double>>& per_model,
                    const char* window, long offset_days) {
        for (std::size_t w = 0; w < obs.size(); ++w) {
            os << format_date(rep.cal_start + std::chrono::days{offset_days + static_cast<long>(7 * w)}) << ','
               << window << ',' << detail::fmt("%.17g", obs[w]);
            for (const auto& series : per_model) os << ',' << detail::fmt("%.17g", series[w]);
            os << '\n';
        }
    };
    rows(rep.observed_cal_weekly, rep.cal_weekly, "calibration", 0);
    rows(rep.observed_proj_weekly, rep.proj_weekly, "projection", rep.calibration_len);
}

}  // namespace kdepi
