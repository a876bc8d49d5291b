#pragma once

// Reported-case ingestion: cumulative counts to daily incidence and 7-day
// active cases, calendar windowing and weekly aggregation.
//
// Two CSV layouts are accepted:
//   wide: one header row whose date columns hold cumulative counts, one row
//         per region (non-date columns are identifiers, matched against the
//         region name; several matching rows are summed)
//   long: header "date,region,count" with one cumulative count per row
// Dates may be written M/D/YY, M/D/YYYY or YYYY-MM-DD.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdepi/errors.hpp"

namespace kdepi {

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_date(std::string_view text) {
    auto to_int = [](std::string_view s, int& out) {
        if (s.empty()) return false;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc{} && p == s.data() + s.size();
    };
    int y = 0, m = 0, d = 0;
    if (const auto dash1 = text.find('-'); dash1 != std::string_view::npos) {
        const auto dash2 = text.find('-', dash1 + 1);
        if (dash2 == std::string_view::npos) return std::nullopt;
        if (!to_int(text.substr(0, dash1), y) || !to_int(text.substr(dash1 + 1, dash2 - dash1 - 1), m) ||
            !to_int(text.substr(dash2 + 1), d))
            return std::nullopt;
    } else if (const auto s1 = text.find('/'); s1 != std::string_view::npos) {
        const auto s2 = text.find('/', s1 + 1);
        if (s2 == std::string_view::npos) return std::nullopt;
        if (!to_int(text.substr(0, s1), m) || !to_int(text.substr(s1 + 1, s2 - s1 - 1), d) ||
            !to_int(text.substr(s2 + 1), y))
            return std::nullopt;
        if (text.size() - s2 - 1 <= 2) y += 2000;
    } else {
        return std::nullopt;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

inline Date parse_date_or_throw(std::string_view text) {
    auto d = parse_date(text);
    if (!d) throw ConfigError("cannot parse date '" + std::string(text) + "'");
    return *d;
}

inline std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

inline long days_between(Date from, Date to) { return (to - from).count(); }

// Trailing 7-day sum; the first six days use the available prefix.
inline std::vector<double> active_cases(std::span<const double> daily_new) {
    std::vector<double> active(daily_new.size(), 0.0);
    double window = 0.0;
    for (std::size_t t = 0; t < daily_new.size(); ++t) {
        window += daily_new[t];
        if (t >= 7) window -= daily_new[t - 7];
        active[t] = window;
    }
    return active;
}

struct CaseSeries {
    std::string region;
    Date start{};
    std::vector<double> cumulative;  // non-decreasing after correction
    std::vector<double> daily_new;   // daily_new[0] is 0: no earlier record
    std::vector<double> active;
    std::size_t clamped_days = 0;    // negative differences replaced by 0

    std::size_t size() const { return daily_new.size(); }
    Date date(std::size_t k) const { return start + std::chrono::days{static_cast<long>(k)}; }

    // Recompute active cases after daily_new changed.
    void refresh_active() { active = active_cases(daily_new); }

    friend bool operator==(const CaseSeries&, const CaseSeries&) = default;
};

// Dips in the cumulative count are treated as reporting corrections: the
// daily difference is clamped to zero. A dip larger than max_correction times
// the previous cumulative value is rejected.
inline CaseSeries from_cumulative(std::string region, Date start, std::vector<double> cumulative,
                                  double max_correction = 0.5) {
    if (cumulative.empty()) throw DataError("empty case series for " + region);
    CaseSeries s;
    s.region = std::move(region);
    s.start = start;
    s.daily_new.assign(cumulative.size(), 0.0);
    for (std::size_t t = 0; t < cumulative.size(); ++t) {
        if (!std::isfinite(cumulative[t]) || cumulative[t] < 0.0)
            throw DataError("invalid cumulative count in " + s.region);
        if (t == 0) continue;
        const double diff = cumulative[t] - cumulative[t - 1];
        if (diff < 0.0) {
            if (-diff > max_correction * cumulative[t - 1])
                throw DataError("cumulative count for " + s.region + " drops by more than the correction threshold on " +
                                format_date(s.date(t)));
            ++s.clamped_days;
        }
        s.daily_new[t] = std::max(diff, 0.0);
    }
    s.cumulative = std::move(cumulative);
    s.refresh_active();
    return s;
}

inline CaseSeries from_daily(std::string region, Date start, std::vector<double> daily) {
    if (daily.empty()) throw DataError("empty case series for " + region);
    CaseSeries s;
    s.region = std::move(region);
    s.start = start;
    double acc = 0.0;
    for (double& v : daily) {
        if (!std::isfinite(v)) throw DataError("invalid daily count in " + s.region);
        if (v < 0.0) {
            v = 0.0;
            ++s.clamped_days;
        }
        acc += v;
        s.cumulative.push_back(acc);
    }
    s.daily_new = std::move(daily);
    s.refresh_active();
    return s;
}

// Trailing moving average over `width` days; width <= 1 leaves the series as is.
inline void smooth_daily(CaseSeries& s, int width) {
    if (width <= 1) return;
    std::vector<double> out(s.daily_new.size());
    for (std::size_t t = 0; t < out.size(); ++t) {
        const std::size_t lo = t + 1 >= static_cast<std::size_t>(width) ? t + 1 - static_cast<std::size_t>(width) : 0;
        double sum = 0.0;
        for (std::size_t k = lo; k <= t; ++k) sum += s.daily_new[k];
        out[t] = sum / static_cast<double>(t - lo + 1);
    }
    s.daily_new = std::move(out);
    s.refresh_active();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                field += '"';
                ++k;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline double parse_count(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) return 0.0;
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size()) throw DataError("cannot parse count '" + t + "'");
    return v;
}

}  // namespace detail

struct IngestOptions {
    double max_correction = 0.5;
    int smoothing_window = 0;
};

inline CaseSeries ingest_csv(std::istream& in, const std::string& region, const IngestOptions& opt = {}) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);

    std::vector<std::pair<Date, double>> points;
    if (header.size() == 3 && header[0] == "date" && header[1] == "region" && header[2] == "count") {
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            const auto f = detail::split_csv_line(line);
            if (f.size() != 3) throw DataError("malformed long-format row: " + line);
            if (detail::trim(f[1]) != region) continue;
            auto d = parse_date(detail::trim(f[0]));
            if (!d) throw DataError("bad date in long-format row: " + line);
            points.emplace_back(*d, detail::parse_count(f[2]));
        }
        std::sort(points.begin(), points.end());
    } else {
        std::vector<std::size_t> date_cols, id_cols;
        std::vector<Date> dates;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (auto d = parse_date(header[c])) {
                date_cols.push_back(c);
                dates.push_back(*d);
            } else {
                id_cols.push_back(c);
            }
        }
        if (date_cols.empty()) throw DataError("CSV header has no date columns");
        std::vector<double> sum(dates.size(), 0.0);
        std::size_t matched = 0;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            const auto f = detail::split_csv_line(line);
            const bool hit = std::any_of(id_cols.begin(), id_cols.end(),
                                         [&](std::size_t c) { return c < f.size() && detail::trim(f[c]) == region; });
            if (!hit) continue;
            ++matched;
            for (std::size_t k = 0; k < date_cols.size(); ++k)
                sum[k] += date_cols[k] < f.size() ? detail::parse_count(f[date_cols[k]]) : 0.0;
        }
        if (matched == 0) throw DataError("region '" + region + "' not found");
        for (std::size_t k = 0; k < dates.size(); ++k) points.emplace_back(dates[k], sum[k]);
    }
    if (points.empty()) throw DataError("region '" + region + "' not found");
    for (std::size_t k = 1; k < points.size(); ++k)
        if (days_between(points[k - 1].first, points[k].first) != 1)
            throw DataError("dates are not contiguous around " + format_date(points[k].first));

    std::vector<double> cumulative;
    for (const auto& p : points) cumulative.push_back(p.second);
    CaseSeries s = from_cumulative(region, points.front().first, std::move(cumulative), opt.max_correction);
    smooth_daily(s, opt.smoothing_window);
    return s;
}

inline CaseSeries ingest_csv(const std::string& path, const std::string& region, const IngestOptions& opt = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return ingest_csv(in, region, opt);
}

struct WindowedSeries {
    std::vector<double> calibration;  // [cal_start, cal_end]
    std::vector<double> projection;   // (cal_end, proj_end]
    Date cal_start{};
};

inline WindowedSeries window(const CaseSeries& s, Date cal_start, Date cal_end, Date proj_end) {
    if (cal_end < cal_start) throw ConfigError("calibration end precedes its start");
    if (proj_end < cal_end) throw ConfigError("projection end precedes calibration end");
    const long first = days_between(s.start, cal_start);
    const long last = days_between(s.start, proj_end);
    if (first < 0 || last >= static_cast<long>(s.size()))
        throw DataError("window dates fall outside the series for " + s.region);
    const long split = days_between(s.start, cal_end) + 1;
    WindowedSeries w;
    w.cal_start = cal_start;
    w.calibration.assign(s.daily_new.begin() + first, s.daily_new.begin() + split);
    w.projection.assign(s.daily_new.begin() + split, s.daily_new.begin() + last + 1);
    return w;
}

struct WeeklySeries {
    std::vector<double> values;
    std::size_t dropped_days = 0;  // trailing partial week
};

// Non-overlapping 7-day sums starting at `anchor_offset`.
inline WeeklySeries weekly_aggregate(std::span<const double> daily, std::size_t anchor_offset = 0) {
    if (daily.empty()) throw DataError("cannot aggregate an empty series");
    if (anchor_offset > daily.size()) throw DataError("weekly anchor lies beyond the series");
    WeeklySeries w;
    const std::size_t n = daily.size() - anchor_offset;
    for (std::size_t k = 0; k + 7 <= n; k += 7) {
        double sum = 0.0;
        for (std::size_t d = 0; d < 7; ++d) sum += daily[anchor_offset + k + d];
        w.values.push_back(sum);
    }
    w.dropped_days = n % 7;
    return w;
}

inline WeeklySeries weekly_aggregate(const CaseSeries& s, Date anchor) {
    const long offset = days_between(s.start, anchor);
    if (offset < 0) throw DataError("weekly anchor precedes the series");
    return weekly_aggregate(s.daily_new, static_cast<std::size_t>(offset));
}

// Canonical export: date,daily_new,active,weekly_bucket (week index from the
// series start).
inline void write_series_csv(std::ostream& os, const CaseSeries& s) {
    os << "date,daily_new,active,weekly_bucket\n";
    char buf[128];
    for (std::size_t k = 0; k < s.size(); ++k) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%zu\n", s.daily_new[k], s.active[k], k / 7);
        os << format_date(s.date(k)) << buf;
    }
}

}  // namespace kdepi
