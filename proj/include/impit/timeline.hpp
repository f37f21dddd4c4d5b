#pragma once

/// @file timeline.hpp
///
/// Calendar dates, regular time grids, signals and recurring seasons.
///
/// Every signal lives on a regular grid (daily, monthly or every N days).
/// Positions on the grid are exchanged as integer *ordinals* so that
/// "number of steps between two observations" is a plain subtraction.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impit/csv.hpp"
#include "impit/error.hpp"

namespace impit {

// ---------------------------------------------------------------------------
// Dates
// ---------------------------------------------------------------------------

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
  static constexpr int table[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return (m == 2 && is_leap(y)) ? 29 : table[m - 1];
}

/// Gregorian calendar date at daily resolution.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date &) const = default;

  bool valid() const {
    return month >= 1 && month <= 12 && day >= 1 && day <= days_in_month(year, month);
  }

  /// Days since 1970-01-01 (proleptic Gregorian).
  std::int64_t days() const {
    const int y = year - (month <= 2 ? 1 : 0);
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned mp = (month + 9) % 12;
    const unsigned doy = (153 * mp + 2) / 5 + static_cast<unsigned>(day) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
  }

  static Date from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const int d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    const int m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    const auto y = static_cast<int>(static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2 ? 1 : 0));
    return Date{y, m, d};
  }
};

/// Parses `YYYY-MM` (first of month) or `YYYY-MM-DD`.
inline std::optional<Date> parse_date(std::string_view s) {
  s = csv::trim(s);
  Date d;
  if (s.size() == 7 && s[4] == '-') {
    auto y = csv::to_integer(s.substr(0, 4));
    auto m = csv::to_integer(s.substr(5, 2));
    if (!y || !m) return std::nullopt;
    d = Date{static_cast<int>(*y), static_cast<int>(*m), 1};
  } else if (s.size() == 10 && s[4] == '-' && s[7] == '-') {
    auto y = csv::to_integer(s.substr(0, 4));
    auto m = csv::to_integer(s.substr(5, 2));
    auto dd = csv::to_integer(s.substr(8, 2));
    if (!y || !m || !dd) return std::nullopt;
    d = Date{static_cast<int>(*y), static_cast<int>(*m), static_cast<int>(*dd)};
  } else {
    return std::nullopt;
  }
  if (!d.valid()) return std::nullopt;
  return d;
}

inline std::string format_day(const Date &d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", d.year, d.month, d.day);
  return buf;
}

inline std::string format_month(const Date &d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d", d.year, d.month);
  return buf;
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Sampling grid of a signal. Monthly observations sit on the first of the month.
struct Resolution {
  enum class Kind { daily, monthly, custom };
  Kind kind = Kind::monthly;
  int step_days = 1; ///< custom only
  int phase = 0;     ///< custom only: days() mod step_days shared by every grid point

  static Resolution daily() { return {Kind::daily, 1, 0}; }
  static Resolution monthly() { return {Kind::monthly, 1, 0}; }
  static Resolution custom(int step, int phase = 0) { return {Kind::custom, step, phase}; }

  bool operator==(const Resolution &) const = default;

  bool on_grid(const Date &d) const {
    switch (kind) {
    case Kind::daily: return true;
    case Kind::monthly: return d.day == 1;
    case Kind::custom: return floor_mod(d.days(), step_days) == phase;
    }
    return false;
  }

  std::int64_t ordinal(const Date &d) const {
    switch (kind) {
    case Kind::daily: return d.days();
    case Kind::monthly: return static_cast<std::int64_t>(d.year) * 12 + (d.month - 1);
    case Kind::custom: return floor_div(d.days(), step_days);
    }
    return 0;
  }

  Date at(std::int64_t ord) const {
    switch (kind) {
    case Kind::daily: return Date::from_days(ord);
    case Kind::monthly: {
      const auto y = floor_div(ord, 12);
      return Date{static_cast<int>(y), static_cast<int>(ord - y * 12) + 1, 1};
    }
    case Kind::custom: return Date::from_days(ord * step_days + phase);
    }
    return {};
  }

  std::string format(const Date &d) const {
    return kind == Kind::monthly ? format_month(d) : format_day(d);
  }

  std::string name() const {
    switch (kind) {
    case Kind::daily: return "daily";
    case Kind::monthly: return "monthly";
    case Kind::custom: return "custom:" + std::to_string(step_days);
    }
    return "";
  }

  /// Accepts `daily`, `monthly` or `custom:N`.
  static std::optional<Resolution> parse(std::string_view s) {
    if (s == "daily") return daily();
    if (s == "monthly") return monthly();
    if (s.substr(0, 7) == "custom:") {
      auto n = csv::to_integer(s.substr(7));
      if (n && *n >= 1 && *n <= 366) return custom(static_cast<int>(*n));
    }
    return std::nullopt;
  }

private:
  static std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a / b - ((a % b != 0) && ((a < 0) != (b < 0)) ? 1 : 0);
  }
  static std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }
};

// ---------------------------------------------------------------------------
// Seasons
// ---------------------------------------------------------------------------

struct MonthDay {
  int month = 1;
  int day = 1;

  auto operator<=>(const MonthDay &) const = default;
  bool valid() const { return month >= 1 && month <= 12 && day >= 1 && day <= days_in_month(2000, month); }
  int key() const { return month * 100 + day; }

  static std::optional<MonthDay> parse(std::string_view s) {
    s = csv::trim(s);
    if (s.size() != 5 || s[2] != '-') return std::nullopt;
    auto m = csv::to_integer(s.substr(0, 2));
    auto d = csv::to_integer(s.substr(3, 2));
    if (!m || !d) return std::nullopt;
    MonthDay md{static_cast<int>(*m), static_cast<int>(*d)};
    if (!md.valid()) return std::nullopt;
    return md;
  }
  std::string str() const {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02d-%02d", month, day);
    return buf;
  }
};

/// Recurring annual window with inclusive endpoints; wraps the year boundary
/// when `end` precedes `start` (e.g. 11-15:02-10).
struct Season {
  MonthDay start{1, 1};
  MonthDay end{12, 31};

  bool operator==(const Season &) const = default;

  bool wraps() const { return end < start; }

  bool contains(const Date &d) const { return contains(MonthDay{d.month, d.day}); }
  bool contains(const MonthDay &md) const {
    return wraps() ? (md >= start || md <= end) : (md >= start && md <= end);
  }

  /// Season year an in-season date belongs to: the calendar year in which the
  /// containing occurrence started.
  int occurrence_year(const Date &d) const {
    return (wraps() && MonthDay{d.month, d.day} < start) ? d.year - 1 : d.year;
  }

  std::string str() const { return start.str() + ":" + end.str(); }

  /// Parses `MM-DD:MM-DD`.
  static std::optional<Season> parse(std::string_view s) {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto a = MonthDay::parse(s.substr(0, colon));
    auto b = MonthDay::parse(s.substr(colon + 1));
    if (!a || !b) return std::nullopt;
    return Season{*a, *b};
  }
};

/// Number of timestamps whose month-day falls inside `season`.
inline std::size_t season_overlap_length(std::span<const Date> members, const Season &season) {
  return static_cast<std::size_t>(
      std::count_if(members.begin(), members.end(), [&](const Date &d) { return season.contains(d); }));
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

/// Gap-free regular time series of one environmental variable.
class Signal {
public:
  Signal() = default;

  /// Validates the invariants; observations must already be sorted.
  Signal(std::string name, Resolution res, std::vector<Date> times, std::vector<double> values)
      : name_(std::move(name)), res_(res), times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size())
      fail_validation("length_mismatch", "timestamps and values differ in length");
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (!times_[i].valid()) fail_validation("bad_date", "invalid date in signal");
      if (!res_.on_grid(times_[i]))
        fail_validation("off_grid", "timestamp " + format_day(times_[i]) + " is not on the " +
                                        res_.name() + " grid");
      if (!std::isfinite(values_[i]))
        fail_validation("non_finite", "non-finite value at " + res_.format(times_[i]));
      if (i > 0) {
        const auto d = res_.ordinal(times_[i]) - res_.ordinal(times_[i - 1]);
        if (d == 0)
          fail_validation("duplicate_timestamp", "duplicate timestamp " + res_.format(times_[i]));
        if (d < 0) fail_validation("unsorted", "timestamps not increasing");
        if (d > 1)
          fail_validation("gap", "gap in regular grid: missing " +
                                     res_.format(res_.at(res_.ordinal(times_[i - 1]) + 1)));
      }
    }
  }

  const std::string &name() const { return name_; }
  const Resolution &resolution() const { return res_; }
  std::span<const Date> times() const { return times_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

  std::int64_t first_ordinal() const { return res_.ordinal(times_.front()); }
  std::int64_t last_ordinal() const { return res_.ordinal(times_.back()); }

  /// Position of a grid timestamp inside the signal, if covered.
  std::optional<std::size_t> index_of(const Date &d) const {
    if (empty() || !res_.on_grid(d)) return std::nullopt;
    const auto off = res_.ordinal(d) - first_ordinal();
    if (off < 0 || off >= static_cast<std::int64_t>(size())) return std::nullopt;
    return static_cast<std::size_t>(off);
  }

  /// `date,value` CSV that ingests back to an identical signal.
  std::string to_csv() const {
    std::string out = "date,value\n";
    for (std::size_t i = 0; i < size(); ++i)
      out += res_.format(times_[i]) + "," + csv::format(values_[i]) + "\n";
    return out;
  }

private:
  std::string name_;
  Resolution res_;
  std::vector<Date> times_;
  std::vector<double> values_;
};

/// Column mapping for signal CSV files. Empty names mean "date"/"value", or
/// the first two columns of a two-column file.
struct ColumnSchema {
  std::string time_column;
  std::string value_column;
};

inline std::pair<std::size_t, std::size_t> resolve_columns(const csv::Table &t, const ColumnSchema &schema) {
  auto pick = [&](const std::string &wanted, const char *fallback, std::size_t pos) -> std::size_t {
    if (!wanted.empty()) return t.require_column(wanted);
    if (auto c = t.column(fallback)) return *c;
    if (t.header.size() == 2) return pos;
    fail_validation("missing_column", std::string("missing column '") + fallback + "'");
  };
  return {pick(schema.time_column, "date", 0), pick(schema.value_column, "value", 1)};
}

/// Parses (timestamp, value) rows; rows may appear in any order.
inline std::vector<std::pair<Date, double>> parse_observations(const csv::Table &t, const ColumnSchema &schema,
                                                               bool *all_month_format = nullptr) {
  const auto [tc, vc] = resolve_columns(t, schema);
  std::vector<std::pair<Date, double>> rows;
  rows.reserve(t.rows.size());
  bool months = true;
  for (const auto &row : t.rows) {
    const auto &ts = row.fields[tc];
    auto d = parse_date(ts);
    if (!d)
      fail_validation("malformed_row",
                      "line " + std::to_string(row.line) + ": cannot parse timestamp '" + ts + "'");
    months = months && csv::trim(ts).size() == 7;
    auto v = csv::to_double(row.fields[vc]);
    if (!v)
      fail_validation("malformed_row", "line " + std::to_string(row.line) + ": cannot parse value '" +
                                           row.fields[vc] + "'");
    if (!std::isfinite(*v))
      fail_validation("non_finite", "line " + std::to_string(row.line) + ": non-finite value");
    rows.emplace_back(*d, *v);
  }
  std::stable_sort(rows.begin(), rows.end(), [](auto &a, auto &b) { return a.first < b.first; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].first == rows[i - 1].first)
      fail_validation("duplicate_timestamp", "duplicate timestamp " + format_day(rows[i].first));
  if (all_month_format) *all_month_format = months;
  return rows;
}

/// Builds a Signal from CSV text. Without an explicit resolution, `YYYY-MM`
/// stamps imply monthly and anything else daily. For `custom:N` grids the
/// phase is taken from the earliest timestamp.
inline Signal signal_from_csv(std::string_view text, std::string name, const ColumnSchema &schema = {},
                              std::optional<Resolution> resolution = std::nullopt) {
  const auto table = csv::parse(text);
  bool months = false;
  auto rows = parse_observations(table, schema, &months);
  if (rows.empty()) fail_validation("empty_signal", "signal file has no observations");
  Resolution res = resolution.value_or(months ? Resolution::monthly() : Resolution::daily());
  if (res.kind == Resolution::Kind::custom) {
    const auto d = rows.front().first.days();
    res.phase = static_cast<int>(((d % res.step_days) + res.step_days) % res.step_days);
  }
  std::vector<Date> times;
  std::vector<double> values;
  for (auto &[d, v] : rows) {
    times.push_back(d);
    values.push_back(v);
  }
  return Signal(std::move(name), res, std::move(times), std::move(values));
}

inline Signal ingest_signal(const std::string &path, const ColumnSchema &schema = {},
                            std::optional<Resolution> resolution = std::nullopt) {
  return signal_from_csv(csv::read_file(path), path, schema, resolution);
}

} // namespace impit
