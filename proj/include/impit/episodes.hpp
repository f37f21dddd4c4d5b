#pragma once

/// @file episodes.hpp
///
/// Extraction of discrete episodes from a Signal.
///
/// An episode is a contiguous run of grid observations. Four constructors are
/// provided: fixed-threshold runs, day-of-year climatology exceedances,
/// periodic season occurrences and user-supplied lists. Episodes of one set
/// never overlap and are kept in start order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "impit/csv.hpp"
#include "impit/error.hpp"
#include "impit/timeline.hpp"

namespace impit {

enum class EpisodeSource { threshold, climatology, periodic, user };
enum class Direction { up, down, none };

inline const char *to_string(EpisodeSource s) {
  switch (s) {
  case EpisodeSource::threshold: return "threshold";
  case EpisodeSource::climatology: return "climatology";
  case EpisodeSource::periodic: return "periodic";
  case EpisodeSource::user: return "user";
  }
  return "user";
}

inline const char *to_string(Direction d) {
  switch (d) {
  case Direction::up: return "up";
  case Direction::down: return "down";
  case Direction::none: return "n/a";
  }
  return "n/a";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "up") return Direction::up;
  if (s == "down") return Direction::down;
  return std::nullopt;
}

struct Episode {
  int id = 0;
  Date start;
  Date end;
  std::int64_t start_ordinal = 0; ///< grid position of `start`
  std::vector<double> values;     ///< oldest first; empty for lists loaded without a signal
  std::size_t n = 0;
  std::size_t tau = 0;
  bool ongoing = false; ///< run still open at the end of the signal
  std::optional<double> precomputed; ///< stored intensity (e.g. mean anomaly)

  std::int64_t end_ordinal() const { return start_ordinal + static_cast<std::int64_t>(n) - 1; }

  /// Intensity shown in tables: the stored value if any, else the member mean.
  std::optional<double> display_intensity() const {
    if (precomputed) return precomputed;
    if (values.empty()) return std::nullopt;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
};

struct EpisodeSet {
  EpisodeSource source = EpisodeSource::user;
  Direction direction = Direction::none;
  std::optional<double> threshold;
  int min_duration = 1;
  std::optional<Season> season;
  Resolution resolution;
  /// Grid ordinals covered by the source signal, when one is known.
  std::optional<std::pair<std::int64_t, std::int64_t>> span;
  std::vector<Episode> episodes;

  std::size_t size() const { return episodes.size(); }
};

/// Timestamps of the grid points [first, first + count).
inline std::vector<Date> grid_dates(const Resolution &res, std::int64_t first, std::size_t count) {
  std::vector<Date> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(res.at(first + static_cast<std::int64_t>(i)));
  return out;
}

inline std::size_t overlap_count(const Resolution &res, std::int64_t first, std::size_t count,
                                 const std::optional<Season> &season) {
  if (!season) return 0;
  std::size_t tau = 0;
  for (std::size_t i = 0; i < count; ++i)
    if (season->contains(res.at(first + static_cast<std::int64_t>(i)))) ++tau;
  return tau;
}

/// Checks ordering, disjointness and per-episode invariants.
inline void validate(const EpisodeSet &set) {
  for (std::size_t k = 0; k < set.episodes.size(); ++k) {
    const auto &e = set.episodes[k];
    if (e.n < 1) fail_validation("empty_episode", "episode " + std::to_string(e.id) + " has no members");
    if (!e.values.empty() && e.values.size() != e.n)
      fail_validation("length_mismatch", "episode " + std::to_string(e.id) + " value count differs from n");
    if (e.tau > e.n) fail_validation("tau_range", "episode " + std::to_string(e.id) + " has tau > n");
    if (k > 0) {
      const auto &p = set.episodes[k - 1];
      if (e.start_ordinal <= p.end_ordinal())
        fail_validation("overlap", "episodes " + std::to_string(p.id) + " and " + std::to_string(e.id) +
                                       " overlap");
    }
  }
}

namespace detail {

struct Run {
  std::size_t begin;
  std::size_t length;
};

template <class Pred>
std::vector<Run> maximal_runs(std::size_t size, Pred &&pred) {
  std::vector<Run> runs;
  std::size_t i = 0;
  while (i < size) {
    if (!pred(i)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < size && pred(j)) ++j;
    runs.push_back({i, j - i});
    i = j;
  }
  return runs;
}

inline Episode make_episode(const Signal &s, std::size_t begin, std::size_t length, int id,
                            const std::optional<Season> &season) {
  Episode e;
  e.id = id;
  e.start = s.times()[begin];
  e.end = s.times()[begin + length - 1];
  e.start_ordinal = s.resolution().ordinal(e.start);
  e.values.assign(s.values().begin() + static_cast<std::ptrdiff_t>(begin),
                  s.values().begin() + static_cast<std::ptrdiff_t>(begin + length));
  e.n = length;
  e.tau = season ? season_overlap_length(s.times().subspan(begin, length), *season) : 0;
  e.ongoing = begin + length == s.size();
  return e;
}

inline EpisodeSet base_set(const Signal &s, EpisodeSource src, const std::optional<Season> &season) {
  EpisodeSet set;
  set.source = src;
  set.season = season;
  set.resolution = s.resolution();
  set.span = std::make_pair(s.first_ordinal(), s.last_ordinal());
  return set;
}

} // namespace detail

/// Maximal runs with value >= delta (up) or <= delta (down) lasting at least
/// `min_duration` steps. A run touching the last observation is kept and
/// flagged `ongoing`.
inline EpisodeSet extract_threshold(const Signal &signal, double delta, Direction direction, int min_duration,
                                    const std::optional<Season> &season = std::nullopt) {
  if (signal.empty()) fail_validation("empty_signal", "signal is empty");
  if (min_duration < 1) fail_validation("min_duration", "minimum duration must be at least 1");
  if (direction == Direction::none) fail_validation("direction", "direction must be up or down");

  const auto v = signal.values();
  auto runs = detail::maximal_runs(v.size(), [&](std::size_t i) {
    return direction == Direction::up ? v[i] >= delta : v[i] <= delta;
  });

  auto set = detail::base_set(signal, EpisodeSource::threshold, season);
  set.direction = direction;
  set.threshold = delta;
  set.min_duration = min_duration;
  int id = 0;
  for (const auto &r : runs)
    if (r.length >= static_cast<std::size_t>(min_duration))
      set.episodes.push_back(detail::make_episode(signal, r.begin, r.length, ++id, season));
  return set;
}

// ---------------------------------------------------------------------------
// Climatology-percentile episodes
// ---------------------------------------------------------------------------

/// Day-of-year index on a 365-day calendar; Feb 29 shares Feb 28's slot.
inline int day_of_year_365(const Date &d) {
  static constexpr int cum[] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
  const int day = (d.month == 2 && d.day == 29) ? 28 : d.day;
  return cum[d.month - 1] + day - 1;
}

/// Linear interpolation between closest ranks; `pct` in [0, 100].
inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) fail_validation("empty_sample", "percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * pct / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Per-day-of-year threshold and mean from a baseline period.
struct Climatology {
  static constexpr int half_window = 5;
  std::array<double, 365> threshold{};
  std::array<double, 365> mean{};
};

struct ClimatologyOptions {
  int baseline_start = 0; ///< first baseline year (inclusive)
  int baseline_end = 0;   ///< last baseline year (inclusive)
  double percentile = 90.0;
  int min_duration = 5;
  std::optional<Season> season;
};

inline Climatology compute_climatology(const Signal &signal, int baseline_start, int baseline_end,
                                       double pct) {
  if (signal.resolution().kind != Resolution::Kind::daily)
    fail_validation("resolution", "climatology episodes need a daily signal");
  if (!(pct > 0.0 && pct < 100.0)) fail_validation("percentile", "percentile must lie in (0, 100)");
  if (baseline_end < baseline_start)
    fail_validation("baseline_short", "baseline must span at least one full year");
  const Date first{baseline_start, 1, 1};
  const Date last{baseline_end, 12, 31};
  if (signal.empty() || signal.times().front() > first || signal.times().back() < last)
    fail_validation("baseline_span", "baseline " + std::to_string(baseline_start) + "-" +
                                         std::to_string(baseline_end) + " lies outside the signal span");

  std::array<std::vector<double>, 365> buckets;
  const auto t = signal.times();
  const auto v = signal.values();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] >= first && t[i] <= last) buckets[static_cast<std::size_t>(day_of_year_365(t[i]))].push_back(v[i]);

  Climatology clim;
  for (int doy = 0; doy < 365; ++doy) {
    std::vector<double> pool;
    for (int k = -Climatology::half_window; k <= Climatology::half_window; ++k) {
      const auto &b = buckets[static_cast<std::size_t>(((doy + k) % 365 + 365) % 365)];
      pool.insert(pool.end(), b.begin(), b.end());
    }
    clim.threshold[static_cast<std::size_t>(doy)] = percentile(pool, pct);
    clim.mean[static_cast<std::size_t>(doy)] =
        std::accumulate(pool.begin(), pool.end(), 0.0) / static_cast<double>(pool.size());
  }
  return clim;
}

/// Runs of values strictly above the day-of-year percentile threshold lasting
/// at least `min_duration` days. Each episode stores its mean anomaly (value
/// minus climatological mean) as the precomputed intensity.
inline EpisodeSet extract_climatology(const Signal &signal, const ClimatologyOptions &opt) {
  if (opt.min_duration < 1) fail_validation("min_duration", "minimum duration must be at least 1");
  const auto clim = compute_climatology(signal, opt.baseline_start, opt.baseline_end, opt.percentile);
  const auto t = signal.times();
  const auto v = signal.values();
  auto runs = detail::maximal_runs(v.size(), [&](std::size_t i) {
    return v[i] > clim.threshold[static_cast<std::size_t>(day_of_year_365(t[i]))];
  });

  auto set = detail::base_set(signal, EpisodeSource::climatology, opt.season);
  set.direction = Direction::up;
  set.min_duration = opt.min_duration;
  int id = 0;
  for (const auto &r : runs) {
    if (r.length < static_cast<std::size_t>(opt.min_duration)) continue;
    auto e = detail::make_episode(signal, r.begin, r.length, ++id, opt.season);
    double anomaly = 0.0;
    for (std::size_t i = r.begin; i < r.begin + r.length; ++i)
      anomaly += v[i] - clim.mean[static_cast<std::size_t>(day_of_year_365(t[i]))];
    e.precomputed = anomaly / static_cast<double>(r.length);
    set.episodes.push_back(std::move(e));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Periodic and singleton episodes
// ---------------------------------------------------------------------------

/// One episode per complete season occurrence. Occurrences cut by either end
/// of the signal are dropped.
inline EpisodeSet extract_periodic(const Signal &signal, const Season &season) {
  if (signal.empty()) fail_validation("empty_signal", "signal is empty");
  const auto &res = signal.resolution();
  const auto t = signal.times();
  auto set = detail::base_set(signal, EpisodeSource::periodic, season);

  auto same_occurrence = [&](const Date &a, const Date &b) {
    return season.contains(b) && season.occurrence_year(a) == season.occurrence_year(b);
  };
  auto runs = detail::maximal_runs(t.size(), [&](std::size_t i) { return season.contains(t[i]); });
  int id = 0;
  for (const auto &r : runs) {
    // a wrapping or full-year season can chain occurrences; split by season year
    std::size_t b = r.begin;
    const std::size_t stop = r.begin + r.length;
    while (b < stop) {
      std::size_t e = b + 1;
      while (e < stop && same_occurrence(t[b], t[e])) ++e;
      const Date before = res.at(res.ordinal(t[b]) - 1);
      const Date after = res.at(res.ordinal(t[e - 1]) + 1);
      const bool cut_front = b == 0 && same_occurrence(t[b], before);
      const bool cut_back = e == t.size() && same_occurrence(t[e - 1], after);
      if (!cut_front && !cut_back) set.episodes.push_back(detail::make_episode(signal, b, e - b, ++id, season));
      b = e;
    }
  }
  for (auto &e : set.episodes) e.ongoing = false;
  return set;
}

/// Every observation as its own one-step episode (reduces the index to a
/// plain weighted sum of the observations).
inline EpisodeSet singleton_episodes(const Signal &signal, const std::optional<Season> &season = std::nullopt) {
  auto set = detail::base_set(signal, EpisodeSource::user, season);
  for (std::size_t i = 0; i < signal.size(); ++i)
    set.episodes.push_back(detail::make_episode(signal, i, 1, static_cast<int>(i) + 1, season));
  if (!set.episodes.empty()) set.episodes.back().ongoing = false;
  return set;
}

// ---------------------------------------------------------------------------
// Episode CSV
// ---------------------------------------------------------------------------

/// `id,start,end,n,tau,ongoing,intensity_mean`
inline std::string episodes_to_csv(const EpisodeSet &set) {
  std::string out = "id,start,end,n,tau,ongoing,intensity_mean\n";
  for (const auto &e : set.episodes) {
    const auto mean = e.display_intensity();
    out += std::to_string(e.id) + "," + set.resolution.format(e.start) + "," + set.resolution.format(e.end) +
           "," + std::to_string(e.n) + "," + std::to_string(e.tau) + "," + (e.ongoing ? "true" : "false") + "," +
           (mean ? csv::format(*mean) : std::string("NA")) + "\n";
  }
  return out;
}

inline std::optional<bool> parse_bool(std::string_view s) {
  s = csv::trim(s);
  if (s == "true" || s == "1" || s == "TRUE" || s == "True") return true;
  if (s == "false" || s == "0" || s == "FALSE" || s == "False") return false;
  return std::nullopt;
}

/// Reads a user episode list. With a reference signal the member values are
/// sliced from it; otherwise an `intensity_mean` column is required and only
/// precomputed intensities are available.
inline EpisodeSet episodes_from_csv(std::string_view text, const Signal *reference,
                                    const std::optional<Season> &season = std::nullopt) {
  const auto table = csv::parse(text);
  const auto c_start = table.require_column("start");
  const auto c_end = table.require_column("end");
  const auto c_id = table.column("id");
  const auto c_n = table.column("n");
  const auto c_ongoing = table.column("ongoing");
  const auto c_mean = table.column("intensity_mean");

  if (!reference && !c_mean)
    fail_validation("no_intensity", "episode list without a reference signal needs an intensity_mean column");

  EpisodeSet set;
  set.source = EpisodeSource::user;
  set.season = season;
  bool months = true;
  for (const auto &row : table.rows) months = months && csv::trim(row.fields[c_start]).size() == 7;
  set.resolution = reference ? reference->resolution() : (months ? Resolution::monthly() : Resolution::daily());
  if (reference) set.span = std::make_pair(reference->first_ordinal(), reference->last_ordinal());
  const auto &res = set.resolution;

  auto where = [](const csv::Table::Row &row) { return "line " + std::to_string(row.line) + ": "; };
  int next_id = 0;
  for (const auto &row : table.rows) {
    auto s = parse_date(row.fields[c_start]);
    auto e = parse_date(row.fields[c_end]);
    if (!s || !e) fail_validation("malformed_row", where(row) + "cannot parse episode dates");
    Episode ep;
    ++next_id;
    if (c_id) {
      auto id = csv::to_integer(row.fields[*c_id]);
      if (!id) fail_validation("malformed_row", where(row) + "bad episode id");
      ep.id = static_cast<int>(*id);
    } else {
      ep.id = next_id;
    }
    if (*e < *s) fail_validation("end_before_start", "episode " + std::to_string(ep.id) + " ends before it starts");
    if (!res.on_grid(*s) || !res.on_grid(*e))
      fail_validation("off_grid", "episode " + std::to_string(ep.id) + " is not on the " + res.name() + " grid");
    ep.start = *s;
    ep.end = *e;
    ep.start_ordinal = res.ordinal(*s);
    ep.n = static_cast<std::size_t>(res.ordinal(*e) - ep.start_ordinal + 1);
    if (c_n && !csv::trim(row.fields[*c_n]).empty()) {
      auto n = csv::to_integer(row.fields[*c_n]);
      if (!n || *n != static_cast<long long>(ep.n))
        fail_validation("n_mismatch", "episode " + std::to_string(ep.id) + ": n does not match its date range");
    }
    if (c_ongoing) ep.ongoing = parse_bool(row.fields[*c_ongoing]).value_or(false);
    if (c_mean) {
      const auto txt = csv::trim(row.fields[*c_mean]);
      if (!txt.empty() && txt != "NA") {
        auto m = csv::to_double(txt);
        if (!m || !std::isfinite(*m)) fail_validation("malformed_row", where(row) + "bad intensity_mean");
        ep.precomputed = *m;
      }
    }
    if (reference) {
      auto i0 = reference->index_of(*s);
      auto i1 = reference->index_of(*e);
      if (!i0 || !i1)
        fail_validation("off_signal", "episode " + std::to_string(ep.id) + " is not covered by the reference signal");
      ep.values.assign(reference->values().begin() + static_cast<std::ptrdiff_t>(*i0),
                       reference->values().begin() + static_cast<std::ptrdiff_t>(*i1 + 1));
    } else if (!ep.precomputed) {
      fail_validation("no_intensity", "episode " + std::to_string(ep.id) + " has no intensity_mean");
    }
    ep.tau = overlap_count(res, ep.start_ordinal, ep.n, season);
    set.episodes.push_back(std::move(ep));
  }
  std::stable_sort(set.episodes.begin(), set.episodes.end(),
                   [](const Episode &a, const Episode &b) { return a.start_ordinal < b.start_ordinal; });
  std::vector<int> ids;
  for (const auto &e : set.episodes) ids.push_back(e.id);
  std::sort(ids.begin(), ids.end());
  if (auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end())
    fail_validation("duplicate_id", "duplicate episode id " + std::to_string(*dup));
  validate(set);
  return set;
}

inline EpisodeSet load_episodes(const std::string &path, const Signal *reference,
                                const std::optional<Season> &season = std::nullopt) {
  return episodes_from_csv(csv::read_file(path), reference, season);
}

} // namespace impit
