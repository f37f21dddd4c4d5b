#pragma once

// Request-level helpers shared by the CLI and the HTTP service so that both
// front ends build episodes and schedules the same way.

#include <optional>
#include <string>
#include <string_view>

#include "impit/episodes.hpp"
#include "impit/error.hpp"
#include "impit/index.hpp"
#include "impit/stats.hpp"
#include "impit/timeline.hpp"

namespace impit {

enum class EpisodeMethod { threshold, climatology, periodic, singletons, file };

inline std::optional<EpisodeMethod> parse_episode_method(std::string_view s) {
  if (s == "threshold") return EpisodeMethod::threshold;
  if (s == "climatology") return EpisodeMethod::climatology;
  if (s == "periodic") return EpisodeMethod::periodic;
  if (s == "singletons") return EpisodeMethod::singletons;
  if (s == "file") return EpisodeMethod::file;
  return std::nullopt;
}

struct EpisodeSpec {
  EpisodeMethod method = EpisodeMethod::threshold;
  std::optional<double> threshold;
  Direction direction = Direction::up;
  int min_duration = 1;
  std::optional<Season> season;
  std::optional<std::pair<int, int>> baseline; ///< climatology years, inclusive
  double percentile = 90.0;
  std::optional<int> climatology_min_duration; ///< defaults to 5 for climatology
};

/// `episode_csv` is the uploaded list for EpisodeMethod::file.
inline EpisodeSet build_episodes(const Signal *signal, const EpisodeSpec &spec, std::string_view episode_csv = {}) {
  auto need_signal = [&]() -> const Signal & {
    if (!signal) fail_validation("signal", "this episode method needs a signal");
    return *signal;
  };
  switch (spec.method) {
  case EpisodeMethod::threshold:
    if (!spec.threshold) fail_validation("threshold", "threshold episodes need a threshold");
    if (spec.min_duration < 1) fail_validation("min_duration", "minimum duration must be at least 1");
    return extract_threshold(need_signal(), *spec.threshold, spec.direction, spec.min_duration, spec.season);
  case EpisodeMethod::climatology: {
    if (!spec.baseline) fail_validation("baseline", "climatology episodes need a baseline period");
    ClimatologyOptions opt;
    opt.baseline_start = spec.baseline->first;
    opt.baseline_end = spec.baseline->second;
    opt.percentile = spec.percentile;
    opt.min_duration = spec.climatology_min_duration.value_or(5);
    opt.season = spec.season;
    return extract_climatology(need_signal(), opt);
  }
  case EpisodeMethod::periodic:
    if (!spec.season) fail_validation("season", "periodic episodes need a season");
    return extract_periodic(need_signal(), *spec.season);
  case EpisodeMethod::singletons: return singleton_episodes(need_signal(), spec.season);
  case EpisodeMethod::file: return episodes_from_csv(episode_csv, signal, spec.season);
  }
  fail_validation("method", "unknown episode method");
}

/// Parses `YYYY:YYYY`.
inline std::optional<std::pair<int, int>> parse_baseline(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto a = csv::to_integer(s.substr(0, colon));
  auto b = csv::to_integer(s.substr(colon + 1));
  if (!a || !b) return std::nullopt;
  return std::make_pair(static_cast<int>(*a), static_cast<int>(*b));
}

/// Anchor schedule: `annual[:MM]` (default December), `all` (every grid
/// step) or `response` (the response timestamps on the episode grid).
inline EvaluationSchedule build_schedule(std::string_view kind, const EpisodeSet &set,
                                         const ResponseSeries *response = nullptr) {
  if (kind == "response") {
    if (!response) fail_validation("schedule", "schedule 'response' needs a response series");
    EvaluationSchedule s;
    for (const auto &d : response->times)
      if (set.resolution.on_grid(d) && (!set.span || set.resolution.ordinal(d) >= set.span->first))
        s.anchors.push_back(d);
    return s;
  }
  std::pair<std::int64_t, std::int64_t> span;
  if (set.span) {
    span = *set.span;
  } else if (!set.episodes.empty()) {
    span = {set.episodes.front().start_ordinal, set.episodes.back().end_ordinal()};
  } else {
    fail_validation("schedule", "cannot derive anchors without a signal span");
  }
  if (kind == "all") return EvaluationSchedule::every_step(set.resolution, span.first, span.second);
  if (kind.substr(0, 6) == "annual") {
    int month = 12;
    if (kind.size() > 6) {
      auto m = kind[6] == ':' ? csv::to_integer(kind.substr(7)) : std::nullopt;
      if (!m) fail_validation("schedule", "annual schedules are written annual:MM");
      month = static_cast<int>(*m);
    }
    return EvaluationSchedule::annual(set.resolution, span.first, span.second, month);
  }
  fail_validation("schedule", "unknown schedule '" + std::string(kind) + "'");
}

} // namespace impit
