#pragma once

/// @file index.hpp
///
/// Weighted episode index evaluated at a schedule of anchors.
///
/// At anchor t the memory window holds the m most recent grid steps ending at
/// t. Every episode intersecting the window contributes w1*w2*w3*I computed on
/// its in-window members; the index value is the sum of those terms.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "impit/csv.hpp"
#include "impit/episodes.hpp"
#include "impit/error.hpp"
#include "impit/intensity.hpp"
#include "impit/timeline.hpp"
#include "impit/weights.hpp"

namespace impit {

/// How episodes cut by the far edge of the memory window are treated.
enum class EdgePolicy { truncate, drop };

struct EvaluationSchedule {
  std::vector<Date> anchors;

  void validate() const {
    for (std::size_t i = 1; i < anchors.size(); ++i)
      if (!(anchors[i - 1] < anchors[i])) fail_validation("schedule_order", "anchors must be strictly increasing");
  }

  /// Every grid point of [first, last].
  static EvaluationSchedule every_step(const Resolution &res, std::int64_t first, std::int64_t last) {
    EvaluationSchedule s;
    for (auto o = first; o <= last; ++o) s.anchors.push_back(res.at(o));
    return s;
  }

  /// One anchor per year in the given month: the first of the month on a
  /// monthly grid, the last day of the month on a daily grid.
  static EvaluationSchedule annual(const Resolution &res, std::int64_t first, std::int64_t last, int month = 12) {
    if (month < 1 || month > 12) fail_validation("anchor_month", "anchor month must be 1..12");
    if (res.kind == Resolution::Kind::custom)
      fail_validation("schedule", "annual schedules need a daily or monthly grid; pass explicit anchors");
    EvaluationSchedule s;
    const Date lo = res.at(first);
    const Date hi = res.at(last);
    for (int y = lo.year; y <= hi.year; ++y) {
      Date d{y, month, res.kind == Resolution::Kind::monthly ? 1 : days_in_month(y, month)};
      if (d >= lo && d <= hi) s.anchors.push_back(d);
    }
    return s;
  }
};

struct IndexOptions {
  EdgePolicy edge = EdgePolicy::truncate;
  /// Overrides the episode set's season for the timing weight.
  std::optional<Season> timing_season;
  /// Divide every intensity by m (turns a sum over singletons into a mean).
  bool per_memory = false;
};

/// One episode's contribution at one anchor.
struct Contribution {
  int episode_id = 0;
  EpisodeView view;
  WeightFactors weights;
  double intensity = 0.0;
  bool truncated = false; ///< precomputed intensity used for a partially visible episode

  double term() const { return weights.product() * intensity; }
};

struct IndexSeries {
  std::vector<Date> anchors;
  std::vector<double> values;
  std::vector<std::vector<Contribution>> diagnostics;
  WeightParams params;
  IntensityKind kind = IntensityKind::mean;
  Resolution resolution;
  std::string episode_source;
  std::vector<std::string> warnings;

  std::size_t size() const { return values.size(); }
  std::size_t episode_count(std::size_t i) const { return diagnostics[i].size(); }
};

namespace detail {

inline std::optional<Season> timing_season(const EpisodeSet &set, const IndexOptions &opt) {
  return opt.timing_season ? opt.timing_season : set.season;
}

inline void check_anchor(const EpisodeSet &set, const Date &anchor) {
  if (!set.resolution.on_grid(anchor))
    fail_validation("unit_mismatch", "anchor " + format_day(anchor) + " is not on the " + set.resolution.name() +
                                         " grid of the episodes");
  if (set.span && set.resolution.ordinal(anchor) < set.span->first)
    fail_validation("anchor_before_signal", "anchor " + set.resolution.format(anchor) + " precedes the signal start");
}

} // namespace detail

/// Contributions of every episode visible at one anchor ordinal.
inline std::vector<Contribution> window_contributions(const EpisodeSet &set, const WeightParams &params,
                                                      IntensityKind kind, std::int64_t anchor,
                                                      const IndexOptions &opt = {}) {
  const auto season = detail::timing_season(set, opt);
  const std::int64_t lo = anchor - params.m + 1;
  std::vector<Contribution> out;
  // episodes are sorted and disjoint: skip straight to the first that can reach the window
  auto it = std::lower_bound(set.episodes.begin(), set.episodes.end(), lo,
                             [](const Episode &e, std::int64_t v) { return e.end_ordinal() < v; });
  for (; it != set.episodes.end() && it->start_ordinal <= anchor; ++it) {
    const Episode &e = *it;
    if (opt.edge == EdgePolicy::drop && e.start_ordinal < lo) continue;
    const auto vis_lo = std::max(e.start_ordinal, lo);
    const auto vis_hi = std::min(e.end_ordinal(), anchor);
    Contribution c;
    c.episode_id = e.id;
    c.view.n = static_cast<std::size_t>(vis_hi - vis_lo + 1);
    c.view.s = static_cast<int>(anchor - vis_hi + 1);
    c.view.tau = overlap_count(set.resolution, vis_lo, c.view.n, season);
    const bool partial = vis_lo != e.start_ordinal || vis_hi != e.end_ordinal();
    const auto label = "episode " + std::to_string(e.id);
    if (kind == IntensityKind::precomputed) {
      c.intensity = intensity({}, kind, e.precomputed, label);
      c.truncated = partial;
    } else {
      if (e.values.empty()) fail_validation("no_values", label + " has no member values; use precomputed intensity");
      const auto first = static_cast<std::size_t>(vis_lo - e.start_ordinal);
      c.intensity = intensity(std::span<const double>(e.values).subspan(first, c.view.n), kind, std::nullopt, label);
    }
    if (opt.per_memory) c.intensity /= static_cast<double>(params.m);
    c.weights = weight_factors(c.view, params);
    out.push_back(c);
  }
  return out;
}

/// Evaluates the index at every scheduled anchor.
inline IndexSeries evaluate(const EpisodeSet &set, const WeightParams &params, IntensityKind kind,
                            const EvaluationSchedule &schedule, const IndexOptions &opt = {}) {
  params.validate();
  schedule.validate();
  if (params.timing_enabled && !detail::timing_season(set, opt))
    fail_validation("timing_season", "timing weight enabled but no season configured");

  IndexSeries out;
  out.params = params;
  out.kind = kind;
  out.resolution = set.resolution;
  out.episode_source = to_string(set.source);
  if (timing_degenerate(params))
    out.warnings.emplace_back("timing_degenerate: d = 0 with timing enabled makes every index value zero");

  for (const auto &anchor : schedule.anchors) {
    detail::check_anchor(set, anchor);
    auto terms = window_contributions(set, params, kind, set.resolution.ordinal(anchor), opt);
    double value = 0.0;
    for (const auto &c : terms) value += c.term();
    out.anchors.push_back(anchor);
    out.values.push_back(value);
    out.diagnostics.push_back(std::move(terms));
  }
  if (params.timing_enabled && !timing_degenerate(params) &&
      std::all_of(out.values.begin(), out.values.end(), [](double v) { return v == 0.0; }))
    out.warnings.emplace_back("timing_no_overlap: no visible episode overlaps the timing season; the index is zero");
  return out;
}

/// `anchor,value,K`
inline std::string index_to_csv(const IndexSeries &ix) {
  std::string out = "anchor,value,K\n";
  for (std::size_t i = 0; i < ix.size(); ++i)
    out += ix.resolution.format(ix.anchors[i]) + "," + csv::format(ix.values[i]) + "," +
           std::to_string(ix.episode_count(i)) + "\n";
  return out;
}

/// One row per (anchor, contributing episode).
inline std::string diagnostics_to_csv(const IndexSeries &ix) {
  std::string out = "anchor,episode_id,n_in_window,s,tau_in_window,w1,w2,w3,intensity,term,truncated\n";
  for (std::size_t i = 0; i < ix.size(); ++i)
    for (const auto &c : ix.diagnostics[i])
      out += ix.resolution.format(ix.anchors[i]) + "," + std::to_string(c.episode_id) + "," +
             std::to_string(c.view.n) + "," + std::to_string(c.view.s) + "," + std::to_string(c.view.tau) + "," +
             csv::format(c.weights.w1) + "," + csv::format(c.weights.w2) + "," + csv::format(c.weights.w3) + "," +
             csv::format(c.intensity) + "," + csv::format(c.term()) + "," + (c.truncated ? "true" : "false") + "\n";
  return out;
}

} // namespace impit
