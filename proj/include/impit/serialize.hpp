#pragma once

// JSON views of the core types, shared by the CLI and the HTTP service.

#include <cmath>
#include <optional>
#include <string>

#include "json.hpp"

#include "impit/calibrate.hpp"
#include "impit/episodes.hpp"
#include "impit/index.hpp"
#include "impit/stats.hpp"

namespace impit::json {

using nlohmann::json;

inline constexpr int schema_version = 1;

inline json number_or_null(const std::optional<double> &v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

inline json to_json(const AssociationResult &a) {
  return json{{"r", a.r},
              {"p", a.p},
              {"n", a.n},
              {"slope", a.slope},
              {"intercept", a.intercept},
              {"r_squared", a.r_squared},
              {"dropped_left", a.dropped_left},
              {"dropped_right", a.dropped_right}};
}

inline json to_json(const WeightParams &p) {
  return json{{"m", p.m}, {"a", p.a}, {"b", p.b}, {"c", p.c}, {"d", p.d}, {"timing_enabled", p.timing_enabled}};
}

/// Episode table plus the per-episode mean/duration/in-season data behind a
/// lollipop chart. `csv` is byte-identical to the CLI's episode export.
inline json to_json(const EpisodeSet &set) {
  json rows = json::array();
  for (const auto &e : set.episodes)
    rows.push_back(json{{"id", e.id},
                        {"start", set.resolution.format(e.start)},
                        {"end", set.resolution.format(e.end)},
                        {"n", e.n},
                        {"tau", e.tau},
                        {"ongoing", e.ongoing},
                        {"intensity_mean", number_or_null(e.display_intensity())},
                        {"in_season", e.tau > 0}});
  json out{{"source", to_string(set.source)},
           {"direction", to_string(set.direction)},
           {"min_duration", set.min_duration},
           {"resolution", set.resolution.name()},
           {"count", set.size()},
           {"episodes", rows},
           {"csv", episodes_to_csv(set)}};
  out["threshold"] = number_or_null(set.threshold);
  out["season"] = set.season ? json(set.season->str()) : json(nullptr);
  return out;
}

inline json to_json(const IndexSeries &ix, bool explain = false) {
  json points = json::array();
  for (std::size_t i = 0; i < ix.size(); ++i)
    points.push_back(json{{"anchor", ix.resolution.format(ix.anchors[i])},
                          {"value", ix.values[i]},
                          {"K", ix.episode_count(i)}});
  json out{{"params", to_json(ix.params)},
           {"intensity", to_string(ix.kind)},
           {"episode_source", ix.episode_source},
           {"points", points},
           {"warnings", ix.warnings},
           {"csv", index_to_csv(ix)}};
  if (explain) out["diagnostics_csv"] = diagnostics_to_csv(ix);
  return out;
}

inline json to_json(const MapRecord &r) {
  json j{{"m", r.m},
         {"a", r.a},
         {"b", number_or_null(r.b)},
         {"c", number_or_null(r.c)},
         {"d", number_or_null(r.d)},
         {"r", number_or_null(r.r)},
         {"p", number_or_null(r.p)},
         {"n", r.n},
         {"defined", r.defined()}};
  if (!r.reason.empty()) j["reason"] = r.reason;
  return j;
}

inline json to_json(const Selection &s) {
  json config{{"m", s.m}, {"a", s.a}, {"b", number_or_null(s.b)}, {"c", number_or_null(s.c)}, {"d", number_or_null(s.d)}};
  return json{{"schema_version", schema_version},
              {"stage", to_string(s.stage)},
              {"rule", s.rule},
              {"configuration", config},
              {"r", number_or_null(s.r)},
              {"p", number_or_null(s.p)},
              {"n", s.n},
              {"stability_passed", s.stability_passed},
              {"fallback", s.fallback},
              {"rationale", s.rationale},
              {"timestamp", s.timestamp}};
}

inline json to_json(const CalibrationMap &map) {
  json recs = json::array();
  for (const auto &r : map.records) recs.push_back(to_json(r));
  json out{{"stage", to_string(map.stage)}, {"cells", map.cells()}, {"records", recs}, {"csv", map_to_csv(map)}};
  out["fixed_a"] = number_or_null(map.fixed_a);
  out["season"] = map.season ? json(map.season->str()) : json(nullptr);
  out["selection"] = map.selection ? to_json(*map.selection) : json(nullptr);
  return out;
}

} // namespace impit::json
