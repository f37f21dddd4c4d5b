#pragma once

/// @file calibrate.hpp
///
/// Stage-wise exploratory calibration.
///
///   S1: sweep m x a with recency and timing switched off (w2 = w3 = 1)
///   S2: fixed a, sweep m x b x c with timing off (w3 = 1)
///   S3: fixed a, sweep m x b x c x d with the timing weight on a season
///
/// Every grid cell is an independent index evaluation followed by a Pearson
/// correlation against the response. Cells may run on several threads;
/// records are written by cell position, so the map does not depend on the
/// thread count.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "impit/csv.hpp"
#include "impit/episodes.hpp"
#include "impit/error.hpp"
#include "impit/index.hpp"
#include "impit/intensity.hpp"
#include "impit/stats.hpp"
#include "impit/weights.hpp"

namespace impit {

enum class Stage { S1 = 1, S2 = 2, S3 = 3 };

inline const char *to_string(Stage s) {
  switch (s) {
  case Stage::S1: return "S1";
  case Stage::S2: return "S2";
  case Stage::S3: return "S3";
  }
  return "S1";
}

inline std::optional<Stage> parse_stage(std::string_view s) {
  if (s == "1" || s == "S1" || s == "s1") return Stage::S1;
  if (s == "2" || s == "S2" || s == "s2") return Stage::S2;
  if (s == "3" || s == "S3" || s == "s3") return Stage::S3;
  return std::nullopt;
}

/// Rounds away accumulated binary noise from range generation (0.05 * 8 -> 0.4).
inline double snap(double v) { return std::round(v * 1e12) / 1e12; }

/// Inclusive arithmetic range lo, lo+step, ..., <= hi.
inline std::vector<double> grid_range(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) fail_validation("grid", "invalid grid range");
  std::vector<double> g;
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= count; ++i) g.push_back(snap(lo + static_cast<double>(i) * step));
  return g;
}

/// Parses `lo:hi:step` or a comma-separated list.
inline std::vector<double> parse_grid(std::string_view text) {
  text = csv::trim(text);
  if (text.empty()) fail_validation("grid", "empty grid");
  if (text.find(':') != std::string_view::npos) {
    std::vector<double> parts;
    std::size_t pos = 0;
    while (true) {
      const auto next = text.find(':', pos);
      auto v = csv::to_double(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
      if (!v) fail_validation("grid", "cannot parse grid '" + std::string(text) + "'");
      parts.push_back(*v);
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    if (parts.size() != 3) fail_validation("grid", "range grids are lo:hi:step");
    return grid_range(parts[0], parts[1], parts[2]);
  }
  std::vector<double> g;
  for (const auto &f : csv::split_record(text)) {
    auto v = csv::to_double(f);
    if (!v) fail_validation("grid", "cannot parse grid value '" + f + "'");
    g.push_back(*v);
  }
  return g;
}

inline std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  for (const auto &d : parse_grid(text)) {
    if (d != std::floor(d)) fail_validation("grid", "expected integers in '" + std::string(text) + "'");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

struct DefaultGrids {
  static std::vector<double> a() { return grid_range(0.0, 5.0, 0.25); }
  static std::vector<double> b() { return grid_range(0.5, 5.0, 0.5); }
  static std::vector<double> c() { return grid_range(0.0, 1.0, 0.05); }
  static std::vector<double> d() { return {0.5, 1.0, 2.0, 3.0}; }
};

struct StageSpec {
  Stage stage = Stage::S1;
  std::vector<int> m_list;
  std::vector<double> a_grid = DefaultGrids::a(); ///< swept at S1
  double a = 0.0;                                 ///< fixed at S2/S3
  std::vector<double> b_list = DefaultGrids::b();
  std::vector<double> c_grid = DefaultGrids::c();
  std::vector<double> d_list = DefaultGrids::d();
  std::optional<Season> season; ///< required at S3
  IndexOptions index_options;

  /// Sorts and deduplicates the grids, then checks them.
  void normalize() {
    auto tidy = [](auto &v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    tidy(m_list);
    tidy(a_grid);
    tidy(b_list);
    tidy(c_grid);
    tidy(d_list);
    if (m_list.empty()) fail_validation("m_list", "memory list is empty");
    for (int m : m_list)
      if (m < 1) fail_validation("m_list", "memory values must be at least 1");
    auto check = [](const std::vector<double> &g, const char *name, double lo, double hi) {
      if (g.empty()) fail_validation(name, std::string(name) + " grid is empty");
      for (double v : g)
        if (!(v >= lo && v <= hi)) fail_validation(name, std::string(name) + " grid value out of range");
    };
    const double inf = std::numeric_limits<double>::infinity();
    if (stage == Stage::S1) check(a_grid, "a", 0.0, inf);
    if (!(a >= 0.0)) fail_validation("a", "a must be >= 0");
    if (stage != Stage::S1) {
      check(b_list, "b", 0.0, inf);
      check(c_grid, "c", 0.0, 1.0);
    }
    if (stage == Stage::S3) {
      check(d_list, "d", 0.0, inf);
      if (!season && !index_options.timing_season)
        fail_validation("season", "stage 3 requires a season");
    }
  }

  std::size_t cell_count() const {
    switch (stage) {
    case Stage::S1: return m_list.size() * a_grid.size();
    case Stage::S2: return m_list.size() * b_list.size() * c_grid.size();
    case Stage::S3: return m_list.size() * b_list.size() * c_grid.size() * d_list.size();
    }
    return 0;
  }
};

/// One grid cell. b, c and d are empty where the stage does not use them.
struct MapRecord {
  int m = 1;
  double a = 0.0;
  std::optional<double> b, c, d;
  std::optional<double> r, p;
  std::size_t n = 0;
  std::string reason; ///< why r is undefined, empty otherwise

  bool defined() const { return r.has_value(); }

  WeightParams params() const {
    WeightParams w;
    w.m = m;
    w.a = a;
    w.b = b.value_or(0.0);
    w.c = c.value_or(0.5);
    w.d = d.value_or(1.0);
    w.timing_enabled = d.has_value();
    return w;
  }

  auto key() const { return std::make_tuple(m, a, b.value_or(-1.0), c.value_or(-1.0), d.value_or(-1.0)); }
};

struct Selection {
  Stage stage = Stage::S1;
  std::string rule; ///< "max_abs_r" or "manual"
  int m = 1;
  double a = 0.0;
  std::optional<double> b, c, d;
  std::optional<double> r, p;
  std::size_t n = 0;
  bool stability_passed = false;
  bool fallback = false; ///< no cell passed the stability screen
  std::string rationale;
  std::string timestamp;
};

struct CalibrationMap {
  Stage stage = Stage::S1;
  std::vector<MapRecord> records;
  std::optional<double> fixed_a; ///< a carried over from S1
  std::optional<Season> season;
  std::optional<Selection> selection;
  std::size_t cells() const { return records.size(); }
};

struct CalibrationOptions {
  int jobs = 1;
  int tolerance_steps = 0;
  /// Called from worker threads after each finished cell.
  std::function<void(std::size_t done, std::size_t total)> progress;
  const std::atomic<bool> *cancel = nullptr;
};

namespace detail {

/// Window structure at every anchor for one memory length; independent of
/// a, b, c and d.
struct MemoryPlan {
  int m = 1;
  struct Term {
    std::size_t n;
    int s;
    std::size_t tau;
    double intensity;
  };
  std::vector<std::vector<Term>> per_anchor;
};

inline MemoryPlan plan_memory(const EpisodeSet &set, IntensityKind kind, const std::vector<std::int64_t> &anchors,
                              int m, const IndexOptions &opt) {
  MemoryPlan plan;
  plan.m = m;
  WeightParams probe;
  probe.m = m;
  for (auto a : anchors) {
    std::vector<MemoryPlan::Term> terms;
    for (const auto &c : window_contributions(set, probe, kind, a, opt))
      terms.push_back({c.view.n, c.view.s, c.view.tau, c.intensity});
    plan.per_anchor.push_back(std::move(terms));
  }
  return plan;
}

inline std::vector<double> fast_index(const MemoryPlan &plan, const WeightParams &p) {
  std::vector<double> w1(static_cast<std::size_t>(p.m) + 1);
  for (int n = 1; n <= p.m; ++n) w1[static_cast<std::size_t>(n)] = w1_persistence(static_cast<std::size_t>(n), p);
  const auto w2 = recency_table(p);
  std::vector<double> out;
  out.reserve(plan.per_anchor.size());
  for (const auto &terms : plan.per_anchor) {
    double v = 0.0;
    for (const auto &t : terms)
      v += w1[std::min<std::size_t>(t.n, static_cast<std::size_t>(p.m))] * w2[static_cast<std::size_t>(t.s)] *
           w3_timing(t.tau, t.n, p) * t.intensity;
    out.push_back(v);
  }
  return out;
}

inline std::vector<MapRecord> enumerate_cells(const StageSpec &spec) {
  std::vector<MapRecord> cells;
  cells.reserve(spec.cell_count());
  auto cell = [](int m, double a, std::optional<double> b = {}, std::optional<double> c = {},
                 std::optional<double> d = {}) {
    MapRecord r;
    r.m = m;
    r.a = a;
    r.b = b;
    r.c = c;
    r.d = d;
    return r;
  };
  for (int m : spec.m_list) {
    if (spec.stage == Stage::S1) {
      for (double a : spec.a_grid) cells.push_back(cell(m, a));
      continue;
    }
    for (double b : spec.b_list)
      for (double c : spec.c_grid) {
        if (spec.stage == Stage::S2) {
          cells.push_back(cell(m, spec.a, b, c));
        } else {
          for (double d : spec.d_list) cells.push_back(cell(m, spec.a, b, c, d));
        }
      }
  }
  return cells;
}

} // namespace detail

/// Sweeps one calibration stage. Cells whose correlation is undefined are kept
/// with an empty r and a reason code.
inline CalibrationMap run_stage(StageSpec spec, const EpisodeSet &episodes, IntensityKind kind,
                                const EvaluationSchedule &schedule, const ResponseSeries &response,
                                const CalibrationOptions &opt = {}) {
  spec.normalize();
  schedule.validate();
  IndexOptions iopt = spec.index_options;
  if (spec.stage == Stage::S3 && !iopt.timing_season) iopt.timing_season = spec.season;
  if (spec.stage != Stage::S3) iopt.timing_season = std::nullopt;

  std::vector<std::int64_t> anchors;
  for (const auto &d : schedule.anchors) {
    detail::check_anchor(episodes, d);
    anchors.push_back(episodes.resolution.ordinal(d));
  }
  const auto join = join_timestamps(schedule.anchors, response.times, episodes.resolution, opt.tolerance_steps);
  std::vector<double> y;
  for (auto [i, k] : join.pairs) y.push_back(response.values[k]);

  std::map<int, detail::MemoryPlan> plans;
  for (int m : spec.m_list) plans.emplace(m, detail::plan_memory(episodes, kind, anchors, m, iopt));

  auto cells = detail::enumerate_cells(spec);
  if (cells.empty()) fail_validation("grid", "empty calibration grid");

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  auto work = [&] {
    while (true) {
      if (opt.cancel && opt.cancel->load()) return;
      const auto i = next.fetch_add(1);
      if (i >= cells.size()) return;
      auto &rec = cells[i];
      rec.n = join.pairs.size();
      if (rec.n < 3) {
        rec.reason = "too_few_pairs";
      } else {
        const auto values = detail::fast_index(plans.at(rec.m), rec.params());
        std::vector<double> x;
        x.reserve(rec.n);
        for (auto [ai, k] : join.pairs) x.push_back(values[ai]);
        try {
          const auto res = pearson(x, y);
          rec.r = res.r;
          rec.p = res.p;
        } catch (const Error &e) {
          rec.reason = e.code() == "undefined_correlation" ? "constant_index" : e.code();
        }
      }
      const auto finished = done.fetch_add(1) + 1;
      if (opt.progress) opt.progress(finished, cells.size());
    }
  };
  const int jobs = std::max(1, std::min<int>(opt.jobs, static_cast<int>(cells.size())));
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(work);
  }
  if (opt.cancel && opt.cancel->load()) throw Error(ErrorKind::runtime, "cancelled", "calibration cancelled");

  std::stable_sort(cells.begin(), cells.end(), [](const MapRecord &l, const MapRecord &r) { return l.key() < r.key(); });
  if (std::none_of(cells.begin(), cells.end(), [](const MapRecord &r) { return r.defined(); }))
    fail_domain("no_valid_cells", "no grid cell produced a defined correlation");

  CalibrationMap map;
  map.stage = spec.stage;
  map.records = std::move(cells);
  if (spec.stage != Stage::S1) map.fixed_a = spec.a;
  if (spec.stage == Stage::S3) map.season = iopt.timing_season;
  return map;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline Selection selection_from(const CalibrationMap &map, const MapRecord &r, std::string rule) {
  Selection s;
  s.stage = map.stage;
  s.rule = std::move(rule);
  s.m = r.m;
  s.a = r.a;
  s.b = r.b;
  s.c = r.c;
  s.d = r.d;
  s.r = r.r;
  s.p = r.p;
  s.n = r.n;
  s.timestamp = utc_timestamp();
  return s;
}

/// Position of every record on the axes of the map.
struct GridIndex {
  std::vector<std::vector<double>> axes; // m, a, b, c, d
  std::map<std::array<int, 5>, std::size_t> by_coord;
  std::vector<std::array<int, 5>> coords;

  explicit GridIndex(const std::vector<MapRecord> &recs) {
    axes.resize(5);
    auto vals = [](const MapRecord &r) {
      return std::array<double, 5>{static_cast<double>(r.m), r.a, r.b.value_or(-1), r.c.value_or(-1), r.d.value_or(-1)};
    };
    for (const auto &r : recs) {
      const auto v = vals(r);
      for (std::size_t k = 0; k < 5; ++k) axes[k].push_back(v[k]);
    }
    for (auto &ax : axes) {
      std::sort(ax.begin(), ax.end());
      ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
    }
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto v = vals(recs[i]);
      std::array<int, 5> c{};
      for (std::size_t k = 0; k < 5; ++k)
        c[k] = static_cast<int>(std::lower_bound(axes[k].begin(), axes[k].end(), v[k]) - axes[k].begin());
      coords.push_back(c);
      by_coord.emplace(c, i);
    }
  }
};

} // namespace detail

namespace detail {

inline bool stable_cell(const CalibrationMap &map, const GridIndex &grid, std::size_t index, int radius,
                        double min_ratio) {
  const auto &centre = map.records[index];
  if (!centre.defined()) return false;
  const auto c0 = grid.coords[index];
  std::array<int, 5> off{};
  std::function<bool(std::size_t)> visit = [&](std::size_t axis) -> bool {
    if (axis == 5) {
      if (off == std::array<int, 5>{}) return true;
      std::array<int, 5> c{};
      for (std::size_t k = 0; k < 5; ++k) c[k] = c0[k] + off[k];
      auto it = grid.by_coord.find(c);
      if (it == grid.by_coord.end()) return true;
      const auto &nb = map.records[it->second];
      if (!nb.defined()) return false;
      if ((*nb.r >= 0) != (*centre.r >= 0)) return false;
      return std::abs(*nb.r) >= min_ratio * std::abs(*centre.r);
    }
    for (int o = -radius; o <= radius; ++o) {
      off[axis] = o;
      if (!visit(axis + 1)) return false;
    }
    off[axis] = 0;
    return true;
  };
  return visit(0);
}

} // namespace detail

/// Stability screen of one cell: every neighbour within `radius` grid steps
/// along all axes is defined, has the same sign and keeps at least
/// `min_ratio` of the centre's |r|.
inline bool stable_cell(const CalibrationMap &map, std::size_t index, int radius, double min_ratio = 0.5) {
  return detail::stable_cell(map, detail::GridIndex(map.records), index, radius, min_ratio);
}

/// Highest-|r| cell among those passing the stability screen; when none
/// passes, the unconstrained maximum is returned with `fallback` set.
inline Selection select_max_abs_r(const CalibrationMap &map, int stability_radius = 1, double min_ratio = 0.5) {
  if (map.records.empty()) fail_validation("empty_map", "calibration map is empty");
  const detail::GridIndex grid(map.records);
  std::optional<std::size_t> best_stable, best_any;
  auto better = [&](std::optional<std::size_t> cur, std::size_t i) {
    return !cur || std::abs(*map.records[i].r) > std::abs(*map.records[*cur].r);
  };
  for (std::size_t i = 0; i < map.records.size(); ++i) {
    if (!map.records[i].defined()) continue;
    if (better(best_any, i)) best_any = i;
    if (better(best_stable, i) && detail::stable_cell(map, grid, i, stability_radius, min_ratio))
      best_stable = i;
  }
  if (!best_any) fail_domain("no_valid_cells", "calibration map has no defined cells");
  auto sel = detail::selection_from(map, map.records[best_stable.value_or(*best_any)], "max_abs_r");
  sel.stability_passed = best_stable.has_value();
  sel.fallback = !best_stable;
  return sel;
}

/// Records a human choice verbatim. The map's r/p/n are attached when the
/// configuration is one of its cells.
inline Selection select_manual(const CalibrationMap &map, const MapRecord &config, std::string rationale) {
  auto sel = detail::selection_from(map, config, "manual");
  sel.r.reset();
  sel.p.reset();
  sel.n = 0;
  for (const auto &r : map.records)
    if (r.key() == config.key()) {
      sel.r = r.r;
      sel.p = r.p;
      sel.n = r.n;
    }
  sel.rationale = std::move(rationale);
  return sel;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// `stage,m,a,b,c,d,r,p,n,defined`
inline std::string map_to_csv(const CalibrationMap &map) {
  auto opt = [](const std::optional<double> &v) { return v ? csv::format(*v) : std::string("NA"); };
  std::string out = "stage,m,a,b,c,d,r,p,n,defined\n";
  for (const auto &r : map.records)
    out += std::string(to_string(map.stage)) + "," + std::to_string(r.m) + "," + csv::format(r.a) + "," + opt(r.b) +
           "," + opt(r.c) + "," + opt(r.d) + "," + opt(r.r) + "," + opt(r.p) + "," + std::to_string(r.n) + "," +
           (r.defined() ? "true" : "false") + "\n";
  return out;
}

} // namespace impit
