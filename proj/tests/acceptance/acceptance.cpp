// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "impit/calibrate.hpp"
#include "impit/pipeline.hpp"
#include "impit_cli.hpp"

#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace impit;

namespace {

struct Outcome {
  bool ok;
  std::string detail;
};

struct Check {
  const char *name;
  double budget_s;
  std::function<Outcome()> body;
};

std::string fmt(const char *f, double a, double b = 0, double c = 0) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome recency_anchors() {
  WeightParams p;
  p.m = 30;
  p.c = 0.4;
  p.b = 3;
  const double w6 = w2_recency(6, p), w12 = w2_recency(12, p), w18 = w2_recency(18, p);
  const bool ok = std::abs(w6 - 0.74) <= 0.005 && std::abs(w12 - 1.0) <= 1e-9 && std::abs(w18 - 0.79) <= 0.005;
  return {ok, fmt("w2(6)=%.4f w2(12)=%.10f w2(18)=%.4f", w6, w12, w18)};
}

double min_w2(double b) {
  double lo = 1.0;
  for (int m : {12, 96, 312})
    for (int k = 0; k <= 20; ++k) {
      WeightParams p;
      p.m = m;
      p.b = b;
      p.c = k * 0.05;
      for (int s = 1; s <= m; ++s) lo = std::min(lo, w2_recency(s, p));
    }
  return lo;
}

Outcome dampening_floor() {
  const double weak = min_w2(0.3), strong = min_w2(1.75);
  return {weak >= 0.70 && strong < 0.30, fmt("min w2 b=0.3: %.4f, b=1.75: %.4f", weak, strong)};
}

Outcome mean_recovery() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0, 3);
  std::vector<double> v(200);
  for (auto &x : v) x = g(rng);
  const auto s = fixtures::monthly_signal(1980, 1, v);
  WeightParams p;
  p.m = 12;
  IndexOptions opt;
  opt.per_memory = true;
  const auto ix = evaluate(singleton_episodes(s), p, IntensityKind::mean,
                           EvaluationSchedule::every_step(Resolution::monthly(), s.first_ordinal(), s.last_ordinal()), opt);
  double worst = 0;
  for (std::size_t i = 11; i < v.size(); ++i) {
    double mean = 0;
    for (std::size_t k = i - 11; k <= i; ++k) mean += v[k];
    mean /= 12;
    worst = std::max(worst, std::abs(ix.values[i] - mean) / std::max(std::abs(mean), 1e-300));
  }
  return {worst <= 1e-12, fmt("max relative error %.3g over 189 anchors", worst)};
}

Outcome episode_oracle() {
  std::mt19937 rng(1000);
  std::uniform_int_distribution<int> len(1, 50), val(-10, 10);
  std::size_t mismatches = 0, nesting = 0, compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (auto &x : v) x = val(rng);
    const auto s = fixtures::monthly_signal(1990, 1, v);
    const auto times = s.times();
    for (double delta : {-8.0, 0.0, 8.0})
      for (Direction dir : {Direction::up, Direction::down}) {
        std::vector<std::size_t> counts;
        for (int l : {1, 2, 5}) {
          const auto set = extract_threshold(s, delta, dir, l, std::nullopt);
          const auto want = oracle::threshold_runs(v, delta, dir == Direction::up, static_cast<std::size_t>(l));
          ++compared;
          bool same = set.size() == want.size();
          for (std::size_t k = 0; same && k < want.size(); ++k) {
            const auto &e = set.episodes[k];
            same = e.n == want[k].length && e.start == times[want[k].begin] &&
                   e.end == times[want[k].begin + want[k].length - 1];
          }
          mismatches += !same;
          counts.push_back(set.size());
        }
        if (!(counts[0] >= counts[1] && counts[1] >= counts[2])) ++nesting;
      }
  }
  return {mismatches == 0 && nesting == 0,
          fmt("%.0f extractions, %.0f oracle mismatches, %.0f nesting violations", static_cast<double>(compared),
              static_cast<double>(mismatches), static_cast<double>(nesting))};
}

Outcome nu_normalization() {
  double worst_peak = 0;
  int argmax_misses = 0;
  std::string missed;
  for (int k = 0; k <= 100; ++k) {
    const double c = k / 100.0;
    double peak = 0;
    for (int i = 0; i <= 100000; ++i) peak = std::max(peak, nu_relative(i / 100000.0, c));
    worst_peak = std::max(worst_peak, std::abs(peak - 1.0));
    for (int m : {12, 30, 96, 312}) {
      WeightParams p;
      p.m = m;
      p.c = c;
      p.b = 1;
      int best = 1;
      for (int s = 2; s <= m; ++s)
        if (w2_recency(s, p) > w2_recency(best, p)) best = s;
      double nearest = 1e300;
      for (int s = 1; s <= m; ++s) nearest = std::min(nearest, std::abs(s - c * m));
      if (std::abs(best - c * m) > nearest + 1e-9) {
        ++argmax_misses;
        missed += fmt(" c=%.2f,m=%.0f,peak=%.0f", c, m, best);
      }
    }
  }
  return {worst_peak <= 1e-9 && argmax_misses == 0,
          fmt("max |peak-1| %.3g, argmax misses %.0f of 404", worst_peak, argmax_misses) + missed};
}

Outcome p_value_oracle() {
  double worst = 0;
  for (double df : {5.0, 10.0, 30.0})
    for (double t : {0.5, 1.0, 2.0, 3.0}) worst = std::max(worst, std::abs(two_sided_p(t, df) - oracle::t_two_sided(t, df)));
  std::vector<double> x, up, down;
  for (int i = 0; i < 12; ++i) {
    x.push_back(i);
    up.push_back(3.0 * i - 2);
    down.push_back(-0.5 * i);
  }
  const double p_up = pearson(x, up).p, p_down = pearson(x, down).p;
  return {worst <= 1e-6 && p_up < 1e-12 && p_down < 1e-12,
          fmt("max abs difference %.3g; p(r=1)=%.3g p(r=-1)=%.3g", worst, p_up, p_down)};
}

bool is_planted(const MapRecord &r) {
  const auto p = fixtures::planted_params();
  return r.m == p.m && r.a == p.a && r.b && std::abs(*r.b - p.b) < 1e-9 && r.c && std::abs(*r.c - p.c) < 1e-9 && r.d &&
         std::abs(*r.d - p.d) < 1e-9;
}

Outcome planted_recovery() {
  int hits = 0;
  const auto season = Season::parse(fixtures::planted_season);
  for (int seed = 1; seed <= 100; ++seed) {
    const auto p = fixtures::planted(static_cast<std::uint64_t>(seed));
    const auto sig = fixtures::monthly_signal(1990, 1, p.values);
    const auto set = extract_threshold(sig, fixtures::planted_threshold, Direction::up, 1, season);
    const auto resp = p.response_series();
    StageSpec spec;
    spec.stage = Stage::S3;
    spec.m_list = {12, 24, 30, 36, 48};
    spec.season = set.season;
    CalibrationOptions opt;
    opt.jobs = 4;
    const auto map = run_stage(spec, set, IntensityKind::mean, build_schedule("all", set, &resp), resp, opt);
    const MapRecord *best = nullptr;
    for (const auto &r : map.records)
      if (r.r && (!best || std::abs(*r.r) > std::abs(*best->r))) best = &r;
    hits += best && is_planted(*best);
  }
  return {hits >= 95, fmt("planted cell is the |r| maximum in %.0f of 100 seeds", hits)};
}

Outcome determinism() {
  fixtures::TempDir dir;
  const auto p = fixtures::planted(7);
  const auto signal = dir.write("s.csv", p.signal_csv());
  const auto resp = dir.write("y.csv", p.response_csv());
  std::vector<std::string> maps;
  for (const char *jobs : {"1", "2", "4", "1"}) {
    const auto out = dir.file(std::string("run") + jobs + std::to_string(maps.size()));
    std::ostringstream o, e;
    const int code = cli::run({"calibrate", "--signal", signal, "--threshold", "8", "--season", fixtures::planted_season,
                               "--stage", "3", "--m-list", "24,30,36", "--response", resp, "--jobs", jobs, "--out-dir", out},
                              o, e);
    if (code != 0) return {false, "calibrate exited " + std::to_string(code) + ": " + e.str()};
    maps.push_back(csv::read_file(out + "/map_s3.csv"));
  }
  const bool same = std::all_of(maps.begin(), maps.end(), [&](const std::string &m) { return m == maps.front(); });
  return {same, fmt("%.0f runs (jobs 1,2,4,1), %.0f bytes each", static_cast<double>(maps.size()),
                    static_cast<double>(maps.front().size()))};
}

} // namespace

int main() {
  const std::vector<Check> checks{
      {"recency anchors", 1, recency_anchors},
      {"dampening floor", 1, dampening_floor},
      {"mean recovery", 1, mean_recovery},
      {"episode oracle equivalence", 10, episode_oracle},
      {"nu normalization", 5, nu_normalization},
      {"p-value oracle", 5, p_value_oracle},
      {"planted calibration recovery", 300, planted_recovery},
      {"determinism across jobs", 60, determinism},
  };
  int failures = 0;
  for (const auto &c : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r{false, ""};
    try {
      r = c.body();
    } catch (const std::exception &e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = r.ok && secs < c.budget_s;
    failures += !ok;
    std::printf("%s  %-30s %8.3fs (limit %gs)  %s\n", ok ? "PASS" : "FAIL", c.name, secs, c.budget_s, r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu checks, %d failed\n", checks.size(), failures);
  return failures == 0 ? 0 : 1;
}
