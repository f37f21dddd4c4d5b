#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "impit/episodes.hpp"
#include "impit/index.hpp"

#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace impit;
using fixtures::monthly_signal;

namespace {

WeightParams to_params(const oracle::Params &o) {
  WeightParams p;
  p.m = o.m;
  p.a = o.a;
  p.b = o.b;
  p.c = o.c;
  p.d = o.d;
  p.timing_enabled = o.timing;
  return p;
}

std::vector<oracle::EpisodeSpan> spans(const EpisodeSet &set) {
  std::vector<oracle::EpisodeSpan> out;
  for (const auto &e : set.episodes) {
    oracle::EpisodeSpan s;
    s.first = e.start_ordinal;
    s.values = e.values;
    s.dates = grid_dates(set.resolution, e.start_ordinal, e.n);
    out.push_back(s);
  }
  return out;
}

EvaluationSchedule all_steps(const Signal &s) {
  return EvaluationSchedule::every_step(s.resolution(), s.first_ordinal(), s.last_ordinal());
}

std::vector<double> random_values(std::mt19937 &rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-12, 12);
  std::vector<double> v(n);
  for (auto &x : v) x = u(rng);
  return v;
}

} // namespace

TEST(Index, SingleEpisodeWithUnitWeightsIsItsMean) {
  const auto s = monthly_signal(2000, 1, {0, 9, 11, 10, 0, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 6;
  EvaluationSchedule sched{{Date{2000, 6, 1}}};
  const auto ix = evaluate(set, p, IntensityKind::mean, sched);
  EXPECT_DOUBLE_EQ(ix.values[0], 10.0);
  EXPECT_EQ(ix.episode_count(0), 1u);
}

TEST(Index, SingletonConfigurationIsTrailingMean) {
  std::mt19937 rng(8);
  const auto v = random_values(rng, 60);
  const auto s = monthly_signal(1990, 1, v);
  WeightParams p;
  p.m = 12;
  IndexOptions opt;
  opt.per_memory = true;
  const auto ix = evaluate(singleton_episodes(s), p, IntensityKind::mean, all_steps(s), opt);
  for (std::size_t i = 11; i < v.size(); ++i) {
    const double mean = std::accumulate(v.begin() + static_cast<long>(i) - 11, v.begin() + static_cast<long>(i) + 1, 0.0) / 12;
    EXPECT_NEAR(ix.values[i], mean, 1e-12 * std::max(1.0, std::abs(mean)));
  }
}

TEST(Index, EmptyWindowIsZero) {
  const auto s = monthly_signal(2000, 1, {9, 9, 0, 0, 0, 0, 0, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 3;
  const auto ix = evaluate(set, p, IntensityKind::mean, EvaluationSchedule{{Date{2000, 8, 1}}});
  EXPECT_EQ(ix.values[0], 0.0);
  EXPECT_EQ(ix.episode_count(0), 0u);
}

TEST(Index, MatchesOracleOnRandomSets) {
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> mdist(1, 40);
  std::uniform_real_distribution<double> u01(0, 1);
  const auto season = *Season::parse("04-01:07-31");
  const auto season_days = oracle::season_days(4, 1, 7, 31);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = monthly_signal(1990, 1, random_values(rng, 120));
    const auto set = extract_threshold(s, 3, Direction::up, 1 + trial % 3, season);
    oracle::Params o;
    o.m = mdist(rng);
    o.a = 3 * u01(rng);
    o.b = 4 * u01(rng);
    o.c = u01(rng);
    o.d = 3 * u01(rng);
    o.timing = trial % 2 == 0;
    const auto ix = evaluate(set, to_params(o), IntensityKind::mean, all_steps(s));
    const auto eps = spans(set);
    for (std::size_t i = 0; i < ix.size(); ++i) {
      const double want = oracle::index_at(eps, s.first_ordinal() + static_cast<std::int64_t>(i), o, season_days);
      EXPECT_NEAR(ix.values[i], want, 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(Index, DropPolicySkipsStraddlingEpisodes) {
  const auto s = monthly_signal(2000, 1, {9, 9, 9, 0, 9, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 4;
  IndexOptions drop;
  drop.edge = EdgePolicy::drop;
  EvaluationSchedule sched{{Date{2000, 6, 1}}};
  EXPECT_EQ(evaluate(set, p, IntensityKind::mean, sched, drop).episode_count(0), 1u);
  const auto trunc = evaluate(set, p, IntensityKind::mean, sched);
  ASSERT_EQ(trunc.episode_count(0), 2u);
  EXPECT_EQ(trunc.diagnostics[0][0].view.n, 1u); // only March is still visible
}

TEST(Index, PrecomputedIntensityIsFlaggedWhenTruncated) {
  auto set = episodes_from_csv("start,end,intensity_mean\n2000-01,2000-04,5\n", nullptr, std::nullopt);
  set.span = std::make_pair(set.resolution.ordinal(Date{2000, 1, 1}), set.resolution.ordinal(Date{2000, 12, 1}));
  WeightParams p;
  p.m = 3;
  const auto ix = evaluate(set, p, IntensityKind::precomputed, EvaluationSchedule{{Date{2000, 5, 1}}});
  ASSERT_EQ(ix.episode_count(0), 1u);
  EXPECT_TRUE(ix.diagnostics[0][0].truncated);
  EXPECT_DOUBLE_EQ(ix.diagnostics[0][0].intensity, 5.0);
}

TEST(Index, TimingWarnings) {
  const auto s = monthly_signal(2000, 1, {9, 9, 0, 0, 0, 0, 0, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 12;
  p.timing_enabled = true;
  IndexOptions opt;
  opt.timing_season = Season::parse("06-01:08-31");
  const auto ix = evaluate(set, p, IntensityKind::mean, all_steps(s), opt);
  for (double v : ix.values) EXPECT_EQ(v, 0.0);
  ASSERT_EQ(ix.warnings.size(), 1u);
  EXPECT_EQ(ix.warnings[0].rfind("timing_no_overlap", 0), 0u);
  p.d = 0;
  EXPECT_EQ(evaluate(set, p, IntensityKind::mean, all_steps(s), opt).warnings[0].rfind("timing_degenerate", 0), 0u);
  IndexOptions none;
  EXPECT_THROW(evaluate(set, p, IntensityKind::mean, all_steps(s), none), Error);
}

TEST(Index, AnchorValidation) {
  const auto s = monthly_signal(2000, 1, {9, 9, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 2;
  EXPECT_THROW(evaluate(set, p, IntensityKind::mean, EvaluationSchedule{{Date{2000, 1, 15}}}), Error);
  EXPECT_THROW(evaluate(set, p, IntensityKind::mean, EvaluationSchedule{{Date{1999, 12, 1}}}), Error);
  EXPECT_THROW(evaluate(set, p, IntensityKind::mean, EvaluationSchedule{{Date{2000, 3, 1}, Date{2000, 2, 1}}}), Error);
}

TEST(Index, LongMemoryDiagnosticsShowFactors) {
  std::mt19937 rng(4);
  const auto s = monthly_signal(1980, 1, random_values(rng, 480));
  const auto set = extract_threshold(s, 8, Direction::up, 1, Season::parse("06-01:09-30"));
  WeightParams p{312, 2, 3, 0.75, 1, true};
  const auto ix = evaluate(set, p, IntensityKind::mean, EvaluationSchedule::annual(s.resolution(), s.first_ordinal(), s.last_ordinal()));
  const auto diag = diagnostics_to_csv(ix);
  EXPECT_EQ(diag.rfind("anchor,episode_id,n_in_window,s,tau_in_window,w1,w2,w3,intensity,term,truncated\n", 0), 0u);
  EXPECT_GT(std::count(diag.begin(), diag.end(), '\n'), 100);
}

TEST(Index, AnnualScheduleDefaults) {
  const auto monthly = EvaluationSchedule::annual(Resolution::monthly(), Resolution::monthly().ordinal(Date{1990, 3, 1}),
                                                  Resolution::monthly().ordinal(Date{1993, 11, 1}));
  ASSERT_EQ(monthly.anchors.size(), 3u);
  EXPECT_EQ(monthly.anchors[0], (Date{1990, 12, 1}));
  const auto daily = EvaluationSchedule::annual(Resolution::daily(), Date{1990, 1, 1}.days(), Date{1991, 12, 31}.days(), 2);
  ASSERT_EQ(daily.anchors.size(), 2u);
  EXPECT_EQ(daily.anchors[0], (Date{1990, 2, 28}));
}

// --- properties ----------------------------------------------------------------

TEST(IndexProperty, AdditivityOverDisjointSets) {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = monthly_signal(1990, 1, random_values(rng, 100));
    const auto all = extract_threshold(s, 2, Direction::up, 1, Season::parse("03-01:06-30"));
    EpisodeSet even = all, odd = all;
    even.episodes.clear();
    odd.episodes.clear();
    for (std::size_t k = 0; k < all.size(); ++k) (k % 2 ? odd : even).episodes.push_back(all.episodes[k]);
    WeightParams p{18, 1.2, 2.0, 0.3, 1.5, trial % 2 == 1};
    const auto whole = evaluate(all, p, IntensityKind::mean, all_steps(s));
    const auto a = evaluate(even, p, IntensityKind::mean, all_steps(s));
    const auto b = evaluate(odd, p, IntensityKind::mean, all_steps(s));
    for (std::size_t i = 0; i < whole.size(); ++i) EXPECT_NEAR(whole.values[i], a.values[i] + b.values[i], 1e-10);
  }
}

TEST(IndexProperty, ScaleEquivarianceUnderMean) {
  std::mt19937 rng(43);
  const auto v = random_values(rng, 90);
  const auto s = monthly_signal(1990, 1, v);
  const auto set = extract_threshold(s, 4, Direction::up, 2, std::nullopt);
  for (double alpha : {0.5, 3.0, 1e3}) {
    auto scaled = v;
    for (auto &x : scaled) x *= alpha;
    const auto s2 = monthly_signal(1990, 1, scaled);
    const auto set2 = extract_threshold(s2, 4 * alpha, Direction::up, 2, std::nullopt);
    WeightParams p{24, 0.7, 1.1, 0.6, 1, false};
    const auto a = evaluate(set, p, IntensityKind::mean, all_steps(s));
    const auto b = evaluate(set2, p, IntensityKind::mean, all_steps(s2));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.values[i], alpha * a.values[i], 1e-9 * alpha * (1 + std::abs(a.values[i])));
  }
}

TEST(IndexProperty, WindowLocality) {
  std::mt19937 rng(47);
  const int m = 15;
  auto v = random_values(rng, 80);
  const auto s = monthly_signal(1990, 1, v);
  const auto set = extract_threshold(s, 0, Direction::up, 1, std::nullopt);
  WeightParams p{m, 1, 2, 0.5, 1, false};
  const std::size_t at = 60;
  const Date anchor = s.times()[at];
  const auto base = evaluate(set, p, IntensityKind::mean, EvaluationSchedule{{anchor}}).values[0];
  for (int trial = 0; trial < 20; ++trial) {
    auto w = v;
    for (std::size_t i = 0; i <= at - m; ++i) w[i] = random_values(rng, 1)[0];
    const auto s2 = monthly_signal(1990, 1, w);
    const auto changed = evaluate(extract_threshold(s2, 0, Direction::up, 1, std::nullopt), p, IntensityKind::mean,
                                  EvaluationSchedule{{anchor}});
    EXPECT_NEAR(changed.values[0], base, 1e-12);
  }
}

TEST(IndexProperty, OffSeasonEpisodesContributeNothingAndTermsSum) {
  std::mt19937 rng(53);
  const auto s = monthly_signal(1990, 1, random_values(rng, 150));
  const auto set = extract_threshold(s, 1, Direction::up, 1, Season::parse("10-01:12-31"));
  WeightParams p{36, 1.5, 2.5, 0.3, 2, true};
  const auto ix = evaluate(set, p, IntensityKind::mean, all_steps(s));
  for (std::size_t i = 0; i < ix.size(); ++i) {
    double sum = 0;
    for (const auto &c : ix.diagnostics[i]) {
      if (c.view.tau == 0) {
        EXPECT_EQ(c.term(), 0.0);
      }
      sum += c.term();
    }
    EXPECT_NEAR(sum, ix.values[i], 1e-10 * std::max(1.0, std::abs(ix.values[i])));
  }
}

TEST(IndexProperty, ZeroWeightsGiveUnweightedSum) {
  std::mt19937 rng(59);
  const auto s = monthly_signal(1990, 1, random_values(rng, 60));
  const auto set = extract_threshold(s, 0, Direction::up, 1, std::nullopt);
  WeightParams p{20, 0, 0, 0.5, 1, false};
  const auto ix = evaluate(set, p, IntensityKind::sum, all_steps(s));
  for (std::size_t i = 0; i < ix.size(); ++i) {
    const auto anchor = s.first_ordinal() + static_cast<std::int64_t>(i);
    double want = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto o = s.first_ordinal() + static_cast<std::int64_t>(k);
      if (o > anchor - 20 && o <= anchor && s.values()[k] >= 0) want += s.values()[k];
    }
    EXPECT_NEAR(ix.values[i], want, 1e-10);
  }
}

TEST(IndexCsv, Format) {
  const auto s = monthly_signal(2000, 1, {9, 0});
  const auto set = extract_threshold(s, 8, Direction::up, 1, std::nullopt);
  WeightParams p;
  p.m = 2;
  const auto ix = evaluate(set, p, IntensityKind::mean, all_steps(s));
  EXPECT_EQ(index_to_csv(ix), "anchor,value,K\n2000-01,9,1\n2000-02,9,1\n");
}
