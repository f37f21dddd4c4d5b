#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "impit/timeline.hpp"

#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace impit;

namespace {

std::vector<Date> months(int y0, int m0, int count) {
  std::vector<Date> out;
  const auto res = Resolution::monthly();
  const auto first = res.ordinal(Date{y0, m0, 1});
  for (int i = 0; i < count; ++i) out.push_back(res.at(first + i));
  return out;
}

Season season(const char *text) { return *Season::parse(text); }

} // namespace

TEST(Date, DayNumberRoundTrip) {
  for (std::int64_t d = -1000; d < 200000; d += 7) EXPECT_EQ(Date::from_days(d).days(), d);
  EXPECT_EQ((Date{2000, 3, 1}.days() - Date{2000, 2, 28}.days()), 2);
  EXPECT_EQ((Date{1900, 3, 1}.days() - Date{1900, 2, 28}.days()), 1);
}

TEST(Date, ParseAndFormat) {
  EXPECT_EQ(parse_date("1990-02"), (Date{1990, 2, 1}));
  EXPECT_EQ(parse_date("2000-02-29"), (Date{2000, 2, 29}));
  EXPECT_FALSE(parse_date("1999-02-29"));
  EXPECT_FALSE(parse_date("1999-13"));
  EXPECT_FALSE(parse_date("99-01-01"));
  EXPECT_EQ(format_month(Date{1990, 2, 1}), "1990-02");
  EXPECT_EQ(format_day(Date{1990, 2, 3}), "1990-02-03");
}

TEST(Resolution, OrdinalsAreConsecutiveOnGrid) {
  for (const auto res : {Resolution::daily(), Resolution::monthly(), Resolution::custom(6, 2)}) {
    const auto start = res.ordinal(res.at(100));
    for (std::int64_t o = start; o < start + 500; ++o) {
      const auto d = res.at(o);
      EXPECT_TRUE(res.on_grid(d));
      EXPECT_EQ(res.ordinal(d), o);
    }
  }
  EXPECT_FALSE(Resolution::monthly().on_grid(Date{1990, 1, 2}));
}

TEST(Signal, ThreeRowMonthlyCsv) {
  const auto s = signal_from_csv("date,value\n1990-01,5.0\n1990-02,-3.1\n1990-03,8.2\n", "soi");
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.resolution(), Resolution::monthly());
  EXPECT_DOUBLE_EQ(s.values()[1], -3.1);
}

TEST(Signal, ShuffledRowsGiveIdenticalSignal) {
  const auto a = signal_from_csv("date,value\n1990-01,5.0\n1990-02,-3.1\n1990-03,8.2\n", "a");
  const auto b = signal_from_csv("date,value\n1990-03,8.2\n1990-01,5.0\n1990-02,-3.1\n", "b");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.times()[i], b.times()[i]);
    EXPECT_EQ(a.values()[i], b.values()[i]);
  }
}

TEST(Signal, GapNamesMissingMonth) {
  try {
    signal_from_csv("date,value\n1990-01,5.0\n1990-03,8.2\n", "s");
    FAIL() << "gap accepted";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), "gap");
    EXPECT_NE(std::string(e.what()).find("1990-02"), std::string::npos);
  }
}

TEST(Signal, GapOracleFindsFirstMissingStep) {
  // drop one random month from a complete grid and compare with the enumerated expectation
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto grid = months(1980, 1, 40);
    const auto drop = std::uniform_int_distribution<int>(1, 38)(rng);
    std::string text = "date,value\n";
    for (int i = 0; i < 40; ++i)
      if (i != drop) text += format_month(grid[static_cast<std::size_t>(i)]) + ",1\n";
    try {
      signal_from_csv(text, "s");
      FAIL();
    } catch (const Error &e) {
      EXPECT_NE(std::string(e.what()).find(format_month(grid[static_cast<std::size_t>(drop)])), std::string::npos);
    }
  }
}

TEST(Signal, RejectsDuplicatesAndNonFinite) {
  EXPECT_THROW(signal_from_csv("date,value\n1990-01,1\n1990-01,2\n", "s"), Error);
  EXPECT_THROW(signal_from_csv("date,value\n1990-01,nan\n", "s"), Error);
  EXPECT_THROW(signal_from_csv("date,value\n1990-01,abc\n", "s"), Error);
}

TEST(Signal, IngestIsIdempotent) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::vector<double> v(120);
  for (auto &x : v) x = u(rng) / 7.0;
  const auto s = fixtures::monthly_signal(1975, 5, v);
  const auto back = signal_from_csv(s.to_csv(), "again");
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back.times()[i], s.times()[i]);
    EXPECT_EQ(back.values()[i], s.values()[i]);
  }
}

TEST(Signal, ColumnSelectionAndCustomGrid) {
  const auto s = signal_from_csv("t,x,sst\n2000-01-01,1,20.5\n2000-01-07,2,20.7\n2000-01-13,3,21\n", "sst",
                                 {"t", "sst"}, Resolution::custom(6));
  EXPECT_EQ(s.size(), 3u);
  EXPECT_DOUBLE_EQ(s.values()[2], 21.0);
  EXPECT_THROW(signal_from_csv("t,x\n2000-01-01,1\n", "s", {"t", "missing"}), Error);
}

TEST(Season, ParseAndMembership) {
  const auto s = season("05-01:10-31");
  EXPECT_TRUE(s.contains(Date{1999, 5, 1}));
  EXPECT_TRUE(s.contains(Date{1999, 10, 31}));
  EXPECT_FALSE(s.contains(Date{1999, 11, 1}));
  const auto w = season("12-01:02-28");
  EXPECT_TRUE(w.wraps());
  EXPECT_TRUE(w.contains(Date{2000, 1, 15}));
  EXPECT_FALSE(w.contains(Date{2000, 3, 1}));
  EXPECT_FALSE(Season::parse("02-30:03-01"));
  EXPECT_FALSE(Season::parse("0501:1031"));
}

TEST(SeasonOverlap, TwentyFiveMonthsAgainstSummer) {
  const auto ts = months(2008, 1, 25);
  EXPECT_EQ(season_overlap_length(ts, season("06-01:08-31")), 6u);
  EXPECT_EQ(oracle::overlap(ts, oracle::season_days(6, 1, 8, 31)), 6u);
}

TEST(SeasonOverlap, FullYearAndEmpty) {
  const auto ts = months(2001, 3, 17);
  EXPECT_EQ(season_overlap_length(ts, season("01-01:12-31")), ts.size());
  std::vector<Date> march{{2001, 3, 1}, {2002, 3, 1}, {2003, 3, 9}};
  EXPECT_EQ(season_overlap_length(march, season("06-01:08-31")), 0u);
}

TEST(SeasonOverlap, MatchesEnumerationOnRandomDailySets) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> month(1, 12), day(1, 28), span(0, 3000);
  for (int trial = 0; trial < 200; ++trial) {
    const int sm = month(rng), sd = day(rng), em = month(rng), ed = day(rng);
    if (sm == em && ed < sd) continue;
    const Season s{{sm, sd}, {em, ed}};
    std::vector<Date> ts;
    for (int k = 0; k < 40; ++k) ts.push_back(Date::from_days(Date{1990, 1, 1}.days() + span(rng)));
    EXPECT_EQ(season_overlap_length(ts, s), oracle::overlap(ts, oracle::season_days(sm, sd, em, ed)))
        << s.str();
  }
}

TEST(SeasonOverlap, ComplementAdditivity) {
  // non-wrapping season and its complement partition the year
  std::vector<Date> ts;
  for (int d = 0; d < 2000; d += 3) ts.push_back(Date::from_days(Date{1995, 1, 1}.days() + d));
  const Season s = season("03-15:09-20");
  const Season comp = season("09-21:03-14");
  EXPECT_EQ(season_overlap_length(ts, s) + season_overlap_length(ts, comp), ts.size());
}

TEST(SeasonOverlap, InvariantUnderWholeYearShift) {
  const auto ts = months(1990, 4, 30);
  const Season s = season("11-01:02-28");
  for (int shift : {-7, 1, 12, 400}) {
    std::vector<Date> moved;
    for (auto d : ts) moved.push_back(Date{d.year + shift, d.month, d.day});
    EXPECT_EQ(season_overlap_length(moved, s), season_overlap_length(ts, s));
  }
}
