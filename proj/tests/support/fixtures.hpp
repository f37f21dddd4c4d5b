#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "impit/csv.hpp"
#include "impit/stats.hpp"
#include "impit/timeline.hpp"

#include "oracle.hpp"

namespace fixtures {

/// Scratch directory removed on destruction.
class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("impit_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::string file(const std::string &name) const { return (path_ / name).string(); }
  std::string write(const std::string &name, const std::string &text) const {
    impit::csv::write_file(file(name), text);
    return file(name);
  }

private:
  std::filesystem::path path_;
};

inline std::string monthly_csv(int year, int month, const std::vector<double> &values) {
  std::string out = "date,value\n";
  const auto res = impit::Resolution::monthly();
  const auto first = res.ordinal(impit::Date{year, month, 1});
  for (std::size_t i = 0; i < values.size(); ++i)
    out += res.format(res.at(first + static_cast<std::int64_t>(i))) + "," + impit::csv::format(values[i]) + "\n";
  return out;
}

inline impit::Signal monthly_signal(int year, int month, const std::vector<double> &values) {
  const auto res = impit::Resolution::monthly();
  const auto first = res.ordinal(impit::Date{year, month, 1});
  std::vector<impit::Date> times;
  for (std::size_t i = 0; i < values.size(); ++i) times.push_back(res.at(first + static_cast<std::int64_t>(i)));
  return impit::Signal("s", res, times, values);
}

/// Configuration the planted response is built from.
inline oracle::Params planted_params() {
  oracle::Params p;
  p.m = 30;
  p.a = 0;
  p.b = 3;
  p.c = 0.4;
  p.d = 1;
  p.timing = true;
  return p;
}

inline constexpr double planted_threshold = 8.0;
inline constexpr const char *planted_season = "04-01:05-31";

/// Thirty years of monthly data: background strictly below the threshold
/// with runs of 1..6 months above it, and a response equal to the index at
/// the planted configuration plus Gaussian noise (sd = 5% of the index sd).
struct Planted {
  std::vector<double> values;
  std::vector<oracle::EpisodeSpan> episodes;
  std::vector<impit::Date> anchors;
  std::vector<double> index;
  std::vector<double> response;

  std::string signal_csv() const { return monthly_csv(1990, 1, values); }
  std::string response_csv() const {
    std::string out = "date,value\n";
    for (std::size_t i = 0; i < anchors.size(); ++i)
      out += impit::format_month(anchors[i]) + "," + impit::csv::format(response[i]) + "\n";
    return out;
  }
  impit::ResponseSeries response_series() const { return impit::response_from_csv(response_csv(), "planted"); }
};

inline Planted planted(std::uint64_t seed, int years = 30) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> background(-6.0, 6.0), high(8.5, 15.0);
  std::uniform_int_distribution<int> gap(2, 9), length(1, 6);
  const auto res = impit::Resolution::monthly();
  const auto first = res.ordinal(impit::Date{1990, 1, 1});
  const std::size_t n = static_cast<std::size_t>(years) * 12;

  Planted p;
  p.values.resize(n);
  for (auto &v : p.values) v = background(rng);
  for (std::size_t i = static_cast<std::size_t>(gap(rng)); i < n;) {
    const auto len = std::min<std::size_t>(static_cast<std::size_t>(length(rng)), n - i);
    oracle::EpisodeSpan e;
    e.first = first + static_cast<std::int64_t>(i);
    for (std::size_t k = 0; k < len; ++k) {
      p.values[i + k] = high(rng);
      e.values.push_back(p.values[i + k]);
      e.dates.push_back(res.at(e.first + static_cast<std::int64_t>(k)));
    }
    p.episodes.push_back(e);
    i += len + static_cast<std::size_t>(gap(rng));
  }

  const auto season = oracle::season_days(4, 1, 5, 31);
  const auto params = planted_params();
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = first + static_cast<std::int64_t>(i);
    p.anchors.push_back(res.at(o));
    p.index.push_back(oracle::index_at(p.episodes, o, params, season));
  }
  const double mean = std::accumulate(p.index.begin(), p.index.end(), 0.0) / static_cast<double>(n);
  double var = 0;
  for (double v : p.index) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  std::normal_distribution<double> noise(0.0, 0.05 * sd);
  for (double v : p.index) p.response.push_back(v + noise(rng));
  return p;
}

} // namespace fixtures
