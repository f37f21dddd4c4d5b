#pragma once

/// @file stats.hpp
///
/// Pairing an index with a response series, Pearson correlation with a
/// two-sided Student-t p-value, least-squares line and a centred moving
/// average.

#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "impit/csv.hpp"
#include "impit/error.hpp"
#include "impit/index.hpp"
#include "impit/timeline.hpp"

namespace impit {

enum class ResponseTransform { none, log };

struct ResponseSeries {
  std::vector<Date> times;
  std::vector<double> values;
  ResponseTransform transform = ResponseTransform::none;
  std::string label;
};

/// Parses a (timestamp, value) CSV; with the log transform values must be
/// strictly positive and are replaced by their natural log.
inline ResponseSeries response_from_csv(std::string_view text, std::string label, const ColumnSchema &schema = {},
                                        ResponseTransform transform = ResponseTransform::none) {
  auto rows = parse_observations(csv::parse(text), schema);
  ResponseSeries r;
  r.label = std::move(label);
  r.transform = transform;
  for (auto &[d, v] : rows) {
    if (transform == ResponseTransform::log) {
      if (!(v > 0.0))
        fail_validation("log_response", "log transform needs positive responses (" + format_day(d) + ")");
      v = std::log(v);
    }
    r.times.push_back(d);
    r.values.push_back(v);
  }
  return r;
}

inline ResponseSeries load_response(const std::string &path, const ColumnSchema &schema = {},
                                    ResponseTransform transform = ResponseTransform::none) {
  return response_from_csv(csv::read_file(path), path, schema, transform);
}

struct AlignedPairs {
  std::vector<Date> times;
  std::vector<double> x; ///< index values
  std::vector<double> y; ///< response values
  std::size_t dropped_left = 0;  ///< index anchors without a response
  std::size_t dropped_right = 0; ///< responses without an anchor

  std::size_t size() const { return x.size(); }
};

/// Result of joining anchor timestamps with response timestamps.
struct JoinPlan {
  std::vector<std::pair<std::size_t, std::size_t>> pairs; ///< (anchor index, response index)
  std::size_t dropped_left = 0;  ///< index anchors without a response
  std::size_t dropped_right = 0; ///< responses without an anchor
};

/// Inner join on timestamps. With `tolerance_steps` = 1 an anchor may also pair
/// with a response one grid step away (closest first, each response used once).
inline JoinPlan join_timestamps(const std::vector<Date> &anchors, const std::vector<Date> &responses,
                                const Resolution &res, int tolerance_steps = 0) {
  JoinPlan plan;
  std::vector<bool> used(responses.size(), false);
  std::size_t j = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    while (j < responses.size() && responses[j] < anchors[i]) ++j;
    std::optional<std::size_t> hit;
    if (j < responses.size() && responses[j] == anchors[i] && !used[j]) {
      hit = j;
    } else if (tolerance_steps > 0) {
      const auto a = res.ordinal(anchors[i]);
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      for (std::size_t k = (j > 0 ? j - 1 : 0); k < responses.size() && k <= j + 1; ++k) {
        if (used[k]) continue;
        const auto dist = std::abs(res.ordinal(responses[k]) - a);
        if (dist <= tolerance_steps && dist < best) {
          best = dist;
          hit = k;
        }
      }
    }
    if (hit) {
      used[*hit] = true;
      plan.pairs.emplace_back(i, *hit);
    } else {
      ++plan.dropped_left;
    }
  }
  plan.dropped_right = responses.size() - plan.pairs.size();
  return plan;
}

inline AlignedPairs align_series(const std::vector<Date> &anchors, const std::vector<double> &values,
                                 const ResponseSeries &response, const Resolution &res, int tolerance_steps = 0) {
  const auto plan = join_timestamps(anchors, response.times, res, tolerance_steps);
  if (plan.pairs.size() < 3)
    fail_validation("too_few_pairs",
                    "only " + std::to_string(plan.pairs.size()) + " index/response pairs after alignment");
  AlignedPairs out;
  for (auto [i, k] : plan.pairs) {
    out.times.push_back(anchors[i]);
    out.x.push_back(values[i]);
    out.y.push_back(response.values[k]);
  }
  out.dropped_left = plan.dropped_left;
  out.dropped_right = plan.dropped_right;
  return out;
}

inline AlignedPairs align(const IndexSeries &index, const ResponseSeries &response, int tolerance_steps = 0) {
  return align_series(index.anchors, index.values, response, index.resolution, tolerance_steps);
}

struct AssociationResult {
  double r = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t dropped_left = 0;
  std::size_t dropped_right = 0;
};

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom,
/// via the regularised incomplete beta function.
inline double two_sided_p(double t, double df) {
  if (!(df > 0.0)) fail_validation("df", "degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return boost::math::ibeta(df / 2.0, 0.5, x);
}

inline AssociationResult pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail_validation("length_mismatch", "x and y differ in length");
  const std::size_t n = x.size();
  if (n < 3) fail_validation("too_few_pairs", "Pearson correlation needs at least 3 pairs");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // relative floor keeps rounding noise on a constant series from passing as variance
  auto degenerate = [n](double ss, double mean) {
    return ss == 0.0 || ss <= mean * mean * static_cast<double>(n) * 1e-24;
  };
  if (degenerate(sxx, mx) || degenerate(syy, my))
    fail_domain("undefined_correlation", "correlation undefined: a series is constant");

  AssociationResult res;
  res.n = n;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  res.r_squared = res.r * res.r;
  res.slope = sxy / sxx;
  res.intercept = my - res.slope * mx;
  const double df = static_cast<double>(n) - 2.0;
  const double one_minus = 1.0 - res.r_squared;
  res.p = one_minus <= 0.0 ? 0.0 : two_sided_p(res.r * std::sqrt(df / one_minus), df);
  return res;
}

inline AssociationResult associate(const AlignedPairs &pairs) {
  auto res = pearson(pairs.x, pairs.y);
  res.dropped_left = pairs.dropped_left;
  res.dropped_right = pairs.dropped_right;
  return res;
}

/// Centred moving average; windows are clipped at the series ends.
inline std::vector<double> moving_average(std::span<const double> v, int window) {
  if (window < 1 || window % 2 == 0) fail_validation("window", "moving-average window must be odd and positive");
  if (static_cast<std::size_t>(window) > v.size())
    fail_validation("window", "moving-average window longer than the series");
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(v.size());
  std::vector<double> out(v.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - half);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    double s = 0.0;
    for (auto k = lo; k <= hi; ++k) s += v[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

} // namespace impit
