#pragma once

// Scalar intensity of an episode from its member values.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impit/error.hpp"

namespace impit {

enum class IntensityKind { mean, log_sum, median, min, max, sum, precomputed };

inline const char *to_string(IntensityKind k) {
  switch (k) {
  case IntensityKind::mean: return "mean";
  case IntensityKind::log_sum: return "log_sum";
  case IntensityKind::median: return "median";
  case IntensityKind::min: return "min";
  case IntensityKind::max: return "max";
  case IntensityKind::sum: return "sum";
  case IntensityKind::precomputed: return "precomputed";
  }
  return "mean";
}

inline std::optional<IntensityKind> parse_intensity_kind(std::string_view s) {
  for (auto k : {IntensityKind::mean, IntensityKind::log_sum, IntensityKind::median, IntensityKind::min,
                 IntensityKind::max, IntensityKind::sum, IntensityKind::precomputed})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// `label` names the episode in error messages. log_sum uses the natural log;
/// the even-length median averages the two central values.
inline double intensity(std::span<const double> values, IntensityKind kind,
                        std::optional<double> precomputed = std::nullopt, const std::string &label = "episode") {
  if (kind == IntensityKind::precomputed) {
    if (!precomputed)
      fail_validation("precomputed_missing", label + " has no precomputed intensity");
    return *precomputed;
  }
  if (values.empty()) fail_validation("no_values", label + " has no member values");

  const double sum = std::accumulate(values.begin(), values.end(), 0.0);
  switch (kind) {
  case IntensityKind::mean: return sum / static_cast<double>(values.size());
  case IntensityKind::sum: return sum;
  case IntensityKind::log_sum:
    if (!(sum > 0.0)) fail_domain("log_domain", "log_sum undefined for " + label + ": member sum is not positive");
    return std::log(sum);
  case IntensityKind::min: return *std::min_element(values.begin(), values.end());
  case IntensityKind::max: return *std::max_element(values.begin(), values.end());
  case IntensityKind::median: {
    std::vector<double> v(values.begin(), values.end());
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double upper = v[mid];
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
  }
  case IntensityKind::precomputed: break;
  }
  return 0.0;
}

} // namespace impit
