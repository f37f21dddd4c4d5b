#pragma once

/// @file weights.hpp
///
/// Importance weights of an episode inside a memory window of length m:
///
///   w1 (persistence) = exp(-a (1 - n/m))
///   w2 (recency)     = exp(-b (1 - nu(s)))
///   nu(s)            = lambda (s/m)^c (1 - s/m)^(1-c),  lambda = 1 / (c^c (1-c)^(1-c))
///   w3 (timing)      = 1 - exp(-d tau/n)
///
/// with 0^0 = 1 throughout. s = 1 denotes the most recent grid step.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "impit/error.hpp"

namespace impit {

struct WeightParams {
  int m = 1;
  double a = 0.0;
  double b = 0.0;
  double c = 0.5;
  double d = 1.0;
  bool timing_enabled = false;

  bool operator==(const WeightParams &) const = default;

  void validate() const {
    if (m < 1) fail_validation("m", "memory m must be at least 1");
    if (!(a >= 0.0) || !std::isfinite(a)) fail_validation("a", "a must be a finite value >= 0");
    if (!(b >= 0.0) || !std::isfinite(b)) fail_validation("b", "b must be a finite value >= 0");
    if (!(c >= 0.0 && c <= 1.0)) fail_validation("c", "c must lie in [0, 1]");
    if (!(d >= 0.0) || !std::isfinite(d)) fail_validation("d", "d must be a finite value >= 0");
  }
};

/// Normalisation making the peak of nu exactly 1.
inline double recency_lambda(double c) {
  return 1.0 / (std::pow(c, c) * std::pow(1.0 - c, 1.0 - c));
}

/// nu as a function of the relative position x = s/m in [0, 1].
inline double nu_relative(double x, double c) {
  return recency_lambda(c) * std::pow(x, c) * std::pow(1.0 - x, 1.0 - c);
}

inline double w1_persistence(std::size_t n, const WeightParams &p) {
  if (n < 1) fail_validation("n", "episode length must be at least 1");
  const double len = static_cast<double>(std::min<std::size_t>(n, static_cast<std::size_t>(p.m)));
  return std::exp(-p.a * (1.0 - len / p.m));
}

inline void check_position(int s, const WeightParams &p) {
  if (s < 1 || s > p.m)
    fail_validation("s_range", "recency position " + std::to_string(s) + " outside [1, " + std::to_string(p.m) + "]");
}

inline double nu(int s, const WeightParams &p) {
  check_position(s, p);
  return nu_relative(static_cast<double>(s) / p.m, p.c);
}

inline double w2_recency(int s, const WeightParams &p) {
  return std::exp(-p.b * (1.0 - nu(s, p)));
}

/// 1 when timing is disabled; otherwise 1 - exp(-d tau/n).
inline double w3_timing(std::size_t tau, std::size_t n, const WeightParams &p) {
  if (n < 1) fail_validation("n", "episode length must be at least 1");
  if (tau > n) fail_validation("tau_range", "season overlap exceeds episode length");
  if (!p.timing_enabled) return 1.0;
  return 1.0 - std::exp(-p.d * (static_cast<double>(tau) / static_cast<double>(n)));
}

/// Position of an episode relative to an evaluation anchor.
struct EpisodeView {
  std::size_t n = 1;   ///< members inside the window
  int s = 1;           ///< steps back to the most recent visible member (1 = the anchor)
  std::size_t tau = 0; ///< in-window members inside the timing season
};

struct WeightFactors {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  double product() const { return w1 * w2 * w3; }
};

inline WeightFactors weight_factors(const EpisodeView &v, const WeightParams &p) {
  return {w1_persistence(v.n, p), w2_recency(v.s, p), w3_timing(v.tau, v.n, p)};
}

inline double combined_weight(const EpisodeView &v, const WeightParams &p) {
  return weight_factors(v, p).product();
}

/// True when every weight (and therefore every index value) is zero.
inline bool timing_degenerate(const WeightParams &p) { return p.timing_enabled && p.d == 0.0; }

/// w2 tabulated for s = 1..m (index 0 unused).
inline std::vector<double> recency_table(const WeightParams &p) {
  std::vector<double> t(static_cast<std::size_t>(p.m) + 1, 0.0);
  for (int s = 1; s <= p.m; ++s) t[static_cast<std::size_t>(s)] = w2_recency(s, p);
  return t;
}

} // namespace impit
