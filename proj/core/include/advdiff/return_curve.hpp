#pragma once

// Average-return curve utilities: smoothing, monotone projection, inversion
// and the improvement-phase cutoff.

#include <span>
#include <vector>

namespace advdiff {

struct CurvePoint {
  double step = 0.0;
  double value = 0.0;
};

/// Centered moving average; window w covers [i - w/2, i + w - 1 - w/2],
/// truncated at both ends. Throws ConfigError if window < 1.
std::vector<double> moving_average(std::span<const double> values, int window);

/// Least-squares non-decreasing fit (pool adjacent violators, unit weights).
std::vector<double> isotonic_increasing(std::span<const double> values);

/// Projects the curve values onto a non-decreasing sequence.
std::vector<CurvePoint> isotonic_curve(std::span<const CurvePoint> curve);

/// First step at which a non-decreasing curve reaches target, linearly
/// interpolated between knots. Targets at or below the first value return
/// the first step; targets above the maximum return the last step.
/// Throws ConfigError for an empty curve.
double gamma_inverse(std::span<const CurvePoint> monotone_curve, double target);

/// First step where the curve reaches `fraction` of the way from its minimum
/// to its plateau (mean of the final `tail` share of points).
double improvement_cutoff(std::span<const CurvePoint> smoothed, double fraction = 0.95,
                          double tail = 0.1);

}  // namespace advdiff
