#include "advdiff/return_curve.hpp"

#include <algorithm>
#include <cmath>

#include "advdiff/error.hpp"

namespace advdiff {

std::vector<double> moving_average(std::span<const double> values, int window) {
  if (window < 1) throw ConfigError("moving_average: window must be >= 1");
  const auto n = static_cast<long>(values.size());
  const long before = window / 2;
  const long after = window - 1 - before;
  std::vector<double> prefix(values.size() + 1, 0.0);
  for (long i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values[i];
  std::vector<double> out(values.size());
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, i - before);
    const long hi = std::min(n - 1, i + after);
    out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::vector<double> isotonic_increasing(std::span<const double> values) {
  struct Block {
    double mean;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      const Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double total = static_cast<double>(prev.count + top.count);
      prev.mean = (prev.mean * prev.count + top.mean * top.count) / total;
      prev.count += top.count;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const Block& b : blocks) out.insert(out.end(), b.count, b.mean);
  return out;
}

std::vector<CurvePoint> isotonic_curve(std::span<const CurvePoint> curve) {
  std::vector<double> v;
  v.reserve(curve.size());
  for (const CurvePoint& p : curve) v.push_back(p.value);
  const std::vector<double> fit = isotonic_increasing(v);
  std::vector<CurvePoint> out(curve.begin(), curve.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].value = fit[i];
  return out;
}

double gamma_inverse(std::span<const CurvePoint> c, double target) {
  if (c.empty()) throw ConfigError("gamma_inverse: empty return curve");
  if (target <= c.front().value) return c.front().step;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (c[i].value >= target) {
      const double span = c[i].value - c[i - 1].value;
      const double frac = span > 0.0 ? (target - c[i - 1].value) / span : 0.0;
      return c[i - 1].step + frac * (c[i].step - c[i - 1].step);
    }
  }
  return c.back().step;
}

double improvement_cutoff(std::span<const CurvePoint> smoothed, double fraction, double tail) {
  if (smoothed.empty()) throw ConfigError("improvement_cutoff: empty return curve");
  const std::size_t n = smoothed.size();
  const std::size_t tail_count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail * n)));
  double plateau = 0.0;
  for (std::size_t i = n - tail_count; i < n; ++i) plateau += smoothed[i].value;
  plateau /= static_cast<double>(tail_count);
  double lo = smoothed.front().value;
  for (const CurvePoint& p : smoothed) lo = std::min(lo, p.value);
  const double threshold = lo + fraction * (plateau - lo);
  for (const CurvePoint& p : smoothed)
    if (p.value >= threshold) return p.step;
  return smoothed.back().step;
}

}  // namespace advdiff
