#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace ecgxai::stats {

/// Linear-interpolation quantile (q in [0,1]) of the finite entries; NaN when none.
inline double quantile(std::span<const double> values, double q) {
  std::vector<double> v;
  v.reserve(values.size());
  for (double x : values)
    if (!std::isnan(x)) v.push_back(x);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= v.size()) return v.back();
  const double f = pos - static_cast<double>(i);
  return v[i] + f * (v[i + 1] - v[i]);
}

inline double median(std::span<const double> values) { return quantile(values, 0.5); }

/// Mean of the non-NaN entries; NaN when none.
inline double mean(std::span<const double> values) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : values)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace ecgxai::stats
