#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace ecgxai::testing {

// Every set partition of n items as restricted growth strings.
inline std::vector<std::vector<int>> all_partitions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> a(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int maxv) {
    if (i == n) {
      out.push_back(a);
      return;
    }
    for (int v = 0; v <= maxv + 1; ++v) {
      a[static_cast<std::size_t>(i)] = v;
      rec(i + 1, std::max(maxv, v));
    }
  };
  if (n == 0) return {{}};
  a[0] = 0;
  rec(1, 0);
  return out;
}

// Best matching over all injective cluster-to-class maps, by enumeration.
inline double brute_accuracy(const std::vector<int>& a, const std::vector<int>& y) {
  const int m = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(y.begin(), y.end())) + 1;
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += perm[static_cast<std::size_t>(a[i])] == y[i];
    best = std::max(best, hit);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(a.size());
}

// Adjusted Rand index from explicit pair counts.
inline double brute_ars(const std::vector<int>& a, const std::vector<int>& y) {
  double same_both = 0, same_a = 0, same_y = 0, neither = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sy = y[i] == y[j];
      if (sa && sy) ++same_both;
      else if (sa) ++same_a;
      else if (sy) ++same_y;
      else ++neither;
    }
  const double den = (same_both + same_a) * (same_a + neither) + (same_both + same_y) * (same_y + neither);
  if (den == 0.0) return 1.0;
  return 2.0 * (same_both * neither - same_a * same_y) / den;
}

// Pearson correlation of two 0/1 vectors.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ecgxai::testing
