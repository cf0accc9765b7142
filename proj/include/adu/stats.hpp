#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "adu/errors.hpp"
#include "adu/rng.hpp"

namespace adu::stats {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw ContractError("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// Paired bootstrap: q-quantile of mean(a[i*] - b[i*]) over resamples.
// The 0.05 quantile being >= 0 backs a one-sided "a beats b" claim at 95%.
inline double bootstrap_mean_diff_quantile(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           double q, int resamples = 2000,
                                           uint64_t seed = 12345) {
  if (a.size() != b.size() || a.empty())
    throw ContractError("bootstrap: paired samples required");
  Rng rng(seed);
  const size_t n = a.size();
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      size_t j = static_cast<size_t>(rng.next_u64() % n);
      acc += a[j] - b[j];
    }
    means[r] = acc / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  double pos = q * static_cast<double>(resamples - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, means.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return means[lo] * (1.0 - frac) + means[hi] * frac;
}

}  // namespace adu::stats
