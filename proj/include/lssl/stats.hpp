// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Summary statistics for alignment reports: Student-t intervals, rank
// correlation and order-fixed summation.

#ifndef LSSL_STATS_HPP_
#define LSSL_STATS_HPP_

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "lssl/linalg.hpp"

namespace lssl {

/// Pairwise summation in a fixed order, so the result only depends on the
/// sequence of values and not on how they were produced.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

/// Same fixed-order tree reduction for matrices.
inline Matrix pairwise_sum(const std::vector<Matrix>& v, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return v[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

inline Matrix pairwise_sum(const std::vector<Matrix>& v) {
  require(!v.empty(), "pairwise_sum: empty input");
  return pairwise_sum(v, 0, v.size());
}

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;

  double half_width() const { return 0.5 * (ci_high - ci_low); }
};

/// Mean with a two-sided Student-t interval (n - 1 degrees of freedom).
/// A single value has an undefined interval (NaN bounds).
inline Summary summarize(const std::vector<double>& xs, double level = 0.95) {
  Summary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  s.mean = pairwise_sum(xs) / n;
  if (xs.size() < 2) return s;
  std::vector<double> sq(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - s.mean) * (xs[i] - s.mean);
  const double sd = std::sqrt(pairwise_sum(sq) / (n - 1.0));
  boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(dist, 0.5 + 0.5 * level);
  const double hw = t * sd / std::sqrt(n);
  s.ci_low = s.mean - hw;
  s.ci_high = s.mean + hw;
  return s;
}

/// True when a lies entirely above b (non-overlapping intervals).
inline bool strictly_above(const Summary& a, const Summary& b) { return a.ci_low > b.ci_high; }

/// a >= b "within CI": a's mean plus both half-widths reaches b's mean.
inline bool at_least_within_ci(const Summary& a, const Summary& b) {
  const double ha = std::isfinite(a.half_width()) ? a.half_width() : 0.0;
  const double hb = std::isfinite(b.half_width()) ? b.half_width() : 0.0;
  return a.mean + ha + hb >= b.mean;
}

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; NaN when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length samples");
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace lssl

#endif  // LSSL_STATS_HPP_
