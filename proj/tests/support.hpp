// Copyright 2026 The DPGM Authors.
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


#ifndef DPGM_TESTS_SUPPORT_HPP
#define DPGM_TESTS_SUPPORT_HPP

// Statistical helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

namespace dpgm::testing {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n = 0;
  double se() const { return std::sqrt(var / static_cast<double>(n)); }
};

template <class T>
Moments moments(std::span<const T> xs) {
  Moments m;
  m.n = xs.size();
  long double s = 0.0L;
  for (auto x : xs) s += static_cast<long double>(x);
  m.mean = static_cast<double>(s / static_cast<long double>(m.n));
  long double q = 0.0L;
  for (auto x : xs) {
    const long double d = static_cast<long double>(x) - m.mean;
    q += d * d;
  }
  m.var = static_cast<double>(q / static_cast<long double>(m.n - 1));
  return m;
}

template <class T>
Moments moments(const std::vector<T>& xs) {
  return moments(std::span<const T>(xs));
}

/// |observed - expected| in units of the standard error.
inline double z_score(const Moments& m, double expected) { return (m.mean - expected) / m.se(); }

/// Two-sample z statistic for a difference of means.
inline double z_two_sample(const Moments& a, const Moments& b) {
  return (a.mean - b.mean) / std::sqrt(a.var / a.n + b.var / b.n);
}

/// Standard error of a mean from batch means (for autocorrelated chains).
inline double batch_means_se(std::span<const double> xs, std::size_t batches = 50) {
  const std::size_t len = xs.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += xs[b * len + i];
    means[b] = s / static_cast<double>(len);
  }
  const auto m = moments(std::span<const double>(means));
  return std::sqrt(m.var / static_cast<double>(batches));
}

/// Pearson goodness of fit of integer samples against a pmf on 0, 1, 2, ...
/// Bins with expected count below `min_expected` are pooled with their
/// neighbours (the upper tail is pooled into one bin). Returns the p-value.
inline double chi_square_gof(const std::vector<std::int64_t>& xs, const std::function<double(std::int64_t)>& pmf,
                             double min_expected = 5.0) {
  std::map<std::int64_t, double> observed;
  for (auto x : xs) observed[x] += 1.0;
  const double n = static_cast<double>(xs.size());
  std::vector<double> obs_bins, exp_bins;
  double acc_obs = 0.0, acc_exp = 0.0, covered = 0.0;
  const std::int64_t top = observed.empty() ? 0 : observed.rbegin()->first;
  for (std::int64_t k = 0; k <= top; ++k) {
    const double p = pmf(k);
    covered += p;
    acc_exp += n * p;
    auto it = observed.find(k);
    acc_obs += it == observed.end() ? 0.0 : it->second;
    if (acc_exp >= min_expected) {
      obs_bins.push_back(acc_obs);
      exp_bins.push_back(acc_exp);
      acc_obs = acc_exp = 0.0;
    }
  }
  acc_exp += n * std::max(0.0, 1.0 - covered);
  if (!exp_bins.empty()) {
    obs_bins.back() += acc_obs;
    exp_bins.back() += acc_exp;
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < obs_bins.size(); ++i) {
    const double d = obs_bins[i] - exp_bins[i];
    stat += d * d / exp_bins[i];
  }
  const double dof = static_cast<double>(obs_bins.size()) - 1.0;
  if (dof < 1.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), stat));
}

/// Chi-square test of homogeneity for two integer samples. Values are binned
/// so that every bin has at least `min_count` pooled observations.
inline double chi_square_two_sample(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b,
                                    double min_count = 10.0) {
  std::map<std::int64_t, std::pair<double, double>> counts;
  for (auto x : a) counts[x].first += 1.0;
  for (auto x : b) counts[x].second += 1.0;
  std::vector<std::pair<double, double>> bins;
  std::pair<double, double> acc{0.0, 0.0};
  for (const auto& [value, c] : counts) {
    acc.first += c.first;
    acc.second += c.second;
    if (acc.first + acc.second >= min_count) {
      bins.push_back(acc);
      acc = {0.0, 0.0};
    }
  }
  if (!bins.empty()) {
    bins.back().first += acc.first;
    bins.back().second += acc.second;
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double stat = 0.0;
  for (const auto& [ca, cb] : bins) {
    const double total = ca + cb;
    const double ea = total * na / (na + nb), eb = total * nb / (na + nb);
    stat += (ca - ea) * (ca - ea) / ea + (cb - eb) * (cb - eb) / eb;
  }
  const double dof = static_cast<double>(bins.size()) - 1.0;
  if (dof < 1.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), stat));
}

/// Total variation distance between two densities tabulated on the same grid
/// (each normalised over the grid first).
inline double total_variation(std::span<const double> p, std::span<const double> q) {
  double sp = 0.0, sq = 0.0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::fabs(p[i] / sp - q[i] / sq);
  return 0.5 * tv;
}

}  // namespace dpgm::testing

#endif  // DPGM_TESTS_SUPPORT_HPP
