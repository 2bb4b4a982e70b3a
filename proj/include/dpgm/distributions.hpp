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

#ifndef DPGM_DISTRIBUTIONS_HPP
#define DPGM_DISTRIBUTIONS_HPP

// Samplers for the distributions used by the model and its Gibbs updates.
// All take an explicit RngStream; none keeps hidden state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dpgm/error.hpp"
#include "dpgm/rng.hpp"

namespace dpgm {

using count_t = std::int64_t;

namespace detail {

inline double standard_normal(RngStream& rng) {
  // Marsaglia polar method; the second variate is discarded so that the
  // stream position depends only on the number of calls.
  for (;;) {
    const double u = 2.0 * rng.uniform() - 1.0;
    const double v = 2.0 * rng.uniform() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

// Marsaglia-Tsang for shape >= 1, unit scale. Returns log of the variate.
inline double log_gamma_variate_ge1(double shape, RngStream& rng) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

inline void require(bool ok, const char* what) {
  if (!ok) throw InvalidParameter(what);
}

}  // namespace detail

/// Smallest value sample_gamma returns; draws below it (possible for tiny
/// shapes) are reported as this value instead of 0.
inline constexpr double kGammaFloor = std::numeric_limits<double>::min();

/// log of a Gamma(shape, 1) variate, valid for any shape > 0.
///
/// Shapes below one use Gamma(a) = Gamma(a + 1) * U^(1/a), evaluated in log
/// space so that the boost factor cannot underflow before the caller decides
/// how to floor it.
inline double sample_log_gamma(double shape, RngStream& rng) {
  detail::require(std::isfinite(shape) && shape > 0.0, "gamma shape must be positive and finite");
  if (shape >= 1.0) return detail::log_gamma_variate_ge1(shape, rng);
  const double lg = detail::log_gamma_variate_ge1(shape + 1.0, rng);
  return lg + std::log(rng.uniform()) / shape;
}

/// Gamma(shape, scale) variate (mean shape * scale).
inline double sample_gamma(double shape, double scale, RngStream& rng) {
  detail::require(std::isfinite(scale) && scale > 0.0, "gamma scale must be positive and finite");
  const double x = std::exp(sample_log_gamma(shape, rng)) * scale;
  return std::max(x, kGammaFloor);
}

inline bool sample_bernoulli(double p, RngStream& rng) { return rng.uniform() < p; }

/// Poisson variate. Multiplicative inversion below rate 10, Hormann's
/// transformed rejection (PTRS) above.
inline count_t sample_poisson(double rate, RngStream& rng) {
  detail::require(std::isfinite(rate) && rate >= 0.0, "poisson rate must be finite and >= 0");
  if (rate == 0.0) return 0;
  if (rate < 10.0) {
    const double limit = std::exp(-rate);
    double prod = rng.uniform();
    count_t k = 0;
    while (prod > limit) {
      prod *= rng.uniform();
      ++k;
    }
    return k;
  }
  const double slam = std::sqrt(rate);
  const double loglam = std::log(rate);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<count_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -rate + k * loglam - std::lgamma(k + 1.0))
      return static_cast<count_t>(k);
  }
}

/// Zero-truncated Poisson variate (support 1, 2, ...).
///
/// rate >= 1: Poisson draws with zeros rejected (acceptance >= 1 - 1/e).
/// rate < 1: sequential inversion of the truncated pmf starting at 1, so the
/// expected work stays bounded as rate -> 0.
inline count_t sample_ztp(double rate, RngStream& rng) {
  detail::require(std::isfinite(rate) && rate > 0.0, "zero-truncated poisson rate must be > 0");
  if (rate >= 1.0) {
    for (;;) {
      const count_t x = sample_poisson(rate, rng);
      if (x > 0) return x;
    }
  }
  const double u = rng.uniform();
  double p = rate / std::expm1(rate);  // P(X = 1)
  double cdf = p;
  count_t k = 1;
  while (u > cdf && p > 0.0) {
    ++k;
    p *= rate / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

/// Chinese restaurant table count: sum_{i=1..m} Bernoulli(r / (r + i - 1)).
inline count_t sample_crt(count_t m, double r, RngStream& rng) {
  detail::require(m >= 0, "CRT customer count must be >= 0");
  detail::require(std::isfinite(r) && r > 0.0, "CRT concentration must be > 0");
  if (m == 0) return 0;
  count_t tables = 1;
  for (count_t i = 1; i < m; ++i) {
    if (rng.uniform() * (r + static_cast<double>(i)) < r) ++tables;
  }
  return tables;
}

/// Multinomial draw into `out` given the running cumulative weights `cum`
/// (cum.back() is the total). Each trial is a binary search, so the cost is
/// O(n log |cum|) on top of building `cum`.
inline void sample_multinomial_cumulative(count_t n, std::span<const double> cum,
                                          std::span<count_t> out, RngStream& rng) {
  std::fill(out.begin(), out.end(), count_t{0});
  if (n == 0) return;
  const double top = std::nextafter(cum.back(), 0.0);
  for (count_t i = 0; i < n; ++i) {
    // First bound strictly above u; zero-width categories can never win.
    const double u = std::min(rng.uniform() * cum.back(), top);
    const auto idx = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    ++out[idx];
  }
}

/// Multinomial(n, weights / sum(weights)).
inline std::vector<count_t> sample_multinomial(count_t n, std::span<const double> weights,
                                               RngStream& rng) {
  detail::require(n >= 0, "multinomial trial count must be >= 0");
  std::vector<count_t> out(weights.size(), 0);
  if (n == 0) return out;
  std::vector<double> cum(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    detail::require(std::isfinite(weights[i]) && weights[i] >= 0.0,
                    "multinomial weights must be finite and >= 0");
    acc += weights[i];
    cum[i] = acc;
  }
  detail::require(acc > 0.0, "multinomial weights are all zero");
  sample_multinomial_cumulative(n, cum, out, rng);
  return out;
}

/// One univariate slice-sampling transition (stepping out, then shrinkage)
/// leaving the density exp(log_density) invariant. log_density must be finite
/// at x0.
template <class LogDensity>
double slice_sample(double x0, LogDensity&& log_density, RngStream& rng, double width = 1.0,
                    int max_steps = 64) {
  detail::require(width > 0.0 && std::isfinite(width), "slice width must be positive");
  const double f0 = log_density(x0);
  detail::require(std::isfinite(f0), "slice sampler started outside the support");
  const double level = f0 + std::log(rng.uniform());
  double lo = x0 - width * rng.uniform();
  double hi = lo + width;
  int j = static_cast<int>(std::floor(max_steps * rng.uniform()));
  int k = max_steps - 1 - j;
  while (j-- > 0 && log_density(lo) > level) lo -= width;
  while (k-- > 0 && log_density(hi) > level) hi += width;
  for (;;) {
    const double x = lo + (hi - lo) * rng.uniform();
    if (log_density(x) > level) return x;
    if (x < x0) lo = x; else hi = x;
    if (!(hi > lo)) return x0;
  }
}

// Test oracles for the augmentation identities; not used when fitting.

/// NB(r, p) drawn as Poisson(Gamma(r, p / (1 - p))).
inline count_t oracle_negbin(double r, double p, RngStream& rng) {
  detail::require(std::isfinite(r) && r > 0.0, "negative binomial r must be > 0");
  detail::require(p > 0.0 && p < 1.0, "negative binomial p must lie in (0, 1)");
  return sample_poisson(sample_gamma(r, p / (1.0 - p), rng), rng);
}

/// Logarithmic(p): pmf -p^x / (x log(1 - p)), x >= 1, by sequential inversion.
inline count_t oracle_logarithmic(double p, RngStream& rng) {
  detail::require(p > 0.0 && p < 1.0, "logarithmic p must lie in (0, 1)");
  const double norm = -1.0 / std::log1p(-p);
  const double u = rng.uniform();
  double term = p * norm;
  double cdf = term;
  count_t k = 1;
  while (u > cdf && term > 0.0) {
    term *= p * static_cast<double>(k) / static_cast<double>(k + 1);
    ++k;
    cdf += term;
  }
  return k;
}

}  // namespace dpgm

#endif  // DPGM_DISTRIBUTIONS_HPP
