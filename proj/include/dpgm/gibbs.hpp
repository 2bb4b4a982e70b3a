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

#ifndef DPGM_GIBBS_HPP
#define DPGM_GIBBS_HPP

// Batch Gibbs sampler for the dynamic Poisson-gamma membership model.
//
// One sweep:
//   1. latent counts   x ~ ZTP(sigma) for every observed link, partitioned
//                      over (k, k') cells and aggregated per node and per
//                      unordered group pair;
//   2. rate aggregates theta_kk' (exposure of each unordered lambda entry);
//   3. group block     l ~ CRT, gamma0, r, l_kk, xi, Lambda;
//   4. memberships     per node: backward filtering of (rho, y), then
//                      forward sampling of phi^(0..T);
//   5. hypers          c0, beta.
// Held-out dyads are treated as missing: they never contribute counts and
// their exposure is subtracted from theta and omega.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpgm/distributions.hpp"
#include "dpgm/error.hpp"
#include "dpgm/eval.hpp"
#include "dpgm/model.hpp"
#include "dpgm/network.hpp"
#include "dpgm/parallel.hpp"
#include "dpgm/rng.hpp"

namespace dpgm {

/// Aggregated latent counts produced by one latent-count pass.
struct SuffStats {
  std::size_t N = 0, T = 0, K = 0;
  std::vector<count_t> x_nk;   // [((t - 1) * N + n) * K + k]
  SymMatrix<count_t> x_kk;     // ordered cells (k, k') and (k', k) share a bucket
  count_t total = 0;           // sum of the per-dyad latent counts
  /// sum over links of log(1 - e^-sigma) + sigma; with the theta-weighted
  /// rate this gives the training log-likelihood.
  double link_term = 0.0;

  SuffStats() = default;
  SuffStats(std::size_t n, std::size_t t, std::size_t k) : N(n), T(t), K(k), x_nk(t * n * k, 0), x_kk(k, 0) {}

  count_t& node(std::size_t t, std::size_t n, std::size_t k) noexcept { return x_nk[((t - 1) * N + n) * K + k]; }
  count_t node(std::size_t t, std::size_t n, std::size_t k) const noexcept { return x_nk[((t - 1) * N + n) * K + k]; }
};

/// Counts gamma-shape clamps (shapes that underflowed below kParamFloor).
struct ClampCounter {
  std::size_t events = 0;
};

namespace detail {

inline double gamma_draw(double shape, double rate, RngStream& rng, ClampCounter& clamps, const char* what) {
  if (std::isnan(shape) || !std::isfinite(rate) || !(rate > 0.0) || std::isinf(shape))
    throw NumericalFault(std::string("non-finite gamma conditional for ") + what);
  if (shape < kParamFloor) {
    shape = kParamFloor;
    ++clamps.events;
  }
  return floored(sample_gamma(shape, 1.0 / rate, rng));
}

inline count_t crt_draw(count_t m, double r, RngStream& rng, const char* what) {
  if (!std::isfinite(r)) throw NumericalFault(std::string("non-finite CRT concentration for ") + what);
  return sample_crt(m, std::max(r, kParamFloor), rng);
}

/// Partitions one observed link's latent count over the K x K cells and
/// accumulates into `out`. Returns log(1 - e^-sigma) + sigma for monitoring.
inline double partition_link(const ModelState& s, std::size_t t, node_t n, node_t m, RngStream rng,
                             std::vector<double>& cum, SuffStats& out) {
  const std::size_t K = s.K;
  const auto pn = s.phi_row(t, n);
  const auto pm = s.phi_row(t, m);
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t kp = 0; kp < K; ++kp) {
      acc += s.lambda(k, kp) * pn[k] * pm[kp];
      cum[k * K + kp] = acc;
    }
  }
  const double sigma = acc;
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw NumericalFault("degenerate rate " + std::to_string(sigma) + " for observed link (" + std::to_string(n) +
                         ", " + std::to_string(m) + ") at slice " + std::to_string(t));
  const count_t x = sample_ztp(sigma, rng);
  const double top = std::nextafter(sigma, 0.0);
  for (count_t i = 0; i < x; ++i) {
    const double u = std::min(rng.uniform() * sigma, top);
    const auto cell = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    const std::size_t k = cell / K, kp = cell % K;
    ++out.node(t, n, k);
    ++out.node(t, m, kp);
    ++out.x_kk(k, kp);
  }
  out.total += x;
  return std::log(-std::expm1(-sigma)) + sigma;
}

inline void merge_into(SuffStats& dst, const SuffStats& src) {
  for (std::size_t i = 0; i < dst.x_nk.size(); ++i) dst.x_nk[i] += src.x_nk[i];
  auto d = dst.x_kk.packed();
  auto s = src.x_kk.packed();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  dst.total += src.total;
}

inline constexpr std::size_t kLinkChunk = 512;

}  // namespace detail

/// Samples x ~ ZTP(sigma) for every observed link and partitions it over the
/// (k, k') cells in proportion to lambda_kk' phi_nk phi_mk'.
///
/// Each link draws from `base.split({t, n, m})` and partial sums are kept per
/// fixed-size chunk, so the result is identical for any worker count.
/// When `within` is non-null only links with both endpoints flagged are
/// partitioned.
inline SuffStats sample_latent_counts(const ModelState& s, const TrainView& train, const RngStream& base,
                                      std::size_t workers = 1, const std::vector<char>* within = nullptr) {
  const std::size_t T = train.num_slices();
  std::vector<std::size_t> offsets(T + 1, 0);
  for (std::size_t t = 1; t <= T; ++t) offsets[t] = offsets[t - 1] + train.observed_links(t).size();
  const std::size_t total_links = offsets[T];
  const std::size_t num_chunks = (total_links + detail::kLinkChunk - 1) / detail::kLinkChunk;
  workers = std::max<std::size_t>(1, std::min(workers, num_chunks));

  std::vector<SuffStats> local(workers, SuffStats(s.N, T, s.K));
  std::vector<std::vector<double>> cum(workers, std::vector<double>(s.K * s.K));
  std::vector<double> chunk_terms(num_chunks, 0.0);

  parallel_chunks(num_chunks, workers, [&](std::size_t c, std::size_t w) {
    const std::size_t begin = c * detail::kLinkChunk;
    const std::size_t end = std::min(total_links, begin + detail::kLinkChunk);
    std::size_t t = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), begin) - offsets.begin());
    double term = 0.0;
    for (std::size_t g = begin; g < end; ++g) {
      while (g >= offsets[t]) ++t;
      const Dyad d = train.observed_links(t)[g - offsets[t - 1]];
      if (within && !((*within)[d.n] && (*within)[d.m])) continue;
      term += detail::partition_link(s, t, d.n, d.m, base.split({t, d.n, d.m}), cum[w], local[w]);
    }
    chunk_terms[c] = term;
  });

  SuffStats out = std::move(local[0]);
  for (std::size_t w = 1; w < workers; ++w) detail::merge_into(out, local[w]);
  for (double v : chunk_terms) out.link_term += v;
  return out;
}

/// Exposures of the group-interaction weights and the node-level rates.
struct RateAggregates {
  /// theta_kk' for k != k' is sum over observed dyads of
  /// phi_nk phi_mk' + phi_mk phi_nk'; theta_kk is sum of phi_nk phi_mk.
  SymMatrix<double> theta;
  /// omega[((t - 1) * N + n) * K + k] = sum_{m != n observed} sum_k' lambda_kk' phi_mk'.
  std::vector<double> omega;
  SymMatrix<double> p_tilde;            // theta / (theta + beta)
  SymMatrix<double> neg_log1m_p_tilde;  // -log(1 - p_tilde) = log1p(theta / beta)
};

/// Column sums s[k] = sum_n phi[t][n][k].
inline std::vector<double> slice_sums(const ModelState& s, std::size_t t) {
  std::vector<double> sums(s.K, 0.0);
  for (std::size_t n = 0; n < s.N; ++n) {
    const auto row = s.phi_row(t, n);
    for (std::size_t k = 0; k < s.K; ++k) sums[k] += row[k];
  }
  return sums;
}

/// theta via the sum-product identity, minus held-out dyads.
inline SymMatrix<double> compute_theta(const ModelState& s, const TrainView& train,
                                       const std::vector<char>* within = nullptr) {
  const std::size_t K = s.K;
  SymMatrix<double> theta(K, 0.0);
  SymMatrix<double> slice_theta(K, 0.0);
  const std::uint64_t dyads = dyad_count(s.N);
  for (std::size_t t = 1; t <= s.T; ++t) {
    const auto held = train.mask().slice(t);
    if (held.size() >= dyads) continue;  // nothing observed at this slice
    std::vector<double> sums(K, 0.0);
    SymMatrix<double> self(K, 0.0);
    for (std::size_t n = 0; n < s.N; ++n) {
      if (within && !(*within)[n]) continue;
      const auto row = s.phi_row(t, n);
      for (std::size_t k = 0; k < K; ++k) sums[k] += row[k];
      for (std::size_t k = 0; k < K; ++k) {
        if (row[k] == 0.0) continue;
        for (std::size_t kp = k; kp < K; ++kp) self(k, kp) += row[k] * row[kp];
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      slice_theta(k, k) = 0.5 * (sums[k] * sums[k] - self(k, k));
      for (std::size_t kp = k + 1; kp < K; ++kp) slice_theta(k, kp) = sums[k] * sums[kp] - self(k, kp);
    }
    for (const auto& h : held) {
      if (within && !((*within)[h.n] && (*within)[h.m])) continue;
      const auto pn = s.phi_row(t, h.n);
      const auto pm = s.phi_row(t, h.m);
      for (std::size_t k = 0; k < K; ++k) {
        slice_theta(k, k) -= pn[k] * pm[k];
        for (std::size_t kp = k + 1; kp < K; ++kp) slice_theta(k, kp) -= pn[k] * pm[kp] + pm[k] * pn[kp];
      }
    }
    auto dst = theta.packed();
    auto src = slice_theta.packed();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += std::max(0.0, src[i]);
  }
  return theta;
}

/// omega for node n at slice t given the slice sums, written to `out` (size K).
inline void node_omega(const ModelState& s, const TrainView& train, std::size_t t, node_t n,
                       std::span<const double> sums, std::span<double> out) {
  const std::size_t K = s.K;
  thread_local std::vector<double> others;
  others.assign(sums.begin(), sums.end());
  const auto own = s.phi_row(t, n);
  for (std::size_t k = 0; k < K; ++k) others[k] -= own[k];
  for (node_t m : train.held_partners(t, n)) {
    const auto pm = s.phi_row(t, m);
    for (std::size_t k = 0; k < K; ++k) others[k] -= pm[k];
  }
  for (std::size_t k = 0; k < K; ++k) {
    double acc = 0.0;
    for (std::size_t kp = 0; kp < K; ++kp) acc += s.lambda(k, kp) * std::max(0.0, others[kp]);
    out[k] = acc;
  }
}

inline RateAggregates compute_theta_and_omega(const ModelState& s, const TrainView& train) {
  RateAggregates a;
  a.theta = compute_theta(s, train);
  a.p_tilde = SymMatrix<double>(s.K, 0.0);
  a.neg_log1m_p_tilde = SymMatrix<double>(s.K, 0.0);
  for (std::size_t k = 0; k < s.K; ++k)
    for (std::size_t kp = k; kp < s.K; ++kp) {
      const double th = a.theta(k, kp);
      a.p_tilde(k, kp) = th / (th + s.beta);
      a.neg_log1m_p_tilde(k, kp) = std::log1p(th / s.beta);
    }
  a.omega.assign(s.T * s.N * s.K, 0.0);
  for (std::size_t t = 1; t <= s.T; ++t) {
    const auto sums = slice_sums(s, t);
    for (std::size_t n = 0; n < s.N; ++n)
      node_omega(s, train, t, static_cast<node_t>(n), sums,
                 std::span<double>(a.omega.data() + ((t - 1) * s.N + n) * s.K, s.K));
  }
  return a;
}

/// Auxiliary counts of the group block, exposed for inspection and tests.
struct GroupAux {
  SymMatrix<count_t> l;           // l_kk' ~ CRT(x_kk', shape_kk')
  std::vector<count_t> l_tilde;   // l~_k ~ CRT(l_k., gamma0 / K)
  std::vector<double> p_hat;
};

/// -log(1 - p_hat_k) and p_hat_k for every group given the current r, xi.
///
/// S_k = sum_k' xi^delta r_k'^(1-delta) (-log(1 - p~_kk')) is the Poisson
/// exposure of l_k. per unit r_k; p_hat_k = S_k / (c0 + S_k).
inline void group_exposures(const ModelState& s, const SymMatrix<double>& neg_log1m_p_tilde,
                            std::vector<double>& exposure) {
  exposure.assign(s.K, 0.0);
  for (std::size_t k = 0; k < s.K; ++k) {
    double acc = 0.0;
    for (std::size_t kp = 0; kp < s.K; ++kp) acc += (kp == k ? s.xi : s.r[kp]) * neg_log1m_p_tilde(k, kp);
    exposure[k] = acc;
  }
}

/// Draws gamma0 with r marginalized:
/// l~_k ~ CRT(l_k., gamma0/K), gamma0 ~ Gam(e0 + sum l~, 1/(f0 + (1/K) sum log1p(S_k / c0))).
inline double sample_gamma0(const SymMatrix<count_t>& l, const ModelState& s,
                            const SymMatrix<double>& neg_log1m_p_tilde, const HyperParams& hp, RngStream& rng,
                            ClampCounter& clamps, GroupAux* aux = nullptr) {
  const std::size_t K = s.K;
  std::vector<double> exposure;
  group_exposures(s, neg_log1m_p_tilde, exposure);
  const double conc = s.gamma0 / static_cast<double>(K);
  count_t tables = 0;
  double rate_sum = 0.0;
  if (aux) {
    aux->l_tilde.assign(K, 0);
    aux->p_hat.assign(K, 0.0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    count_t lk = 0;
    for (std::size_t kp = 0; kp < K; ++kp) lk += l(k, kp);
    const double p_hat = exposure[k] / (s.c0 + exposure[k]);
    if (!(p_hat >= 0.0 && p_hat < 1.0)) throw NumericalFault("p_hat out of [0, 1) for group " + std::to_string(k));
    const count_t lt = detail::crt_draw(lk, conc, rng, "l_tilde");
    tables += lt;
    rate_sum += std::log1p(exposure[k] / s.c0);
    if (aux) {
      aux->l_tilde[k] = lt;
      aux->p_hat[k] = p_hat;
    }
  }
  return detail::gamma_draw(hp.e0 + static_cast<double>(tables), hp.f0 + rate_sum / static_cast<double>(K), rng,
                            clamps, "gamma0");
}

/// Draws gamma0 from its full conditional given r and c0,
///   p(gamma0 | r, c0) ~ Gam(gamma0; e0, 1/f0) prod_k Gam(r_k; gamma0/K, 1/c0),
/// by slice sampling on log gamma0 (the target is log-concave).
inline double sample_gamma0_given_r(const ModelState& s, const HyperParams& hp, RngStream& rng) {
  const double K = static_cast<double>(s.K);
  double sum_log_r = 0.0;
  for (double v : s.r) sum_log_r += std::log(std::max(v, kParamFloor));
  const double log_c0 = std::log(s.c0);
  auto log_density = [&](double u) {
    const double g = std::exp(u);
    if (!(g > 0.0) || !std::isfinite(g)) return -std::numeric_limits<double>::infinity();
    const double a = g / K;
    return hp.e0 * u - hp.f0 * g + g * log_c0 + a * sum_log_r - K * std::lgamma(a);
  };
  const double u = slice_sample(std::log(std::max(s.gamma0, kParamFloor)), log_density, rng);
  return std::max(std::exp(u), kGammaFloor);
}

enum class Gamma0Update {
  exact,  // full conditional given r
  crt,    // l~ ~ CRT(l_k., gamma0/K) with each r_k integrated out; exact only for K = 1
};

/// l_kk' ~ CRT(x_kk', shape_kk') for every unordered pair.
inline SymMatrix<count_t> sample_group_tables(const SuffStats& stats, const ModelState& s, RngStream& rng) {
  SymMatrix<count_t> l(s.K, 0);
  for (std::size_t k = 0; k < s.K; ++k)
    for (std::size_t kp = k; kp < s.K; ++kp) l(k, kp) = detail::crt_draw(stats.x_kk(k, kp), s.lambda_shape(k, kp), rng, "l");
  return l;
}

/// r_k ~ Gam(gamma0/K + l_k., 1/(c0 + sum_k' xi^delta r_k'^(1-delta) L_kk')), in order of k.
inline void sample_r(const SymMatrix<count_t>& l, const SymMatrix<double>& neg_log1m_p_tilde, ModelState& s,
                     RngStream& rng, ClampCounter& clamps) {
  const std::size_t K = s.K;
  for (std::size_t k = 0; k < K; ++k) {
    double shape = s.gamma0 / static_cast<double>(K);
    double rate = s.c0;
    for (std::size_t kp = 0; kp < K; ++kp) {
      shape += static_cast<double>(l(k, kp));
      rate += (kp == k ? s.xi : s.r[kp]) * neg_log1m_p_tilde(k, kp);
    }
    s.r[k] = detail::gamma_draw(shape, rate, rng, clamps, "r");
  }
}

/// Redraws the diagonal tables with the new r, then xi from its conditional.
inline void sample_xi(const SuffStats& stats, const SymMatrix<double>& neg_log1m_p_tilde, ModelState& s,
                      const HyperParams& hp, RngStream& rng, ClampCounter& clamps, SymMatrix<count_t>& l) {
  double shape = hp.a0, rate = hp.b0;
  for (std::size_t k = 0; k < s.K; ++k) {
    l(k, k) = detail::crt_draw(stats.x_kk(k, k), s.xi * s.r[k], rng, "l_kk");
    shape += static_cast<double>(l(k, k));
    rate += s.r[k] * neg_log1m_p_tilde(k, k);
  }
  s.xi = detail::gamma_draw(shape, rate, rng, clamps, "xi");
}

/// lambda_kk' ~ Gam(x_kk' + shape_kk', 1/(beta + theta_kk')), once per unordered pair.
inline void sample_lambda(const SuffStats& stats, const SymMatrix<double>& theta, ModelState& s, RngStream& rng,
                          ClampCounter& clamps) {
  for (std::size_t k = 0; k < s.K; ++k)
    for (std::size_t kp = k; kp < s.K; ++kp) {
      const double shape = static_cast<double>(stats.x_kk(k, kp)) + s.lambda_shape(k, kp);
      const double rate = s.beta + theta(k, kp);
      if (!std::isfinite(shape) || !std::isfinite(rate))
        throw NumericalFault("non-finite lambda conditional at (" + std::to_string(k) + ", " + std::to_string(kp) + ")");
      s.lambda(k, kp) = detail::gamma_draw(shape, rate, rng, clamps, "lambda");
    }
}

/// Group block: l -> gamma0 -> r -> l_kk -> xi -> Lambda, all with the theta
/// of the current memberships.
inline void sample_group_block(const SuffStats& stats, const RateAggregates& agg, ModelState& s,
                               const HyperParams& hp, RngStream& rng, ClampCounter& clamps,
                               GroupAux* aux = nullptr, Gamma0Update g0_update = Gamma0Update::exact) {
  const auto& L = agg.neg_log1m_p_tilde;
  SymMatrix<count_t> l = sample_group_tables(stats, s, rng);
  if (g0_update == Gamma0Update::crt)
    s.gamma0 = sample_gamma0(l, s, L, hp, rng, clamps, aux);
  else
    s.gamma0 = sample_gamma0_given_r(s, hp, rng);
  sample_r(l, L, s, rng, clamps);
  sample_xi(stats, L, s, hp, rng, clamps, l);
  sample_lambda(stats, agg.theta, s, rng, clamps);
  if (aux) aux->l = std::move(l);
}

/// c0 and beta by gamma-gamma conjugacy. Sums run over the unordered (k <= k')
/// entries, matching one lambda draw per unordered pair.
inline void sample_hypers(ModelState& s, const HyperParams& hp, RngStream& rng, ClampCounter& clamps) {
  double sum_r = 0.0;
  for (double v : s.r) sum_r += v;
  s.c0 = detail::gamma_draw(hp.a0 + s.gamma0, hp.b0 + sum_r, rng, clamps, "c0");
  double shape = hp.a0, rate = hp.b0;
  for (std::size_t k = 0; k < s.K; ++k)
    for (std::size_t kp = k; kp < s.K; ++kp) {
      shape += s.lambda_shape(k, kp);
      rate += s.lambda(k, kp);
    }
  s.beta = detail::gamma_draw(shape, rate, rng, clamps, "beta");
}

/// Backward-filtering state: y[t] for t = 1..T (y at T+1 is 0) and
/// L[t] = -log(1 - rho[t]), carried in log space.
struct ChainAux {
  std::size_t N = 0, T = 0, K = 0;
  std::vector<count_t> y;             // [((t - 1) * N + n) * K + k]
  std::vector<double> neg_log1m_rho;  // same layout

  double rho(std::size_t t, std::size_t n, std::size_t k) const {
    return -std::expm1(-neg_log1m_rho[((t - 1) * N + n) * K + k]);
  }
  count_t y_at(std::size_t t, std::size_t n, std::size_t k) const { return y[((t - 1) * N + n) * K + k]; }
};

namespace detail {

// Per-node kernels. omega/x/y/L are T x K row-major blocks for one node
// (row t - 1 holds slice t).

inline void filter_node(const ModelState& s, const HyperParams& hp, std::size_t n,
                        std::span<const double> omega, std::span<const count_t> x, std::span<count_t> y,
                        std::span<double> neg_log1m_rho, RngStream& rng) {
  const std::size_t K = s.K, T = s.T;
  const double tau = hp.tau;
  for (std::size_t k = 0; k < K; ++k) {
    double next_L = 0.0;   // L at t + 1
    count_t next_y = 0;    // y at t + 1
    for (std::size_t t = T; t >= 1; --t) {
      const std::size_t i = (t - 1) * K + k;
      const double c = omega[i] + next_L / tau;
      const double L = std::log1p(c / tau);
      if (!std::isfinite(L) || L < 0.0) throw NumericalFault("rho out of [0, 1) in backward pass");
      neg_log1m_rho[i] = L;
      y[i] = crt_draw(x[i] + next_y, s.phi_at(t - 1, n, k) / tau, rng, "y");
      next_L = L;
      next_y = y[i];
    }
  }
}

inline void sample_node(ModelState& s, const HyperParams& hp, std::size_t n, std::span<const double> omega,
                        std::span<const count_t> x, std::span<const count_t> y,
                        std::span<const double> neg_log1m_rho, bool chained, RngStream& rng, ClampCounter& clamps) {
  const std::size_t K = s.K, T = s.T;
  const double tau = hp.tau;
  for (std::size_t k = 0; k < K; ++k) {
    if (!chained) {
      s.phi_at(0, n, k) = gamma_draw(hp.g0, hp.h0, rng, clamps, "phi0");
      for (std::size_t t = 1; t <= T; ++t) {
        const std::size_t i = (t - 1) * K + k;
        s.phi_at(t, n, k) = gamma_draw(hp.g0 + static_cast<double>(x[i]), hp.h0 + omega[i], rng, clamps, "phi");
      }
      continue;
    }
    s.phi_at(0, n, k) =
        gamma_draw(hp.g0 + static_cast<double>(y[k]), hp.h0 + neg_log1m_rho[k] / tau, rng, clamps, "phi0");
    for (std::size_t t = 1; t <= T; ++t) {
      const std::size_t i = (t - 1) * K + k;
      const bool last = t == T;
      const double y_next = last ? 0.0 : static_cast<double>(y[i + K]);
      const double L_next = last ? 0.0 : neg_log1m_rho[i + K];
      const double shape = s.phi_at(t - 1, n, k) / tau + y_next + static_cast<double>(x[i]);
      const double rate = tau + omega[i] + L_next / tau;
      s.phi_at(t, n, k) = gamma_draw(shape, rate, rng, clamps, "phi");
    }
  }
}

template <typename T>
inline std::vector<T> gather_node(std::span<const T> full, std::size_t N, std::size_t T_, std::size_t K,
                                  std::size_t n) {
  std::vector<T> out(T_ * K);
  for (std::size_t t = 1; t <= T_; ++t)
    std::copy_n(full.begin() + static_cast<std::ptrdiff_t>(((t - 1) * N + n) * K), K,
                out.begin() + static_cast<std::ptrdiff_t>((t - 1) * K));
  return out;
}

}  // namespace detail

/// Backward filtering for every node with a fixed omega: rho from t = T down
/// to 1 and y[t] ~ CRT(x[t] + y[t+1], phi[t-1] / tau). Node n draws from
/// base.split({n}).
inline ChainAux backward_pass(const SuffStats& stats, std::span<const double> omega, const HyperParams& hp,
                              const ModelState& s, const RngStream& base) {
  ChainAux aux{s.N, s.T, s.K, std::vector<count_t>(s.T * s.N * s.K, 0),
               std::vector<double>(s.T * s.N * s.K, 0.0)};
  const std::span<const count_t> xs(stats.x_nk);
  for (std::size_t n = 0; n < s.N; ++n) {
    const auto om = detail::gather_node(omega, s.N, s.T, s.K, n);
    const auto x = detail::gather_node(xs, s.N, s.T, s.K, n);
    std::vector<count_t> y(s.T * s.K);
    std::vector<double> L(s.T * s.K);
    RngStream node_rng = base.split({n});
    detail::filter_node(s, hp, n, om, x, y, L, node_rng);
    for (std::size_t t = 1; t <= s.T; ++t)
      for (std::size_t k = 0; k < s.K; ++k) {
        aux.y[((t - 1) * s.N + n) * s.K + k] = y[(t - 1) * s.K + k];
        aux.neg_log1m_rho[((t - 1) * s.N + n) * s.K + k] = L[(t - 1) * s.K + k];
      }
  }
  return aux;
}

/// Forward sampling of phi^(0..T) for every node given a completed backward
/// pass; node n draws from base.split({n}). Returns the number of clamped
/// gamma shapes.
inline std::size_t forward_sample_phi(const SuffStats& stats, std::span<const double> omega, const ChainAux& aux,
                                      const HyperParams& hp, ModelState& s, const RngStream& base) {
  ClampCounter clamps;
  const std::span<const count_t> xs(stats.x_nk);
  for (std::size_t n = 0; n < s.N; ++n) {
    const auto om = detail::gather_node(omega, s.N, s.T, s.K, n);
    const auto x = detail::gather_node(xs, s.N, s.T, s.K, n);
    const auto y = detail::gather_node(std::span<const count_t>(aux.y), s.N, s.T, s.K, n);
    const auto L = detail::gather_node(std::span<const double>(aux.neg_log1m_rho), s.N, s.T, s.K, n);
    RngStream node_rng = base.split({n});
    detail::sample_node(s, hp, n, om, x, y, L, true, node_rng, clamps);
  }
  return clamps.events;
}

/// |{k : r_k lambda_kk > eps * max_k r_k lambda_kk}|.
inline std::size_t effective_group_count(const ModelState& s, double eps = 1e-2) {
  double best = 0.0;
  for (std::size_t k = 0; k < s.K; ++k) best = std::max(best, s.r[k] * s.lambda(k, k));
  if (best <= 0.0) return 0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < s.K; ++k) count += s.r[k] * s.lambda(k, k) > eps * best;
  return count;
}

struct GibbsConfig {
  std::size_t burn_in = 2000;
  std::size_t collect = 1000;
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool record_heldout = true;
  bool record_trace = true;
  /// Replaces the gamma chain by independent Gam(g0, 1/h0) priors per slice
  /// (ablation baseline).
  bool independent_slices = false;
  double effective_eps = 1e-2;
  Gamma0Update gamma0_update = Gamma0Update::exact;

  void validate() const {
    if (collect < 1) throw InvalidParameter("collect must be >= 1");
    if (thin < 1) throw InvalidParameter("thin must be >= 1");
    if (workers < 1) throw InvalidParameter("workers must be >= 1");
  }
};

struct SweepRecord {
  std::size_t sweep = 0;
  double gamma0 = 0.0, xi = 0.0, beta = 0.0, c0 = 0.0, sum_r = 0.0;
  std::size_t effective_k = 0;
  double train_loglik = 0.0;
  count_t latent_total = 0;
  std::size_t clamp_events = 0;
};

/// Cumulative wall-clock seconds per sweep phase.
struct PhaseTimes {
  double latent = 0.0, theta = 0.0, group = 0.0, memberships = 0.0, hypers = 0.0, collect = 0.0;
  double total() const { return latent + theta + group + memberships + hypers + collect; }
};

/// Fitting initialization: scalar hyper-draws at their prior means,
/// r_k = gamma0 / K, Lambda from its prior given those, and every membership
/// phi^(t)_nk ~ Gam(100, 1/100), close to 1 with no group favoured.
inline constexpr double kInitPhiShape = 100.0;

inline ModelState init_for_fit(const HyperParams& hp, std::size_t N, std::size_t T, RngStream& rng) {
  hp.validate();
  if (N < 2 || T < 1) throw InvalidParameter("need N >= 2 and T >= 1");
  ModelState s(N, T, hp.K);
  s.gamma0 = hp.e0 / hp.f0;
  s.c0 = s.xi = s.beta = hp.a0 / hp.b0;
  std::fill(s.r.begin(), s.r.end(), s.gamma0 / static_cast<double>(hp.K));
  for (std::size_t k = 0; k < hp.K; ++k)
    for (std::size_t kp = k; kp < hp.K; ++kp)
      s.lambda(k, kp) = draw_param(s.lambda_shape(k, kp), 1.0 / s.beta, rng);
  for (double& v : s.phi) v = draw_param(kInitPhiShape, 1.0 / kInitPhiShape, rng);
  return s;
}

/// Stateful batch sampler; one call to sweep() is one pass of the algorithm.
class GibbsSampler {
 public:
  GibbsSampler(const TrainView& train, HyperParams hp, GibbsConfig cfg, ModelState init)
      : train_(&train), hp_(hp), cfg_(cfg), state_(std::move(init)), base_(cfg.seed, 0) {
    hp_.validate();
    cfg_.validate();
    if (state_.N != train.num_nodes() || state_.T != train.num_slices() || state_.K != hp_.K)
      throw InvalidParameter("initial state shape does not match data and K");
  }

  void set_train(const TrainView& train) {
    if (train.num_nodes() != state_.N || train.num_slices() != state_.T)
      throw InvalidParameter("train view shape changed");
    train_ = &train;
  }

  const ModelState& state() const noexcept { return state_; }
  ModelState& state() noexcept { return state_; }
  const HyperParams& hyper() const noexcept { return hp_; }
  const GibbsConfig& config() const noexcept { return cfg_; }
  const SweepRecord& last() const noexcept { return last_; }
  const PhaseTimes& times() const noexcept { return times_; }
  std::size_t clamp_events() const noexcept { return clamps_.events; }
  std::size_t sweeps_done() const noexcept { return sweep_; }

  void sweep() {
    using clock = std::chrono::steady_clock;
    const RngStream sweep_rng = base_.split({sweep_});
    auto mark = clock::now();
    auto lap = [&](double& slot) {
      const auto now = clock::now();
      slot += std::chrono::duration<double>(now - mark).count();
      mark = now;
    };

    SuffStats stats = sample_latent_counts(state_, *train_, sweep_rng.split({1}), cfg_.workers);
    lap(times_.latent);

    RateAggregates agg;
    agg.theta = compute_theta(state_, *train_);
    agg.neg_log1m_p_tilde = SymMatrix<double>(state_.K, 0.0);
    double exposure = 0.0;
    for (std::size_t k = 0; k < state_.K; ++k)
      for (std::size_t kp = k; kp < state_.K; ++kp) {
        agg.neg_log1m_p_tilde(k, kp) = std::log1p(agg.theta(k, kp) / state_.beta);
        exposure += state_.lambda(k, kp) * agg.theta(k, kp);
      }
    lap(times_.theta);

    RngStream group_rng = sweep_rng.split({2});
    sample_group_block(stats, agg, state_, hp_, group_rng, clamps_, nullptr, cfg_.gamma0_update);
    lap(times_.group);

    update_memberships(stats, sweep_rng.split({3}));
    lap(times_.memberships);

    RngStream hyper_rng = sweep_rng.split({4});
    sample_hypers(state_, hp_, hyper_rng, clamps_);
    lap(times_.hypers);

    last_.sweep = sweep_;
    last_.gamma0 = state_.gamma0;
    last_.xi = state_.xi;
    last_.beta = state_.beta;
    last_.c0 = state_.c0;
    last_.sum_r = 0.0;
    for (double v : state_.r) last_.sum_r += v;
    last_.effective_k = effective_group_count(state_, cfg_.effective_eps);
    last_.train_loglik = stats.link_term - exposure;
    last_.latent_total = stats.total;
    last_.clamp_events = clamps_.events;
    ++sweep_;
  }

  /// Gauss-Seidel over nodes: each node's chain is filtered and resampled
  /// against omega computed from the current memberships of all other nodes.
  void update_memberships(const SuffStats& stats, const RngStream& rng) {
    update_memberships_for(stats, rng, nullptr);
  }

  /// Hook applied to a node's omega (T x K, row t - 1 for slice t) before
  /// its chain is resampled.
  using OmegaHook = std::function<void(node_t, std::span<double>)>;

  /// As above, restricted to `nodes` when non-null. With `partner_filter`
  /// only flagged nodes count as partners.
  void update_memberships_for(const SuffStats& stats, const RngStream& rng, const std::vector<node_t>* nodes,
                              const std::vector<char>* partner_filter = nullptr,
                              const OmegaHook& omega_hook = nullptr) {
    const std::size_t N = state_.N, T = state_.T, K = state_.K;
    std::vector<std::vector<double>> sums(T + 1);
    for (std::size_t t = 1; t <= T; ++t) sums[t] = filtered_sums(t, partner_filter);
    std::vector<double> omega(T * K), L(T * K);
    std::vector<count_t> x(T * K), y(T * K, 0);
    std::vector<double> old_rows(T * K);
    const std::size_t count = nodes ? nodes->size() : N;
    for (std::size_t i = 0; i < count; ++i) {
      const node_t n = nodes ? (*nodes)[i] : static_cast<node_t>(i);
      for (std::size_t t = 1; t <= T; ++t) {
        const std::span<double> out(omega.data() + (t - 1) * K, K);
        if (partner_filter)
          filtered_omega(t, n, sums[t], *partner_filter, out);
        else
          node_omega(state_, *train_, t, n, sums[t], out);
        for (std::size_t k = 0; k < K; ++k) x[(t - 1) * K + k] = stats.node(t, n, k);
      }
      if (omega_hook) omega_hook(n, omega);
      for (std::size_t t = 1; t <= T; ++t) {
        const auto row = state_.phi_row(t, n);
        std::copy(row.begin(), row.end(), old_rows.begin() + static_cast<std::ptrdiff_t>((t - 1) * K));
      }
      RngStream node_rng = rng.split({n});
      const bool chained = !cfg_.independent_slices;
      if (chained) detail::filter_node(state_, hp_, n, omega, x, y, L, node_rng);
      detail::sample_node(state_, hp_, n, omega, x, y, L, chained, node_rng, clamps_);
      if (partner_filter && !(*partner_filter)[n]) continue;
      for (std::size_t t = 1; t <= T; ++t) {
        const auto row = state_.phi_row(t, n);
        for (std::size_t k = 0; k < K; ++k) sums[t][k] += row[k] - old_rows[(t - 1) * K + k];
      }
    }
  }

 private:
  std::vector<double> filtered_sums(std::size_t t, const std::vector<char>* filter) const {
    std::vector<double> sums(state_.K, 0.0);
    for (std::size_t n = 0; n < state_.N; ++n) {
      if (filter && !(*filter)[n]) continue;
      const auto row = state_.phi_row(t, n);
      for (std::size_t k = 0; k < state_.K; ++k) sums[k] += row[k];
    }
    return sums;
  }

  void filtered_omega(std::size_t t, node_t n, std::span<const double> sums, const std::vector<char>& filter,
                      std::span<double> out) const {
    const std::size_t K = state_.K;
    std::vector<double> others(sums.begin(), sums.end());
    if (filter[n]) {
      const auto own = state_.phi_row(t, n);
      for (std::size_t k = 0; k < K; ++k) others[k] -= own[k];
    }
    for (node_t m : train_->held_partners(t, n)) {
      if (!filter[m]) continue;
      const auto pm = state_.phi_row(t, m);
      for (std::size_t k = 0; k < K; ++k) others[k] -= pm[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t kp = 0; kp < K; ++kp) acc += state_.lambda(k, kp) * std::max(0.0, others[kp]);
      out[k] = acc;
    }
  }

  const TrainView* train_;
  HyperParams hp_;
  GibbsConfig cfg_;
  ModelState state_;
  RngStream base_;
  std::size_t sweep_ = 0;
  SweepRecord last_;
  PhaseTimes times_;
  ClampCounter clamps_;
};

/// Running posterior means collected after burn-in.
struct PosteriorSummary {
  std::vector<ScoredDyad> heldout;          // mask order; score = mean link probability
  AssociationMatrix association;            // mean of phi * lambda_kk
  double gamma0_mean = 0.0;
  double effective_k_mean = 0.0;
  double train_loglik_mean = 0.0;
  std::size_t samples = 0;
  std::size_t sweeps = 0;
  std::size_t clamp_events = 0;
  PhaseTimes times;
  std::vector<SweepRecord> trace;
  ModelState final_state;
};

/// Accumulates running means over collected states.
class PosteriorCollector {
 public:
  PosteriorCollector(const HoldoutMask& mask, std::size_t N, std::size_t T, std::size_t K, bool record_heldout)
      : record_heldout_(record_heldout) {
    if (record_heldout_)
      for (std::size_t t = 1; t <= mask.held.size(); ++t)
        for (const auto& h : mask.slice(t)) out_.heldout.push_back({t, h.n, h.m, h.label, 0.0});
    out_.association = AssociationMatrix{T, N, K, std::vector<double>(T * N * K, 0.0)};
  }

  void add(const ModelState& s, const SweepRecord& rec) {
    ++out_.samples;
    const double inv = 1.0 / static_cast<double>(out_.samples);
    auto blend = [inv](double& mean, double v) { mean += (v - mean) * inv; };
    for (auto& row : out_.heldout) blend(row.score, link_probability(pair_rate(s, row.t, row.n, row.m)));
    for (std::size_t t = 1; t <= s.T; ++t)
      for (std::size_t n = 0; n < s.N; ++n)
        for (std::size_t k = 0; k < s.K; ++k)
          blend(out_.association.w[((t - 1) * s.N + n) * s.K + k], s.phi_at(t, n, k) * s.lambda(k, k));
    blend(out_.gamma0_mean, rec.gamma0);
    blend(out_.effective_k_mean, static_cast<double>(rec.effective_k));
    blend(out_.train_loglik_mean, rec.train_loglik);
  }

  PosteriorSummary& summary() noexcept { return out_; }

 private:
  bool record_heldout_;
  PosteriorSummary out_;
};

/// Runs burn_in + collect * thin sweeps and averages every thin-th state
/// after burn-in. `init` defaults to init_for_fit with the config seed.
inline PosteriorSummary run_chain(const TrainView& train, const HyperParams& hp, const GibbsConfig& cfg,
                                  std::optional<ModelState> init = std::nullopt) {
  cfg.validate();
  if (!init) {
    RngStream init_rng(cfg.seed, 1);
    init = init_for_fit(hp, train.num_nodes(), train.num_slices(), init_rng);
  }
  GibbsSampler sampler(train, hp, cfg, std::move(*init));
  PosteriorCollector collector(train.mask(), train.num_nodes(), train.num_slices(), hp.K, cfg.record_heldout);
  auto& summary = collector.summary();
  const std::size_t total = cfg.burn_in + cfg.collect * cfg.thin;
  double collect_time = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    try {
      sampler.sweep();
    } catch (const NumericalFault& e) {
      throw NumericalFault("sweep " + std::to_string(i) + ": " + e.what());
    }
    if (cfg.record_trace) summary.trace.push_back(sampler.last());
    if (i >= cfg.burn_in && (i - cfg.burn_in + 1) % cfg.thin == 0) {
      const auto start = std::chrono::steady_clock::now();
      collector.add(sampler.state(), sampler.last());
      collect_time += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  }
  summary.sweeps = total;
  summary.times = sampler.times();
  summary.times.collect = collect_time;
  summary.clamp_events = sampler.clamp_events();
  summary.final_state = sampler.state();
  return std::move(summary);
}

}  // namespace dpgm

#endif  // DPGM_GIBBS_HPP
