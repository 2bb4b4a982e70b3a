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

#ifndef DPGM_MODEL_HPP
#define DPGM_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpgm/distributions.hpp"
#include "dpgm/error.hpp"
#include "dpgm/network.hpp"
#include "dpgm/rng.hpp"

namespace dpgm {

/// Lower bound applied to every phi, r and lambda draw. Shrinkage pushes
/// these towards zero and an exact zero would freeze the chain.
inline constexpr double kParamFloor = 1e-300;

struct HyperParams {
  std::size_t K = 1;   // truncation level
  double tau = 1.0;    // gamma-chain concentration
  double g0 = 0.1;     // phi^(0) ~ Gam(g0, 1/h0)
  double h0 = 0.1;
  double a0 = 0.1;     // c0, xi, beta ~ Gam(a0, 1/b0)
  double b0 = 0.1;
  double e0 = 1.0;     // gamma0 ~ Gam(e0, 1/f0)
  double f0 = 1.0;

  /// K = N/2 (at least 1), the default truncation used for initialization.
  static std::size_t default_truncation(std::size_t num_nodes) noexcept {
    return std::max<std::size_t>(1, num_nodes / 2);
  }

  void validate() const {
    if (K < 1) throw InvalidParameter("K must be >= 1");
    for (double v : {tau, g0, h0, a0, b0, e0, f0})
      if (!(std::isfinite(v) && v > 0.0)) throw InvalidParameter("hyperparameters must be positive and finite");
  }
};

/// Symmetric K x K matrix stored as its upper triangle (diagonal included).
template <typename T>
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t k, T value = T{}) : k_(k), data_(k * (k + 1) / 2, value) {}

  std::size_t dim() const noexcept { return k_; }

  static std::size_t packed_index(std::size_t k, std::size_t i, std::size_t j) noexcept {
    if (i > j) std::swap(i, j);
    return i * k - i * (i + 1) / 2 + j;
  }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[packed_index(k_, i, j)]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[packed_index(k_, i, j)]; }

  std::span<T> packed() noexcept { return data_; }
  std::span<const T> packed() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<T> data_;
};

/// All latent variables of the model.
///
/// phi has T + 1 slices; slice 0 is the chain root and is never scored
/// against data. Lambda is symmetric with one value per unordered (k, k').
struct ModelState {
  std::size_t N = 0, T = 0, K = 0;
  std::vector<double> phi;    // [(t * N + n) * K + k], t = 0..T
  SymMatrix<double> lambda;
  std::vector<double> r;
  double xi = 1.0;
  double gamma0 = 1.0;
  double beta = 1.0;
  double c0 = 1.0;

  ModelState() = default;
  ModelState(std::size_t num_nodes, std::size_t num_slices, std::size_t k)
      : N(num_nodes), T(num_slices), K(k), phi((num_slices + 1) * num_nodes * k, 0.0),
        lambda(k, 0.0), r(k, 0.0) {}

  double& phi_at(std::size_t t, std::size_t n, std::size_t k) noexcept { return phi[(t * N + n) * K + k]; }
  double phi_at(std::size_t t, std::size_t n, std::size_t k) const noexcept { return phi[(t * N + n) * K + k]; }

  std::span<double> phi_row(std::size_t t, std::size_t n) noexcept { return {phi.data() + (t * N + n) * K, K}; }
  std::span<const double> phi_row(std::size_t t, std::size_t n) const noexcept {
    return {phi.data() + (t * N + n) * K, K};
  }

  /// Gamma shape of lambda_kk': xi * r_k on the diagonal, r_k * r_k' off it.
  double lambda_shape(std::size_t k, std::size_t kp) const noexcept { return k == kp ? xi * r[k] : r[k] * r[kp]; }

  void validate() const {
    auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
    if (phi.size() != (T + 1) * N * K || r.size() != K || lambda.dim() != K)
      throw InvalidParameter("model state has inconsistent shape");
    if (std::any_of(phi.begin(), phi.end(), bad) || std::any_of(r.begin(), r.end(), bad) ||
        std::any_of(lambda.packed().begin(), lambda.packed().end(), bad))
      throw NumericalFault("model state holds negative or non-finite entries");
    for (double v : {xi, gamma0, beta, c0})
      if (!(std::isfinite(v) && v > 0.0)) throw NumericalFault("model scalar must be positive and finite");
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

inline double floored(double v) noexcept { return v < kParamFloor ? kParamFloor : v; }

/// Gamma draw for parameters: shape and result both floored at kParamFloor.
inline double draw_param(double shape, double scale, RngStream& rng) {
  return floored(sample_gamma(floored(shape), scale, rng));
}

/// Draws every parameter from its prior, top-down.
inline ModelState init_state(const HyperParams& hp, std::size_t N, std::size_t T, RngStream& rng) {
  hp.validate();
  if (N < 2) throw InvalidParameter("need at least two nodes");
  if (T < 1) throw InvalidParameter("need at least one slice");
  ModelState s(N, T, hp.K);
  s.gamma0 = sample_gamma(hp.e0, 1.0 / hp.f0, rng);
  s.c0 = sample_gamma(hp.a0, 1.0 / hp.b0, rng);
  s.xi = sample_gamma(hp.a0, 1.0 / hp.b0, rng);
  s.beta = sample_gamma(hp.a0, 1.0 / hp.b0, rng);
  for (auto& rk : s.r) rk = draw_param(s.gamma0 / static_cast<double>(hp.K), 1.0 / s.c0, rng);
  for (std::size_t k = 0; k < hp.K; ++k)
    for (std::size_t kp = k; kp < hp.K; ++kp)
      s.lambda(k, kp) = draw_param(s.lambda_shape(k, kp), 1.0 / s.beta, rng);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < hp.K; ++k) s.phi_at(0, n, k) = draw_param(hp.g0, 1.0 / hp.h0, rng);
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < hp.K; ++k)
        s.phi_at(t, n, k) = draw_param(s.phi_at(t - 1, n, k) / hp.tau, 1.0 / hp.tau, rng);
  return s;
}

/// Poisson rate sum_{k,k'} lambda_kk' phi_nk phi_mk' of dyad (n, m) at slice t.
/// Evaluated in canonical orientation so that the result is exactly symmetric.
inline double pair_rate(const ModelState& s, std::size_t t, std::size_t n, std::size_t m) {
  if (t < 1 || t > s.T) throw RangeError("pair_rate: slice must lie in 1..T");
  if (n == m) throw InvalidParameter("pair_rate: n == m");
  if (n > m) std::swap(n, m);
  const auto pn = s.phi_row(t, n);
  const auto pm = s.phi_row(t, m);
  double rate = 0.0;
  for (std::size_t k = 0; k < s.K; ++k) {
    if (pn[k] == 0.0) continue;
    double inner = 0.0;
    for (std::size_t kp = 0; kp < s.K; ++kp) inner += s.lambda(k, kp) * pm[kp];
    rate += pn[k] * inner;
  }
  return rate;
}

/// 1 - exp(-rate), accurate for small rates.
inline double link_probability(double rate) noexcept { return -std::expm1(-rate); }

/// Draws b ~ Bernoulli(1 - exp(-sigma)) for every dyad of every slice.
inline DynamicNetwork simulate_network(const ModelState& s, RngStream& rng) {
  std::vector<std::vector<Dyad>> slices(s.T);
  std::vector<double> lam_phi(s.K);
  for (std::size_t t = 1; t <= s.T; ++t) {
    for (std::size_t m = 1; m < s.N; ++m) {
      const auto pm = s.phi_row(t, m);
      for (std::size_t k = 0; k < s.K; ++k) {
        double acc = 0.0;
        for (std::size_t kp = 0; kp < s.K; ++kp) acc += s.lambda(k, kp) * pm[kp];
        lam_phi[k] = acc;
      }
      for (std::size_t n = 0; n < m; ++n) {
        const auto pn = s.phi_row(t, n);
        double rate = 0.0;
        for (std::size_t k = 0; k < s.K; ++k) rate += pn[k] * lam_phi[k];
        if (rng.uniform() < link_probability(rate))
          slices[t - 1].push_back({static_cast<node_t>(n), static_cast<node_t>(m)});
      }
    }
  }
  return DynamicNetwork(s.N, std::move(slices));
}

/// Full generative process: parameters from the prior, then the network.
inline std::pair<DynamicNetwork, ModelState> simulate(const HyperParams& hp, std::size_t N, std::size_t T,
                                                      RngStream& rng) {
  RngStream param_rng = rng.split({1});
  RngStream data_rng = rng.split({2});
  ModelState s = init_state(hp, N, T, param_rng);
  DynamicNetwork net = simulate_network(s, data_rng);
  return {std::move(net), std::move(s)};
}

struct PlantedOptions {
  std::size_t groups = 3;
  double member_strength = 1.0;   // phi^(0) for a node's own group
  double background = 0.01;       // phi^(0) elsewhere
  double within = 0.6;            // lambda_kk
  double between = 0.01;          // lambda_kk', k != k'
  double chain_tau = 20.0;        // concentration of the planted membership chain
};

/// Ground-truth state with block structure: node n belongs to group n % groups
/// and its memberships drift along a gamma chain with concentration chain_tau.
inline ModelState planted_state(std::size_t N, std::size_t T, const PlantedOptions& opt, RngStream& rng) {
  if (N < 2 || T < 1 || opt.groups < 1) throw InvalidParameter("planted_state: bad shape");
  ModelState s(N, T, opt.groups);
  s.gamma0 = 1.0;
  s.c0 = 1.0;
  s.xi = 1.0;
  s.beta = 1.0;
  std::fill(s.r.begin(), s.r.end(), 1.0);
  for (std::size_t k = 0; k < opt.groups; ++k)
    for (std::size_t kp = k; kp < opt.groups; ++kp) s.lambda(k, kp) = k == kp ? opt.within : opt.between;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < opt.groups; ++k)
      s.phi_at(0, n, k) = (n % opt.groups == k) ? opt.member_strength : opt.background;
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < opt.groups; ++k)
        s.phi_at(t, n, k) =
            draw_param(s.phi_at(t - 1, n, k) * opt.chain_tau, 1.0 / opt.chain_tau, rng);
  return s;
}

struct HeldoutLogLikelihood {
  double value = 0.0;
  /// Held-out links scored with probability 0 (each contributes -inf).
  std::size_t impossible_links = 0;
};

/// Bernoulli log-likelihood of the held-out dyads under the current state.
inline HeldoutLogLikelihood heldout_log_likelihood(const ModelState& s, const HoldoutMask& mask) {
  HeldoutLogLikelihood out;
  for (std::size_t t = 1; t <= mask.held.size(); ++t) {
    for (const auto& h : mask.slice(t)) {
      const double rate = pair_rate(s, t, h.n, h.m);
      if (!h.label) {
        out.value -= rate;
      } else if (rate > 0.0) {
        out.value += std::log(link_probability(rate));
      } else {
        out.value = -std::numeric_limits<double>::infinity();
        ++out.impossible_links;
      }
    }
  }
  return out;
}

}  // namespace dpgm

#endif  // DPGM_MODEL_HPP
