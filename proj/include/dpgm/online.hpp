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


#ifndef DPGM_ONLINE_HPP
#define DPGM_ONLINE_HPP

// Online Gibbs sampling by conditional density filtering. Each iteration
// draws a node mini-batch J, samples latent counts for the observed links
// inside J, blends them into running statistics with step size
// rho_i = (i + i0)^-kappa, and runs the batch conditionals against those
// statistics. Memberships outside J stay fixed for the iteration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dpgm/gibbs.hpp"

namespace dpgm {

struct OnlineConfig {
  double kappa = 0.5;
  double i0 = 100.0;
  std::size_t batch_nodes = 0;  // 0 selects N / 4
  GibbsConfig chain;            // seed, workers, burn-in and collection protocol

  std::size_t iterations() const noexcept { return chain.burn_in + chain.collect * chain.thin; }

  std::size_t batch_size(std::size_t N) const noexcept {
    return batch_nodes == 0 ? std::max<std::size_t>(2, N / 4) : batch_nodes;
  }

  void validate(std::size_t N) const {
    chain.validate();
    if (!(kappa >= 0.5 && kappa <= 1.0)) throw InvalidParameter("kappa must lie in (0.5, 1]");
    if (!(i0 > 0.0) || !std::isfinite(i0)) throw InvalidParameter("i0 must be positive");
    const std::size_t b = batch_size(N);
    if (b < 2 || b > N) throw InvalidParameter("batch_nodes must lie in 2..N");
  }

  /// Non-fatal remarks about the configuration.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (kappa == 0.5) out.emplace_back("kappa = 0.5 lies on the open boundary of (0.5, 1]; step sizes are not square-summable");
    return out;
  }
};

/// rho_i = (i + i0)^-kappa.
inline double step_size(std::int64_t i, double kappa, double i0) {
  if (i < 0) throw InvalidParameter("iteration index must be non-negative");
  return std::pow(static_cast<double>(i) + i0, -kappa);
}

/// Visits the nodes in a fresh random order every epoch. When batch_nodes
/// does not divide N the last batch of an epoch is topped up with nodes drawn
/// uniformly from the rest, so every batch has exactly batch_nodes members.
class MinibatchSchedule {
 public:
  MinibatchSchedule(std::size_t N, std::size_t batch_nodes, RngStream rng)
      : N_(N), batch_(batch_nodes), rng_(rng) {
    if (batch_ < 1 || batch_ > N_) throw InvalidParameter("batch_nodes must lie in 1..N");
  }

  std::size_t epoch() const noexcept { return epoch_; }

  std::vector<node_t> next() {
    if (pos_ >= order_.size()) reshuffle();
    std::vector<node_t> out;
    const std::size_t take = std::min(batch_, order_.size() - pos_);
    out.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
    pos_ += take;
    if (out.size() < batch_) {
      std::vector<char> used(N_, 0);
      for (node_t n : out) used[n] = 1;
      std::vector<node_t> rest;
      for (std::size_t n = 0; n < N_; ++n)
        if (!used[n]) rest.push_back(static_cast<node_t>(n));
      std::shuffle(rest.begin(), rest.end(), rng_);
      out.insert(out.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(batch_ - out.size()));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(N_);
    std::iota(order_.begin(), order_.end(), node_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
    ++epoch_;
  }

  std::size_t N_, batch_;
  RngStream rng_;
  std::vector<node_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

inline std::vector<node_t> next_minibatch(MinibatchSchedule& schedule) { return schedule.next(); }

/// Running statistics, real valued. The latent counts are blended by
/// update_decayed_stats; the exposures theta and omega that pair with them
/// are blended with the same step size by the online sampler.
struct DecayedStats {
  std::size_t N = 0, T = 0, K = 0;
  std::vector<double> x_nk;   // SuffStats layout
  SymMatrix<double> x_kk;
  SymMatrix<double> theta;
  std::vector<double> omega;  // [((t - 1) * N + n) * K + k]

  DecayedStats() = default;
  DecayedStats(std::size_t n, std::size_t t, std::size_t k)
      : N(n), T(t), K(k), x_nk(t * n * k, 0.0), x_kk(k, 0.0), theta(k, 0.0), omega(t * n * k, 0.0) {}

  static DecayedStats from(const SuffStats& s, const RateAggregates& agg) {
    DecayedStats d(s.N, s.T, s.K);
    std::transform(s.x_nk.begin(), s.x_nk.end(), d.x_nk.begin(), [](count_t v) { return static_cast<double>(v); });
    auto src = s.x_kk.packed();
    auto dst = d.x_kk.packed();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<double>(src[i]);
    d.theta = agg.theta;
    d.omega = agg.omega;
    return d;
  }

  bool valid() const {
    auto ok = [](double v) { return v >= 0.0 && std::isfinite(v); };
    return std::all_of(x_nk.begin(), x_nk.end(), ok) && std::all_of(x_kk.packed().begin(), x_kk.packed().end(), ok) &&
           std::all_of(theta.packed().begin(), theta.packed().end(), ok) &&
           std::all_of(omega.begin(), omega.end(), ok);
  }
};

/// Dyad-count ratio (N choose 2) / (|J| choose 2).
inline double dyad_ratio(std::size_t N, std::size_t batch) {
  return static_cast<double>(dyad_count(N)) / static_cast<double>(dyad_count(batch));
}

/// Partner ratio (N - 1) / (|J| - 1): how many more partners a node has in
/// the full network than inside the batch.
inline double partner_ratio(std::size_t N, std::size_t batch) {
  return static_cast<double>(N - 1) / static_cast<double>(batch - 1);
}

/// ds <- (1 - rho) ds + rho * ratio * fresh. Group statistics are scaled by
/// the dyad ratio; node statistics of batch members by the partner ratio.
/// Node statistics outside the batch are left untouched.
inline void update_decayed_stats(DecayedStats& ds, const SuffStats& fresh, std::span<const node_t> batch,
                                 std::int64_t i, const OnlineConfig& cfg) {
  const double rho = step_size(i, cfg.kappa, cfg.i0);
  if (fresh.N != ds.N || fresh.T != ds.T || fresh.K != ds.K) throw InvalidParameter("statistics shape mismatch");
  if (batch.size() < 2) throw InvalidParameter("mini-batch needs at least two nodes");
  const double group_scale = dyad_ratio(ds.N, batch.size());
  const double node_scale = partner_ratio(ds.N, batch.size());
  auto dst = ds.x_kk.packed();
  auto src = fresh.x_kk.packed();
  for (std::size_t j = 0; j < dst.size(); ++j)
    dst[j] = (1.0 - rho) * dst[j] + rho * group_scale * static_cast<double>(src[j]);
  for (std::size_t t = 1; t <= ds.T; ++t)
    for (node_t n : batch)
      for (std::size_t k = 0; k < ds.K; ++k) {
        const std::size_t j = ((t - 1) * ds.N + n) * ds.K + k;
        ds.x_nk[j] = (1.0 - rho) * ds.x_nk[j] + rho * node_scale * static_cast<double>(fresh.x_nk[j]);
      }
}

/// Unbiased integer version of the running statistics: each entry becomes
/// floor(v) + Bernoulli(v - floor(v)).
inline SuffStats round_stats(const DecayedStats& ds, RngStream& rng) {
  SuffStats out(ds.N, ds.T, ds.K);
  auto round = [&rng](double v) {
    const double f = std::floor(v);
    return static_cast<count_t>(f) + (rng.uniform() < v - f ? 1 : 0);
  };
  for (std::size_t j = 0; j < ds.x_nk.size(); ++j) out.x_nk[j] = round(ds.x_nk[j]);
  auto src = ds.x_kk.packed();
  auto dst = out.x_kk.packed();
  for (std::size_t j = 0; j < src.size(); ++j) {
    dst[j] = round(src[j]);
    out.total += dst[j];
  }
  return out;
}

struct OnlineSummary {
  PosteriorSummary posterior;
  std::vector<double> rho;                   // per iteration
  std::vector<std::vector<node_t>> batches;  // per iteration, when traced
};

/// Stateful online sampler. iterate() performs one mini-batch step.
class OnlineSampler {
 public:
  OnlineSampler(const TrainView& train, HyperParams hp, OnlineConfig cfg, ModelState init)
      : train_(&train),
        hp_(hp),
        cfg_(cfg),
        sampler_(train, hp, cfg.chain, std::move(init)),
        base_(cfg.chain.seed, 0),
        schedule_(train.num_nodes(), cfg.batch_size(train.num_nodes()), RngStream(cfg.chain.seed, 3)) {
    cfg_.validate(train.num_nodes());
    const auto warm = sample_latent_counts(sampler_.state(), train, RngStream(cfg.chain.seed, 2), cfg.chain.workers);
    stats_ = DecayedStats::from(warm, compute_theta_and_omega(sampler_.state(), train));
  }

  const ModelState& state() const noexcept { return sampler_.state(); }
  const DecayedStats& stats() const noexcept { return stats_; }
  const SweepRecord& last() const noexcept { return last_; }
  const std::vector<node_t>& last_batch() const noexcept { return batch_; }
  double last_rho() const noexcept { return rho_; }
  const PhaseTimes& times() const noexcept { return times_; }
  std::size_t clamp_events() const noexcept { return clamps_.events + sampler_.clamp_events(); }

  void iterate() {
    using clock = std::chrono::steady_clock;
    auto mark = clock::now();
    auto lap = [&](double& slot) {
      const auto now = clock::now();
      slot += std::chrono::duration<double>(now - mark).count();
      mark = now;
    };
    const std::size_t N = sampler_.state().N, K = sampler_.state().K;
    const RngStream it_rng = base_.split({iter_});
    batch_ = schedule_.next();
    std::vector<char> inside(N, 0);
    for (node_t n : batch_) inside[n] = 1;
    const bool full = batch_.size() == N;
    const std::vector<char>* filter = full ? nullptr : &inside;

    ModelState& s = sampler_.state();
    const SuffStats fresh = sample_latent_counts(s, *train_, it_rng.split({1}), cfg_.chain.workers, filter);
    rho_ = step_size(static_cast<std::int64_t>(iter_), cfg_.kappa, cfg_.i0);
    update_decayed_stats(stats_, fresh, batch_, static_cast<std::int64_t>(iter_), cfg_);
    RngStream round_rng = it_rng.split({5});
    const SuffStats stats = round_stats(stats_, round_rng);
    lap(times_.latent);

    const SymMatrix<double> batch_theta = compute_theta(s, *train_, filter);
    const double scale = dyad_ratio(N, batch_.size());
    RateAggregates agg;
    agg.neg_log1m_p_tilde = SymMatrix<double>(K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t kp = k; kp < K; ++kp) {
        double& th = stats_.theta(k, kp);
        th = (1.0 - rho_) * th + rho_ * scale * batch_theta(k, kp);
        agg.neg_log1m_p_tilde(k, kp) = std::log1p(th / s.beta);
      }
    agg.theta = stats_.theta;
    lap(times_.theta);

    RngStream group_rng = it_rng.split({2});
    sample_group_block(stats, agg, s, hp_, group_rng, clamps_, nullptr, cfg_.chain.gamma0_update);
    lap(times_.group);

    const double partners = partner_ratio(N, batch_.size());
    const std::size_t T = s.T;
    auto blend_omega = [&](node_t n, std::span<double> omega) {
      for (std::size_t t = 1; t <= T; ++t)
        for (std::size_t k = 0; k < K; ++k) {
          double& kept = stats_.omega[((t - 1) * N + n) * K + k];
          double& cur = omega[(t - 1) * K + k];
          kept = (1.0 - rho_) * kept + rho_ * partners * cur;
          cur = kept;
        }
    };
    sampler_.update_memberships_for(stats, it_rng.split({3}), &batch_, full ? nullptr : &inside, blend_omega);
    lap(times_.memberships);

    RngStream hyper_rng = it_rng.split({4});
    sample_hypers(s, hp_, hyper_rng, clamps_);
    lap(times_.hypers);

    last_ = SweepRecord{};
    last_.sweep = iter_;
    last_.gamma0 = s.gamma0;
    last_.xi = s.xi;
    last_.beta = s.beta;
    last_.c0 = s.c0;
    for (double v : s.r) last_.sum_r += v;
    last_.effective_k = effective_group_count(s, cfg_.chain.effective_eps);
    last_.train_loglik = fresh.link_term;
    last_.latent_total = fresh.total;
    last_.clamp_events = clamp_events();
    ++iter_;
  }

 private:
  const TrainView* train_;
  HyperParams hp_;
  OnlineConfig cfg_;
  GibbsSampler sampler_;
  RngStream base_;
  MinibatchSchedule schedule_;
  DecayedStats stats_;
  std::vector<node_t> batch_;
  double rho_ = 0.0;
  std::size_t iter_ = 0;
  SweepRecord last_;
  PhaseTimes times_;
  ClampCounter clamps_;
};

/// Runs cfg.iterations() online steps with the batch collection protocol.
inline OnlineSummary run_online(const TrainView& train, const HyperParams& hp, const OnlineConfig& cfg,
                                std::optional<ModelState> init = std::nullopt, bool trace_batches = false) {
  cfg.validate(train.num_nodes());
  if (!init) {
    RngStream init_rng(cfg.chain.seed, 1);
    init = init_for_fit(hp, train.num_nodes(), train.num_slices(), init_rng);
  }
  OnlineSampler sampler(train, hp, cfg, std::move(*init));
  PosteriorCollector collector(train.mask(), train.num_nodes(), train.num_slices(), hp.K, cfg.chain.record_heldout);
  OnlineSummary out;
  auto& summary = collector.summary();
  const std::size_t total = cfg.iterations();
  double collect_time = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    try {
      sampler.iterate();
    } catch (const NumericalFault& e) {
      throw NumericalFault("iteration " + std::to_string(i) + ": " + e.what());
    }
    out.rho.push_back(sampler.last_rho());
    if (trace_batches) out.batches.push_back(sampler.last_batch());
    if (cfg.chain.record_trace) summary.trace.push_back(sampler.last());
    if (i >= cfg.chain.burn_in && (i - cfg.chain.burn_in + 1) % cfg.chain.thin == 0) {
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
  out.posterior = std::move(summary);
  return out;
}

}  // namespace dpgm

#endif  // DPGM_ONLINE_HPP
