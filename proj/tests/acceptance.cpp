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


// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conditionals.hpp"
#include "dpgm/cli.hpp"
#include "dpgm/distributions.hpp"
#include "dpgm/eval.hpp"
#include "dpgm/gibbs.hpp"
#include "dpgm/model.hpp"
#include "dpgm/network.hpp"
#include "dpgm/online.hpp"
#include "json.hpp"
#include "support.hpp"

namespace {

using namespace dpgm;
using testing::moments;
using testing::z_score;

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Accumulates sub-checks; the criterion passes only if every one does.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    pass_ = pass_ && ok;
    if (!ok) failed_.push_back(what);
    std::cout << "    " << (ok ? "ok   " : "FAIL ") << what << '\n' << std::flush;
  }
  Verdict verdict(std::string summary) const {
    if (!failed_.empty()) summary += "; failing: " + std::to_string(failed_.size());
    return {pass_, std::move(summary)};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> failed_;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <class F>
std::vector<std::int64_t> draw_count(std::size_t n, F&& f) {
  std::vector<std::int64_t> xs(n);
  for (auto& x : xs) x = f();
  return xs;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Sampler correctness.

Verdict sampler_correctness() {
  Checks c;
  RngStream rng(101);
  for (std::int64_t m : {1, 10, 1000})
    for (double r : {0.1, 1.0, 10.0}) {
      const auto xs = draw_count(100000, [&] { return sample_crt(m, r, rng); });
      const double expected = r * (boost::math::digamma(r + m) - boost::math::digamma(r));
      const auto mo = moments(xs);
      // One customer always opens exactly one table.
      if (mo.var == 0.0) {
        c.expect(std::fabs(mo.mean - expected) < 1e-9,
                 fmt("CRT(m=%lld, r=%g) constant %g, expected %.12g", static_cast<long long>(m), r, mo.mean, expected));
        continue;
      }
      const double z = z_score(mo, expected);
      c.expect(std::fabs(z) < 3.0, fmt("CRT(m=%lld, r=%g) mean z=%.2f", static_cast<long long>(m), r, z));
    }
  for (double lambda : {0.01, 1.0, 10.0}) {
    const auto xs = draw_count(100000, [&] { return sample_ztp(lambda, rng); });
    const double z = z_score(moments(xs), lambda / -std::expm1(-lambda));
    c.expect(std::fabs(z) < 3.0, fmt("ZTP(%g) mean z=%.2f", lambda, z));
  }

  // Gamma-mixed Poisson against the negative binomial pmf.
  const double r = 1.7, p = 0.6;
  auto nb_pmf = [&](std::int64_t k) {
    return boost::math::pdf(boost::math::negative_binomial(r, 1.0 - p), static_cast<double>(k));
  };
  const auto mixed = draw_count(100000, [&] { return oracle_negbin(r, p, rng); });
  const double p1 = testing::chi_square_gof(mixed, nb_pmf);
  c.expect(p1 > 1e-3, fmt("gamma-Poisson mixture is NB: p=%.4f", p1));

  // Poisson number of logarithmic summands against the same pmf.
  auto sumlog = [&](std::int64_t l) {
    std::int64_t m = 0;
    for (std::int64_t s = 0; s < l; ++s) m += oracle_logarithmic(p, rng);
    return m;
  };
  const auto compound = draw_count(100000, [&] { return sumlog(sample_poisson(-r * std::log1p(-p), rng)); });
  const double p2 = testing::chi_square_gof(compound, nb_pmf);
  c.expect(p2 > 1e-3, fmt("Poisson-logarithmic sum is NB: p=%.4f", p2));

  // (m ~ NB, l ~ CRT(m, r)) and (l ~ Po, m ~ SumLog(l)) share their joint law.
  std::vector<std::int64_t> l_crt, l_po, m_given_l_crt, m_given_l_po;
  for (int i = 0; i < 100000; ++i) {
    const auto m = oracle_negbin(r, p, rng);
    const auto l = sample_crt(m, r, rng);
    l_crt.push_back(l);
    if (l == 2) m_given_l_crt.push_back(m);
    const auto l2 = sample_poisson(-r * std::log1p(-p), rng);
    l_po.push_back(l2);
    if (l2 == 2) m_given_l_po.push_back(sumlog(l2));
  }
  const double p3 = testing::chi_square_two_sample(l_crt, l_po);
  const double p4 = testing::chi_square_two_sample(m_given_l_crt, m_given_l_po);
  c.expect(p3 > 1e-3, fmt("table counts agree: p=%.4f", p3));
  c.expect(p4 > 1e-3, fmt("customers given two tables agree: p=%.4f", p4));
  return c.verdict("9 CRT means, 3 ZTP means, 4 identity tests");
}

// ---------------------------------------------------------------------------
// 2. Conditionals against grid quadrature.

Verdict conditional_oracles() {
  Checks c;
  double worst = 0.0;
  for (const auto& check : testing::all_conditional_checks(2024)) {
    worst = std::max(worst, check.tv);
    c.expect(check.tv < 0.05, fmt("%s TV=%.4f", check.name.c_str(), check.tv));
  }
  return c.verdict(fmt("max TV %.4f < 0.05", worst));
}

// ---------------------------------------------------------------------------
// 3. Geweke joint test.

// The alternating chain starts from an exact prior draw, so it is stationary
// from its first step. The rounds are split over independent chains and the
// standard error comes from the spread of the chain means.
struct GewekeStats {
  std::vector<double> gamma0, sum_r, density;
  void add(const ModelState& s, const DynamicNetwork& net, double weight) {
    double sr = 0.0;
    for (double v : s.r) sr += v;
    const double d = static_cast<double>(net.total_links()) /
                     static_cast<double>(net.num_slices() * dyad_count(net.num_nodes()));
    gamma0.back() += weight * s.gamma0;
    sum_r.back() += weight * sr;
    density.back() += weight * d;
  }
  void next() {
    gamma0.push_back(0.0);
    sum_r.push_back(0.0);
    density.push_back(0.0);
  }
};

Verdict geweke() {
  Checks c;
  HyperParams hp;
  hp.K = 2;
  hp.tau = 1.0;
  hp.g0 = hp.h0 = 1.0;
  hp.a0 = hp.b0 = 10.0;
  constexpr std::size_t N = 4, T = 2, chains = 100, length = 100;
  RngStream rng(303);

  GewekeStats forward, gibbs;
  for (std::size_t ch = 0; ch < chains; ++ch) {
    forward.next();
    for (std::size_t i = 0; i < length; ++i) {
      RngStream r = rng.split({1, ch, i});
      const ModelState s = init_state(hp, N, T, r);
      forward.add(s, simulate_network(s, r), 1.0 / length);
    }
  }

  GibbsConfig cfg;
  cfg.burn_in = 0;
  cfg.collect = 1;
  for (std::size_t ch = 0; ch < chains; ++ch) {
    gibbs.next();
    RngStream r0 = rng.split({2, ch});
    ModelState s = init_state(hp, N, T, r0);
    for (std::size_t i = 0; i < length; ++i) {
      RngStream r = rng.split({3, ch, i});
      auto net = std::make_shared<const DynamicNetwork>(simulate_network(s, r));
      gibbs.add(s, *net, 1.0 / length);
      const TrainView train(net, nullptr);
      cfg.seed = ch * length + i + 1;
      GibbsSampler sampler(train, hp, cfg, std::move(s));
      sampler.sweep();
      s = sampler.state();
    }
  }

  auto compare = [&](const char* name, const std::vector<double>& a, const std::vector<double>& b) {
    const auto ma = moments(a), mb = moments(b);
    const double z = (ma.mean - mb.mean) / std::hypot(ma.se(), mb.se());
    c.expect(std::fabs(z) < 3.0, fmt("%s forward %.4f gibbs %.4f z=%.2f", name, ma.mean, mb.mean, z));
  };
  compare("gamma0", forward.gamma0, gibbs.gamma0);
  compare("sum r", forward.sum_r, gibbs.sum_r);
  compare("link density", forward.density, gibbs.density);
  return c.verdict("N=4 T=2 K=2, 10^4 rounds as 100 chains of 100");
}

// ---------------------------------------------------------------------------
// 4. Dynamic community recovery on the split-merge network.

Verdict community_recovery() {
  Checks c;
  constexpr int kSeeds = 5;
  constexpr std::size_t T = 5;
  std::vector<double> ari_sum(T, 0.0);
  std::size_t max_groups = 0;
  for (int sd = 0; sd < kSeeds; ++sd) {
    RngStream data_rng(500 + sd);
    const auto data = generate_split_merge(data_rng);
    auto net = std::make_shared<const DynamicNetwork>(data.network);
    const TrainView train(net, nullptr);
    HyperParams hp;
    hp.K = 50;
    GibbsConfig cfg;
    cfg.burn_in = 1000;
    cfg.collect = 500;
    cfg.seed = static_cast<std::uint64_t>(sd);
    cfg.record_heldout = false;
    cfg.record_trace = false;
    const auto summary = run_chain(train, hp, cfg);
    const auto groups = effective_groups(summary.association);
    max_groups = std::max(max_groups, groups);
    const auto hard = hard_assignments(summary.association);
    std::string line = fmt("seed %d: effective groups %zu, ARI", sd, groups);
    for (std::size_t t = 0; t < T; ++t) {
      const double a = adjusted_rand_index(hard[t], data.labels[t]);
      ari_sum[t] += a;
      line += fmt(" %.3f", a);
    }
    c.expect(groups <= 8, line);
  }
  double worst = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double mean = ari_sum[t] / kSeeds;
    worst = std::min(worst, mean);
    c.expect(mean >= 0.8, fmt("slice %zu mean ARI %.3f >= 0.8", t + 1, mean));
  }
  return c.verdict(fmt("max effective groups %zu, worst slice mean ARI %.3f", max_groups, worst));
}

// ---------------------------------------------------------------------------
// 5. Held-out link prediction on planted networks.

Verdict link_prediction() {
  Checks c;
  constexpr int kSeeds = 10;
  double batch = 0.0, ablation = 0.0, online = 0.0;
  for (int sd = 0; sd < kSeeds; ++sd) {
    RngStream rng(1000 + sd);
    RngStream truth_rng = rng.split({1}), net_rng = rng.split({2}), hold_rng = rng.split({3});
    const ModelState truth = planted_state(40, 5, PlantedOptions{}, truth_rng);
    auto net = std::make_shared<const DynamicNetwork>(simulate_network(truth, net_rng));
    auto mask = std::make_shared<const HoldoutMask>(make_holdout(*net, 0.2, hold_rng));
    const TrainView train(net, mask);
    HyperParams hp;
    hp.K = 20;
    GibbsConfig cfg;
    cfg.burn_in = 1000;
    cfg.collect = 500;
    cfg.seed = static_cast<std::uint64_t>(sd);
    cfg.record_trace = false;
    const double b = auc_roc(run_chain(train, hp, cfg).heldout);
    cfg.independent_slices = true;
    const double a = auc_roc(run_chain(train, hp, cfg).heldout);
    cfg.independent_slices = false;
    OnlineConfig ocfg;
    ocfg.chain = cfg;
    const double o = auc_roc(run_online(train, hp, ocfg).posterior.heldout);
    std::cout << fmt("    seed %d: batch %.4f, independent slices %.4f, online %.4f\n", sd, b, a, o) << std::flush;
    batch += b / kSeeds;
    ablation += a / kSeeds;
    online += o / kSeeds;
  }
  c.expect(batch >= 0.85, fmt("batch AUC-ROC %.4f >= 0.85", batch));
  c.expect(batch - ablation >= 0.02, fmt("batch - independent slices %.4f >= 0.02", batch - ablation));
  c.expect(std::fabs(online - batch) <= 0.05, fmt("|online - batch| %.4f <= 0.05", std::fabs(online - batch)));
  return c.verdict(fmt("batch %.4f, independent slices %.4f, online %.4f", batch, ablation, online));
}

// ---------------------------------------------------------------------------
// 6. Cost follows the number of links.

std::shared_ptr<const DynamicNetwork> random_links(std::size_t N, std::size_t T, std::size_t per_slice,
                                                   RngStream& rng) {
  std::vector<std::vector<Dyad>> slices(T);
  for (auto& s : slices) {
    std::set<Dyad> chosen;
    while (chosen.size() < per_slice) {
      auto n = static_cast<node_t>(rng.uniform() * static_cast<double>(N));
      auto m = static_cast<node_t>(rng.uniform() * static_cast<double>(N));
      if (n == m) continue;
      if (m < n) std::swap(n, m);
      chosen.insert(Dyad{n, m});
    }
    s.assign(chosen.begin(), chosen.end());
  }
  return std::make_shared<const DynamicNetwork>(N, std::move(slices));
}

// Median over trials of the mean time per call.
double median_time(const std::function<void()>& f, int trials, int reps) {
  std::vector<double> times;
  for (int i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int j = 0; j < reps; ++j) f();
    times.push_back(seconds_since(t0) / reps);
  }
  std::nth_element(times.begin(), times.begin() + trials / 2, times.end());
  return times[trials / 2];
}

Verdict sparsity_scaling() {
  Checks c;
  constexpr std::size_t T = 5, E = 4000;
  HyperParams hp;
  hp.K = 20;
  RngStream rng(606);

  const auto small = random_links(500, T, E, rng);
  const auto large = random_links(500, T, 2 * E, rng);
  const TrainView train_e(small, nullptr), train_2e(large, nullptr);
  RngStream init_rng = rng.split({1});
  const ModelState s500 = init_for_fit(hp, 500, T, init_rng);
  std::uint64_t calls = 0;
  auto latent = [&](const TrainView& tv) {
    return [&] { (void)sample_latent_counts(s500, tv, RngStream(7, calls++)); };
  };
  const double t_e = median_time(latent(train_e), 9, 5);
  const double t_2e = median_time(latent(train_2e), 9, 5);
  const double ratio = t_2e / t_e;
  c.expect(ratio >= 1.6 && ratio <= 2.6,
           fmt("latent counts: %.2f ms at E, %.2f ms at 2E, ratio %.2f in [1.6, 2.6]", 1e3 * t_e, 1e3 * t_2e, ratio));

  const auto wide = random_links(1000, T, E, rng);
  const TrainView train_wide(wide, nullptr);
  GibbsConfig cfg;
  cfg.record_trace = false;
  auto sweep_time = [&](const TrainView& tv, std::size_t N) {
    RngStream r = rng.split({2, N});
    GibbsSampler sampler(tv, hp, cfg, init_for_fit(hp, N, T, r));
    sampler.sweep();
    return median_time([&] { sampler.sweep(); }, 5, 3);
  };
  const double t_n = sweep_time(train_e, 500);
  const double t_2n = sweep_time(train_wide, 1000);
  const double growth = t_2n / t_n;
  c.expect(growth < 4.0, fmt("sweep: %.2f ms at N=500, %.2f ms at N=1000, ratio %.2f < 4 (exponent %.2f)", 1e3 * t_n,
                             1e3 * t_2n, growth, std::log2(growth)));
  return c.verdict(fmt("link ratio %.2f, node-doubling ratio %.2f", ratio, growth));
}

// ---------------------------------------------------------------------------
// 7. Bit-reproducible commands.

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dpgm");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cout << "    command failed: " << err.str();
  return code;
}

Verdict determinism() {
  namespace fs = std::filesystem;
  Checks c;
  const fs::path dir = fs::temp_directory_path() / "dpgm_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);

  for (const std::string mode : {"split-merge", "prior", "planted"}) {
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = (dir / (mode + std::to_string(rep) + ".tsv")).string();
      c.expect(run_cli({"simulate", "--mode", mode, "--seed", "17", "-o", out}) == 0, "simulate " + mode + " runs");
      const std::string side = mode == "split-merge" ? slurp(out + ".labels.tsv") : slurp(out + ".state.json");
      if (rep == 0) first = slurp(out) + side;
      else c.expect(first == slurp(out) + side, "simulate " + mode + " repeats byte for byte");
    }
  }

  const auto net = (dir / "split-merge0.tsv").string();
  auto fit = [&](const std::string& engine, const std::string& workers, const std::string& name) {
    const fs::path out = dir / name;
    c.expect(run_cli({"fit", net, "--engine", engine, "--workers", workers, "--seed", "5", "--burn-in", "100",
                      "--collect", "50", "--out-dir", out.string()}) == 0,
             "fit " + name + " runs");
    auto report = nlohmann::json::parse(slurp(out / "report.json"));
    report.erase("timing");
    report["config"].erase("workers");
    return report.dump() + slurp(out / "state.json") + slurp(out / "association.tsv") +
           slurp(out / "predictions.tsv");
  };
  for (const std::string engine : {"batch", "online"}) {
    const auto w1 = fit(engine, "1", engine + "_w1a");
    c.expect(w1 == fit(engine, "1", engine + "_w1b"), "fit " + engine + " repeats with 1 worker");
    const auto w4 = fit(engine, "4", engine + "_w4a");
    c.expect(w4 == fit(engine, "4", engine + "_w4b"), "fit " + engine + " repeats with 4 workers");
    c.expect(w1 == w4, "fit " + engine + " agrees between 1 and 4 workers");
  }
  fs::remove_all(dir);
  return c.verdict("simulate x3 modes, fit x2 engines x {1, 4} workers; timing fields excluded");
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "sampler correctness", 60, sampler_correctness},
      {2, "conditional oracles", 300, conditional_oracles},
      {3, "Geweke joint test", 600, geweke},
      {4, "dynamic community recovery", 900, community_recovery},
      {5, "held-out link prediction", 1800, link_prediction},
      {6, "sparsity scaling", 600, sparsity_scaling},
      {7, "determinism", 600, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  bool all = true;
  std::vector<std::string> lines;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.contains(cr.id)) continue;
    std::cout << "criterion " << cr.id << ": " << cr.name << '\n' << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = cr.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs <= cr.budget_seconds;
    if (!in_time) v.detail += fmt("; over the %.0f s budget", cr.budget_seconds);
    const bool pass = v.pass && in_time;
    all = all && pass;
    lines.push_back(fmt("%s %d %s: ", pass ? "PASS" : "FAIL", cr.id, cr.name) + v.detail + fmt(" (%.1f s)", secs));
    std::cout << lines.back() << "\n\n" << std::flush;
  }
  std::cout << "summary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return all ? 0 : 1;
}
