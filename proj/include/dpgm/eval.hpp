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

#ifndef DPGM_EVAL_HPP
#define DPGM_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpgm/error.hpp"
#include "dpgm/model.hpp"
#include "dpgm/network.hpp"
#include "dpgm/rng.hpp"

namespace dpgm {

/// One scored held-out dyad.
struct ScoredDyad {
  std::size_t t = 0;
  node_t n = 0;
  node_t m = 0;
  bool label = false;
  double score = 0.0;
};

/// Rank-based (Mann-Whitney) AUC-ROC; tied scores get half credit.
inline double auc_roc(std::span<const ScoredDyad> rows) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].score < rows[b].score; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && rows[order[j]].score == rows[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t q = i; q < j; ++q) {
      if (rows[order[q]].label) {
        pos += 1.0;
        rank_sum += mid_rank;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("AUC-ROC needs at least one positive and one negative");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Area under the precision-recall curve with step interpolation (average
/// precision). Tied scores enter the ranking together.
inline double auc_pr(std::span<const ScoredDyad> rows) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].score > rows[b].score; });
  double total_pos = 0.0;
  for (const auto& r : rows) total_pos += r.label;
  if (total_pos == 0.0) throw UndefinedMetric("AUC-PR needs at least one positive");
  double tp = 0.0, seen = 0.0, area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && rows[order[j]].score == rows[order[i]].score) {
      tp += rows[order[j]].label;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

/// w[t][n][k] = phi[t][n][k] * lambda_kk for t = 1..T.
struct AssociationMatrix {
  std::size_t T = 0, N = 0, K = 0;
  std::vector<double> w;  // [((t - 1) * N + n) * K + k]

  double at(std::size_t t, std::size_t n, std::size_t k) const { return w[((t - 1) * N + n) * K + k]; }
};

inline AssociationMatrix association_weights(const ModelState& s) {
  AssociationMatrix a{s.T, s.N, s.K, std::vector<double>(s.T * s.N * s.K)};
  for (std::size_t t = 1; t <= s.T; ++t)
    for (std::size_t n = 0; n < s.N; ++n)
      for (std::size_t k = 0; k < s.K; ++k) a.w[((t - 1) * s.N + n) * s.K + k] = s.phi_at(t, n, k) * s.lambda(k, k);
  return a;
}

/// Groups whose strongest association exceeds eps times the global maximum.
inline std::size_t effective_groups(const AssociationMatrix& a, double eps = 1e-2) {
  std::vector<double> per_group(a.K, 0.0);
  for (std::size_t i = 0; i < a.w.size(); ++i) per_group[i % a.K] = std::max(per_group[i % a.K], a.w[i]);
  const double best = per_group.empty() ? 0.0 : *std::max_element(per_group.begin(), per_group.end());
  if (best <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(per_group.begin(), per_group.end(), [&](double v) { return v > eps * best; }));
}

inline std::size_t effective_groups(const ModelState& s, double eps = 1e-2) {
  return effective_groups(association_weights(s), eps);
}

/// Hard assignment per slice: argmax_k of the association weights.
inline std::vector<std::vector<int>> hard_assignments(const AssociationMatrix& a) {
  std::vector<std::vector<int>> out(a.T, std::vector<int>(a.N, 0));
  for (std::size_t t = 1; t <= a.T; ++t)
    for (std::size_t n = 0; n < a.N; ++n) {
      const auto* row = a.w.data() + ((t - 1) * a.N + n) * a.K;
      out[t - 1][n] = static_cast<int>(std::max_element(row, row + a.K) - row);
    }
  return out;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidParameter("ARI: labelings differ in length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : joint) index += c2(v);
  for (const auto& [key, v] : ra) sa += c2(v);
  for (const auto& [key, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

struct SplitMergeOptions {
  double p_in = 0.8;
  double p_out = 0.05;
};

struct SplitMergeData {
  DynamicNetwork network;
  std::vector<std::vector<int>> labels;  // labels[t - 1][n]
};

/// 65 nodes over 5 slices. t = 1: groups of 22/22/21; t = 2: the second
/// group splits 11/11; t = 3..5: the second and third groups are merged.
inline SplitMergeData generate_split_merge(RngStream& rng, SplitMergeOptions opt = {}) {
  if (!(opt.p_in >= 0.0 && opt.p_in <= 1.0 && opt.p_out >= 0.0 && opt.p_out <= 1.0))
    throw InvalidParameter("split-merge probabilities must lie in [0, 1]");
  constexpr std::size_t N = 65, T = 5;
  SplitMergeData d;
  d.labels.assign(T, std::vector<int>(N, 0));
  for (std::size_t n = 0; n < N; ++n) {
    const int base = n < 22 ? 0 : (n < 44 ? 1 : 2);
    d.labels[0][n] = base;
    d.labels[1][n] = (base == 1 && n >= 33) ? 3 : base;
    for (std::size_t t = 2; t < T; ++t) d.labels[t][n] = base == 2 ? 1 : base;
  }
  std::vector<std::vector<Dyad>> slices(T);
  for (std::size_t t = 0; t < T; ++t)
    for (node_t n = 0; n < N; ++n)
      for (node_t m = n + 1; m < N; ++m) {
        const double p = d.labels[t][n] == d.labels[t][m] ? opt.p_in : opt.p_out;
        if (rng.uniform() < p) slices[t].push_back({n, m});
      }
  d.network = DynamicNetwork(N, std::move(slices));
  return d;
}

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// TSV "t n m label score" with a '#' header line.
inline void write_scored_dyads(std::ostream& out, std::span<const ScoredDyad> rows) {
  out << "# t\tn\tm\tlabel\tscore\n";
  for (const auto& r : rows)
    out << r.t << '\t' << r.n << '\t' << r.m << '\t' << (r.label ? 1 : 0) << '\t' << detail::format_double(r.score)
        << '\n';
}

inline std::vector<ScoredDyad> read_scored_dyads(std::istream& in) {
  std::vector<ScoredDyad> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream is(line);
    long long t, n, m, label;
    double score;
    std::string rest;
    if (!(is >> t >> n >> m >> label >> score) || (is >> rest))
      throw ParseError("expected 't n m label score'", lineno);
    if (t < 1 || n < 0 || m < 0 || n == m) throw ParseError("bad dyad", lineno);
    if (label != 0 && label != 1) throw ParseError("label must be 0 or 1", lineno);
    if (!(score >= 0.0 && score <= 1.0)) throw ParseError("score must lie in [0, 1]", lineno);
    const Dyad d = Dyad::canonical(static_cast<node_t>(n), static_cast<node_t>(m));
    rows.push_back({static_cast<std::size_t>(t), d.n, d.m, label == 1, score});
  }
  return rows;
}

/// Long-format TSV "t n k weight".
inline void write_association(std::ostream& out, const AssociationMatrix& a) {
  out << "# t\tn\tk\tweight\n";
  for (std::size_t t = 1; t <= a.T; ++t)
    for (std::size_t n = 0; n < a.N; ++n)
      for (std::size_t k = 0; k < a.K; ++k)
        out << t << '\t' << n << '\t' << k << '\t' << detail::format_double(a.at(t, n, k)) << '\n';
}

}  // namespace dpgm

#endif  // DPGM_EVAL_HPP
