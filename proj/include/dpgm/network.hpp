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

#ifndef DPGM_NETWORK_HPP
#define DPGM_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpgm/error.hpp"
#include "dpgm/rng.hpp"

namespace dpgm {

using node_t = std::uint32_t;

/// Unordered node pair stored in canonical orientation n < m.
struct Dyad {
  node_t n = 0;
  node_t m = 0;

  static Dyad canonical(node_t a, node_t b) noexcept { return a < b ? Dyad{a, b} : Dyad{b, a}; }
  friend bool operator==(const Dyad&, const Dyad&) = default;
  friend auto operator<=>(const Dyad&, const Dyad&) = default;
};

inline std::uint64_t dyad_count(std::size_t num_nodes) noexcept {
  return static_cast<std::uint64_t>(num_nodes) * (num_nodes > 0 ? num_nodes - 1 : 0) / 2;
}

/// T binary undirected snapshots over N nodes. Slices are 1-based.
/// Immutable once built.
class DynamicNetwork {
 public:
  DynamicNetwork() = default;

  /// Builds from raw per-slice pair lists (index 0 holds slice 1). Pairs are
  /// canonicalized and deduplicated; self-loops and out-of-range ids throw.
  DynamicNetwork(std::size_t num_nodes, std::vector<std::vector<Dyad>> slices)
      : num_nodes_(num_nodes), edges_(std::move(slices)) {
    for (auto& slice : edges_) {
      for (auto& d : slice) {
        if (d.n == d.m) throw InvalidParameter("self-loop on node " + std::to_string(d.n));
        d = Dyad::canonical(d.n, d.m);
        if (d.m >= num_nodes_) throw RangeError("node id " + std::to_string(d.m) + " >= N");
      }
      std::sort(slice.begin(), slice.end());
      slice.erase(std::unique(slice.begin(), slice.end()), slice.end());
    }
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_slices() const noexcept { return edges_.size(); }

  std::span<const Dyad> edges(std::size_t t) const { return edges_.at(t - 1); }
  std::size_t num_links(std::size_t t) const { return edges(t).size(); }

  std::size_t total_links() const noexcept {
    std::size_t total = 0;
    for (const auto& s : edges_) total += s.size();
    return total;
  }

  bool has_edge(std::size_t t, node_t a, node_t b) const {
    if (a == b) return false;
    const auto e = edges(t);
    return std::binary_search(e.begin(), e.end(), Dyad::canonical(a, b));
  }

  friend bool operator==(const DynamicNetwork&, const DynamicNetwork&) = default;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::vector<Dyad>> edges_;
};

struct EdgeListFormat {
  /// Self-loops are an error when strict, silently skipped otherwise.
  bool strict = true;
};

namespace detail {

inline bool parse_header_field(const std::string& line, const std::string& key, std::size_t& out) {
  const auto pos = line.find(key + "=");
  if (pos == std::string::npos) return false;
  std::istringstream is(line.substr(pos + key.size() + 1));
  long long v = -1;
  if (!(is >> v) || v < 0) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

}  // namespace detail

/// Reads the tab/space separated "t u v" edge-list format.
///
/// Lines starting with '#' are comments; "# nodes=N slices=T" declares the
/// shape. Without a declaration N = 1 + max id and T = max t.
inline DynamicNetwork load_edge_list(std::istream& in, EdgeListFormat fmt = {}) {
  std::size_t declared_nodes = 0, declared_slices = 0;
  bool has_nodes = false, has_slices = false;
  std::vector<std::vector<Dyad>> slices;
  std::size_t max_node = 0;
  bool any_edge = false;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      has_nodes |= detail::parse_header_field(line, "nodes", declared_nodes);
      has_slices |= detail::parse_header_field(line, "slices", declared_slices);
      continue;
    }
    std::istringstream is(line);
    long long t = 0, u = 0, v = 0;
    std::string rest;
    if (!(is >> t >> u >> v) || (is >> rest)) throw ParseError("expected 't u v', got '" + line + "'", lineno);
    if (t < 1 || (has_slices && static_cast<std::size_t>(t) > declared_slices))
      throw RangeError("line " + std::to_string(lineno) + ": slice " + std::to_string(t) + " out of range");
    if (u < 0 || v < 0) throw ParseError("negative node id", lineno);
    if (has_nodes && (static_cast<std::size_t>(u) >= declared_nodes ||
                      static_cast<std::size_t>(v) >= declared_nodes))
      throw RangeError("line " + std::to_string(lineno) + ": node id out of range");
    if (u == v) {
      if (fmt.strict) throw ParseError("self-loop", lineno);
      continue;
    }
    if (slices.size() < static_cast<std::size_t>(t)) slices.resize(static_cast<std::size_t>(t));
    slices[static_cast<std::size_t>(t) - 1].push_back(
        Dyad::canonical(static_cast<node_t>(u), static_cast<node_t>(v)));
    max_node = std::max<std::size_t>(max_node, static_cast<std::size_t>(std::max(u, v)));
    any_edge = true;
  }
  const std::size_t num_slices = has_slices ? declared_slices : slices.size();
  slices.resize(num_slices);
  const std::size_t num_nodes = has_nodes ? declared_nodes : (any_edge ? max_node + 1 : 0);
  return DynamicNetwork(num_nodes, std::move(slices));
}

/// Writes the canonical sorted form, header included.
inline void write_edge_list(std::ostream& out, const DynamicNetwork& net) {
  out << "# nodes=" << net.num_nodes() << " slices=" << net.num_slices() << '\n';
  for (std::size_t t = 1; t <= net.num_slices(); ++t)
    for (const auto& d : net.edges(t)) out << t << '\t' << d.n << '\t' << d.m << '\n';
}

struct HeldDyad {
  node_t n = 0;
  node_t m = 0;
  bool label = false;

  Dyad dyad() const noexcept { return {n, m}; }
  friend bool operator==(const HeldDyad&, const HeldDyad&) = default;
};

/// Per-slice held-out dyads (links and non-links) with their true labels.
struct HoldoutMask {
  std::vector<std::vector<HeldDyad>> held;  // index t - 1, sorted by (n, m)
  double fraction = 0.0;

  std::span<const HeldDyad> slice(std::size_t t) const { return held.at(t - 1); }

  bool contains(std::size_t t, node_t a, node_t b) const {
    const auto s = slice(t);
    const Dyad d = Dyad::canonical(a, b);
    auto it = std::lower_bound(s.begin(), s.end(), d,
                               [](const HeldDyad& h, const Dyad& x) { return h.dyad() < x; });
    return it != s.end() && it->dyad() == d;
  }

  std::size_t size() const noexcept {
    std::size_t total = 0;
    for (const auto& s : held) total += s.size();
    return total;
  }

  static HoldoutMask empty(std::size_t num_slices) {
    HoldoutMask m;
    m.held.resize(num_slices);
    return m;
  }
};

/// Holds out round(fraction * N(N-1)/2) dyads per slice, chosen uniformly
/// (selection sampling) among all dyads regardless of label. When the
/// network has both links and non-links, draws holding only one class are
/// rejected and redrawn, so held-out metrics stay defined.
inline HoldoutMask make_holdout(const DynamicNetwork& net, double fraction, RngStream& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidParameter("holdout fraction must lie in (0, 1)");
  const std::size_t N = net.num_nodes();
  const std::uint64_t total = dyad_count(N);
  const auto want = static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(total)));
  const std::uint64_t links = net.total_links();
  const bool both_classes = links > 0 && links < total * net.num_slices();
  constexpr int kMaxDraws = 1000;
  HoldoutMask mask;
  mask.fraction = fraction;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    mask.held.assign(net.num_slices(), {});
    std::size_t positives = 0;
    for (std::size_t t = 1; t <= net.num_slices(); ++t) {
      auto& out = mask.held[t - 1];
      out.reserve(want);
      const auto edges = net.edges(t);
      auto edge_it = edges.begin();
      std::uint64_t seen = 0, chosen = 0;
      for (node_t n = 0; n < N && chosen < want; ++n) {
        for (node_t m = n + 1; m < N && chosen < want; ++m, ++seen) {
          const double remaining = static_cast<double>(total - seen);
          if (remaining * rng.uniform() < static_cast<double>(want - chosen)) {
            const Dyad d{n, m};
            while (edge_it != edges.end() && *edge_it < d) ++edge_it;
            const bool link = edge_it != edges.end() && *edge_it == d;
            out.push_back({n, m, link});
            positives += link;
            ++chosen;
          }
        }
      }
    }
    const std::size_t held = mask.size();
    if (!both_classes || held == 0 || (positives > 0 && positives < held)) break;
  }
  return mask;
}

/// Training-side view of a network with a holdout mask applied.
///
/// Precomputes the observed (non-held) links per slice, their per-node
/// adjacency, and each node's held-out partners so that rate aggregates can
/// subtract held-out contributions without scanning all dyads.
class TrainView {
 public:
  TrainView(std::shared_ptr<const DynamicNetwork> net, std::shared_ptr<const HoldoutMask> mask)
      : net_(std::move(net)), mask_(std::move(mask)) {
    if (!net_) throw InvalidParameter("TrainView needs a network");
    const std::size_t T = net_->num_slices();
    if (!mask_) mask_ = std::make_shared<HoldoutMask>(HoldoutMask::empty(T));
    if (mask_->held.size() != T) throw InvalidParameter("holdout mask slice count does not match network");
    const std::size_t N = net_->num_nodes();
    observed_.resize(T);
    adjacency_.resize(T);
    held_partners_.resize(T);
    for (std::size_t t = 1; t <= T; ++t) {
      const auto held = mask_->slice(t);
      auto h = held.begin();
      for (const auto& d : net_->edges(t)) {
        while (h != held.end() && h->dyad() < d) ++h;
        if (h != held.end() && h->dyad() == d) continue;
        observed_[t - 1].push_back(d);
      }
      adjacency_[t - 1] = Csr::build(N, observed_[t - 1]);
      std::vector<Dyad> held_pairs;
      held_pairs.reserve(held.size());
      for (const auto& hd : held) held_pairs.push_back(hd.dyad());
      held_partners_[t - 1] = Csr::build(N, held_pairs);
    }
  }

  explicit TrainView(std::shared_ptr<const DynamicNetwork> net) : TrainView(std::move(net), nullptr) {}

  const DynamicNetwork& network() const noexcept { return *net_; }
  const HoldoutMask& mask() const noexcept { return *mask_; }
  std::size_t num_nodes() const noexcept { return net_->num_nodes(); }
  std::size_t num_slices() const noexcept { return net_->num_slices(); }

  /// Observed links (b = 1, not held out) at slice t.
  std::span<const Dyad> observed_links(std::size_t t) const { return observed_.at(t - 1); }

  std::size_t total_observed_links() const noexcept {
    std::size_t total = 0;
    for (const auto& s : observed_) total += s.size();
    return total;
  }

  /// Observed-link neighbours of node n at slice t (both orientations).
  std::span<const node_t> neighbours(std::size_t t, node_t n) const { return adjacency_.at(t - 1).row(n); }

  /// Nodes m whose dyad with n is held out at slice t.
  std::span<const node_t> held_partners(std::size_t t, node_t n) const {
    return held_partners_.at(t - 1).row(n);
  }

  bool is_held_out(std::size_t t, node_t a, node_t b) const { return mask_->contains(t, a, b); }

  bool is_observed_link(std::size_t t, node_t a, node_t b) const {
    return net_->has_edge(t, a, b) && !is_held_out(t, a, b);
  }

 private:
  struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<node_t> items;

    std::span<const node_t> row(node_t n) const {
      return {items.data() + offsets.at(n), items.data() + offsets.at(n + 1)};
    }

    static Csr build(std::size_t num_nodes, const std::vector<Dyad>& pairs) {
      Csr c;
      c.offsets.assign(num_nodes + 1, 0);
      for (const auto& d : pairs) {
        ++c.offsets[d.n + 1];
        ++c.offsets[d.m + 1];
      }
      for (std::size_t i = 0; i < num_nodes; ++i) c.offsets[i + 1] += c.offsets[i];
      c.items.resize(c.offsets.back());
      std::vector<std::size_t> fill(c.offsets.begin(), c.offsets.end() - 1);
      for (const auto& d : pairs) {
        c.items[fill[d.n]++] = d.m;
        c.items[fill[d.m]++] = d.n;
      }
      for (std::size_t i = 0; i < num_nodes; ++i)
        std::sort(c.items.begin() + static_cast<std::ptrdiff_t>(c.offsets[i]),
                  c.items.begin() + static_cast<std::ptrdiff_t>(c.offsets[i + 1]));
      return c;
    }
  };

  std::shared_ptr<const DynamicNetwork> net_;
  std::shared_ptr<const HoldoutMask> mask_;
  std::vector<std::vector<Dyad>> observed_;
  std::vector<Csr> adjacency_;
  std::vector<Csr> held_partners_;
};

struct SparsityReport {
  std::vector<std::size_t> links_per_slice;
  std::size_t total_links = 0;
  /// total_links / (T * N(N-1)/2); 0 for an empty shape.
  double density = 0.0;
  /// Links per node summed over slices.
  std::vector<std::size_t> degrees;
};

inline SparsityReport sparsity_report(const DynamicNetwork& net) {
  SparsityReport r;
  r.degrees.assign(net.num_nodes(), 0);
  for (std::size_t t = 1; t <= net.num_slices(); ++t) {
    r.links_per_slice.push_back(net.num_links(t));
    r.total_links += net.num_links(t);
    for (const auto& d : net.edges(t)) {
      ++r.degrees[d.n];
      ++r.degrees[d.m];
    }
  }
  const double dyads = static_cast<double>(dyad_count(net.num_nodes())) * static_cast<double>(net.num_slices());
  r.density = dyads > 0.0 ? static_cast<double>(r.total_links) / dyads : 0.0;
  return r;
}

}  // namespace dpgm

#endif  // DPGM_NETWORK_HPP
