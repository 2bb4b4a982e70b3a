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


#ifndef DPGM_IO_HPP
#define DPGM_IO_HPP

// Persistence: model state ("dpgm-state/1" JSON), run reports and the
// ground-truth label table of the split-merge generator.

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpgm/error.hpp"
#include "dpgm/gibbs.hpp"
#include "dpgm/model.hpp"

namespace dpgm {

inline constexpr const char* kStateFormat = "dpgm-state/1";
inline constexpr const char* kReportFormat = "dpgm-report/1";

using json = nlohmann::ordered_json;

inline json hyper_to_json(const HyperParams& hp) {
  return json{{"K", hp.K},   {"tau", hp.tau}, {"g0", hp.g0}, {"h0", hp.h0},
              {"a0", hp.a0}, {"b0", hp.b0},   {"e0", hp.e0}, {"f0", hp.f0}};
}

inline HyperParams hyper_from_json(const json& j) {
  HyperParams hp;
  hp.K = j.at("K").get<std::size_t>();
  hp.tau = j.at("tau").get<double>();
  hp.g0 = j.at("g0").get<double>();
  hp.h0 = j.at("h0").get<double>();
  hp.a0 = j.at("a0").get<double>();
  hp.b0 = j.at("b0").get<double>();
  hp.e0 = j.at("e0").get<double>();
  hp.f0 = j.at("f0").get<double>();
  return hp;
}

inline json state_to_json(const ModelState& s, const HyperParams& hp) {
  const auto lam = s.lambda.packed();
  return json{{"format", kStateFormat},
              {"N", s.N},
              {"T", s.T},
              {"K", s.K},
              {"hyper", hyper_to_json(hp)},
              {"gamma0", s.gamma0},
              {"xi", s.xi},
              {"beta", s.beta},
              {"c0", s.c0},
              {"r", s.r},
              {"lambda_upper", std::vector<double>(lam.begin(), lam.end())},
              {"phi", s.phi}};
}

struct StoredState {
  ModelState state;
  HyperParams hyper;
};

inline StoredState state_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kStateFormat)
      throw ParseError("unsupported state format '" + j.at("format").get<std::string>() + "'");
    StoredState out;
    out.hyper = hyper_from_json(j.at("hyper"));
    ModelState s(j.at("N").get<std::size_t>(), j.at("T").get<std::size_t>(), j.at("K").get<std::size_t>());
    s.gamma0 = j.at("gamma0").get<double>();
    s.xi = j.at("xi").get<double>();
    s.beta = j.at("beta").get<double>();
    s.c0 = j.at("c0").get<double>();
    auto r = j.at("r").get<std::vector<double>>();
    auto lam = j.at("lambda_upper").get<std::vector<double>>();
    auto phi = j.at("phi").get<std::vector<double>>();
    if (r.size() != s.r.size() || lam.size() != s.lambda.packed().size() || phi.size() != s.phi.size())
      throw ParseError("state arrays do not match N, T, K");
    s.r = std::move(r);
    std::copy(lam.begin(), lam.end(), s.lambda.packed().begin());
    s.phi = std::move(phi);
    s.validate();
    out.state = std::move(s);
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed state document: ") + e.what());
  } catch (const NumericalFault& e) {
    throw ParseError(std::string("invalid state values: ") + e.what());
  }
}

inline void write_state(std::ostream& out, const ModelState& s, const HyperParams& hp) {
  out << state_to_json(s, hp).dump(1) << '\n';
}

inline StoredState read_state(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("state is not valid JSON: ") + e.what());
  }
  return state_from_json(j);
}

inline json trace_to_json(const std::vector<SweepRecord>& trace) {
  json rows = json::array();
  for (const auto& r : trace)
    rows.push_back(json{{"sweep", r.sweep},
                        {"gamma0", r.gamma0},
                        {"xi", r.xi},
                        {"beta", r.beta},
                        {"c0", r.c0},
                        {"sum_r", r.sum_r},
                        {"effective_k", r.effective_k},
                        {"train_loglik", r.train_loglik},
                        {"latent_total", r.latent_total},
                        {"clamp_events", r.clamp_events}});
  return rows;
}

inline json times_to_json(const PhaseTimes& t) {
  return json{{"latent", t.latent},          {"theta", t.theta},   {"group", t.group},
              {"memberships", t.memberships}, {"hypers", t.hypers}, {"collect", t.collect},
              {"total", t.total()}};
}

/// Labels table: "t n label" with a '#' header.
inline void write_labels(std::ostream& out, const std::vector<std::vector<int>>& labels) {
  out << "# t\tn\tlabel\n";
  for (std::size_t t = 0; t < labels.size(); ++t)
    for (std::size_t n = 0; n < labels[t].size(); ++n) out << t + 1 << '\t' << n << '\t' << labels[t][n] << '\n';
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace dpgm

#endif  // DPGM_IO_HPP
