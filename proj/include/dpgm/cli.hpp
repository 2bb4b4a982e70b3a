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


#ifndef DPGM_CLI_HPP
#define DPGM_CLI_HPP

// Command-line front end with one subcommand per stage of a run.
//
//   dpgm simulate --mode split-merge|prior|planted -o net.tsv [--seed S]
//   dpgm fit net.tsv [--engine batch|online] [--holdout 0.2] [--out-dir DIR]
//   dpgm eval DIR/predictions.tsv [--state DIR/state.json]
//
// Every subcommand accepts --config FILE holding flat "key=value" lines whose
// keys are long option names. Command-line flags win over the file, the file
// wins over built-in defaults.

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpgm/error.hpp"
#include "dpgm/eval.hpp"
#include "dpgm/gibbs.hpp"
#include "dpgm/io.hpp"
#include "dpgm/model.hpp"
#include "dpgm/network.hpp"
#include "dpgm/online.hpp"

#ifndef DPGM_VERSION
#define DPGM_VERSION "0.1.0"
#endif

namespace dpgm::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kParse = 3,
  kNumerical = 4,
  kUndefinedMetric = 5,
};

inline std::string version_string() {
  return std::string("dpgm ") + DPGM_VERSION + " (state format " + kStateFormat + ", report format " +
         kReportFormat + ")";
}

/// Reads "key=value" lines ('#' comments, blank lines allowed) into
/// "--key=value" arguments.
inline std::vector<std::string> config_arguments(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("config: expected key=value", number);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

/// Moves config-file arguments in front of the command-line ones so that
/// the last occurrence (the command line) wins.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  std::vector<std::string> out{args[0], args[1]};
  for (auto& a : config_arguments(*path)) out.push_back(std::move(a));
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

struct SimulateOptions {
  std::string mode = "split-merge";
  std::string output;
  std::string state_out;
  std::string labels_out;
  std::uint64_t seed = 0;
  std::size_t nodes = 0;   // 0: mode default
  std::size_t slices = 0;  // 0: mode default
  std::size_t groups = 0;  // 0: mode default
  double tau = 1.0, g0 = 0.1, h0 = 0.1;
  double p_in = 0.8, p_out = 0.05;
};

struct FitOptions {
  std::string input;
  std::string out_dir = ".";
  std::string engine = "batch";
  std::uint64_t seed = 0;
  std::size_t groups = 0;  // 0: N / 2
  double tau = 1.0, g0 = 0.1, h0 = 0.1;
  std::size_t burn_in = 2000, collect = 1000, thin = 1;
  double holdout = 0.2;
  double kappa = 0.5, i0 = 100.0;
  std::size_t batch_nodes = 0;  // 0: N / 4
  std::size_t workers = 1;
  std::string gamma0_update = "exact";
  bool independent_slices = false;
  bool no_trace = false;
  bool allow_self_loops = false;
};

struct EvalOptions {
  std::string predictions;
  std::string state;
  double eps = 1e-2;
};

inline std::string format_metric(double v) { return json(v).dump(); }

inline int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  RngStream rng(o.seed, 11);
  const std::string state_path = o.state_out.empty() ? o.output + ".state.json" : o.state_out;
  const std::string labels_path = o.labels_out.empty() ? o.output + ".labels.tsv" : o.labels_out;
  if (o.mode == "split-merge") {
    const auto data = generate_split_merge(rng, SplitMergeOptions{o.p_in, o.p_out});
    auto edges = open_output(o.output);
    write_edge_list(edges, data.network);
    auto labels = open_output(labels_path);
    write_labels(labels, data.labels);
    out << "wrote " << o.output << " (" << data.network.num_nodes() << " nodes, " << data.network.num_slices()
        << " slices, " << data.network.total_links() << " links) and " << labels_path << '\n';
    return kOk;
  }
  HyperParams hp;
  ModelState truth;
  if (o.mode == "prior") {
    const std::size_t N = o.nodes ? o.nodes : 10;
    hp.K = o.groups ? o.groups : 5;
    hp.tau = o.tau;
    hp.g0 = o.g0;
    hp.h0 = o.h0;
    truth = init_state(hp, N, o.slices ? o.slices : 3, rng);
  } else if (o.mode == "planted") {
    PlantedOptions po;
    po.groups = o.groups ? o.groups : po.groups;
    truth = planted_state(o.nodes ? o.nodes : 40, o.slices ? o.slices : 5, po, rng);
    hp.K = po.groups;
  } else {
    throw InvalidParameter("unknown simulate mode '" + o.mode + "'");
  }
  const DynamicNetwork net = simulate_network(truth, rng);
  auto edges = open_output(o.output);
  write_edge_list(edges, net);
  auto state = open_output(state_path);
  write_state(state, truth, hp);
  out << "wrote " << o.output << " (" << net.num_nodes() << " nodes, " << net.num_slices() << " slices, "
      << net.total_links() << " links) and " << state_path << '\n';
  return kOk;
}

inline int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
  auto in = open_input(o.input);
  EdgeListFormat fmt;
  fmt.strict = !o.allow_self_loops;
  auto net = std::make_shared<const DynamicNetwork>(load_edge_list(in, fmt));
  const std::size_t N = net->num_nodes(), T = net->num_slices();

  HyperParams hp;
  hp.K = o.groups ? o.groups : HyperParams::default_truncation(N);
  hp.tau = o.tau;
  hp.g0 = o.g0;
  hp.h0 = o.h0;
  hp.validate();

  GibbsConfig cfg;
  cfg.burn_in = o.burn_in;
  cfg.collect = o.collect;
  cfg.thin = o.thin;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  cfg.record_trace = !o.no_trace;
  cfg.independent_slices = o.independent_slices;
  if (o.gamma0_update == "exact")
    cfg.gamma0_update = Gamma0Update::exact;
  else if (o.gamma0_update == "crt")
    cfg.gamma0_update = Gamma0Update::crt;
  else
    throw InvalidParameter("gamma0-update must be 'exact' or 'crt'");
  cfg.record_heldout = o.holdout > 0.0;
  cfg.validate();
  if (o.engine != "batch" && o.engine != "online") throw InvalidParameter("engine must be 'batch' or 'online'");
  if (o.holdout < 0.0 || o.holdout >= 1.0) throw InvalidParameter("holdout must lie in [0, 1)");

  std::shared_ptr<const HoldoutMask> mask;
  if (o.holdout > 0.0) {
    RngStream hold_rng(o.seed, 7);
    mask = std::make_shared<const HoldoutMask>(make_holdout(*net, o.holdout, hold_rng));
  }
  const TrainView train(net, mask);

  OnlineConfig ocfg;
  ocfg.kappa = o.kappa;
  ocfg.i0 = o.i0;
  ocfg.batch_nodes = o.batch_nodes;
  ocfg.chain = cfg;
  ocfg.validate(N);

  json report{{"format", kReportFormat}, {"version", DPGM_VERSION}, {"command", "fit"}};
  report["config"] = json{{"input", o.input},
                          {"engine", o.engine},
                          {"seed", o.seed},
                          {"hyper", hyper_to_json(hp)},
                          {"burn_in", cfg.burn_in},
                          {"collect", cfg.collect},
                          {"thin", cfg.thin},
                          {"holdout", o.holdout},
                          {"workers", cfg.workers},
                          {"gamma0_update", o.gamma0_update},
                          {"independent_slices", cfg.independent_slices},
                          {"effective_eps", cfg.effective_eps}};
  if (o.engine == "online") {
    report["config"]["kappa"] = ocfg.kappa;
    report["config"]["i0"] = ocfg.i0;
    report["config"]["batch_nodes"] = ocfg.batch_size(N);
  }
  report["data"] = json{{"nodes", N},
                        {"slices", T},
                        {"links", net->total_links()},
                        {"heldout_dyads", mask ? mask->size() : 0},
                        {"observed_links", train.total_observed_links()}};

  PosteriorSummary summary;
  if (o.engine == "batch") {
    summary = run_chain(train, hp, cfg);
  } else {
    for (const auto& w : ocfg.warnings()) err << "warning: " << w << '\n';
    OnlineSummary online = run_online(train, hp, ocfg, std::nullopt, true);
    report["online"] = json{{"rho", online.rho}, {"batches", online.batches}};
    summary = std::move(online.posterior);
  }

  namespace fs = std::filesystem;
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  {
    auto f = open_output((dir / "state.json").string());
    write_state(f, summary.final_state, hp);
  }
  {
    auto f = open_output((dir / "association.tsv").string());
    write_association(f, summary.association);
  }
  json metrics{{"samples", summary.samples},
               {"sweeps", summary.sweeps},
               {"gamma0_mean", summary.gamma0_mean},
               {"effective_k_mean", summary.effective_k_mean},
               {"effective_groups", effective_groups(summary.association, cfg.effective_eps)},
               {"train_loglik_mean", summary.train_loglik_mean},
               {"clamp_events", summary.clamp_events}};
  if (mask) {
    auto f = open_output((dir / "predictions.tsv").string());
    write_scored_dyads(f, summary.heldout);
    try {
      metrics["auc_roc"] = auc_roc(summary.heldout);
      metrics["auc_pr"] = auc_pr(summary.heldout);
    } catch (const UndefinedMetric& e) {
      err << "warning: " << e.what() << '\n';
    }
  }
  report["metrics"] = metrics;
  report["trace"] = trace_to_json(summary.trace);
  report["timing"] = times_to_json(summary.times);
  {
    auto f = open_output((dir / "report.json").string());
    f << report.dump(1) << '\n';
  }
  out << "fit: " << o.engine << ", " << summary.sweeps << " sweeps, K=" << hp.K << ", effective K "
      << format_metric(summary.effective_k_mean);
  if (metrics.contains("auc_roc")) out << ", held-out AUC-ROC " << format_metric(metrics["auc_roc"].get<double>());
  out << "\nwrote " << (dir / "report.json").string() << '\n';
  return kOk;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  auto in = open_input(o.predictions);
  const auto rows = read_scored_dyads(in);
  const double roc = auc_roc(rows);
  const double pr = auc_pr(rows);
  out << "dyads\t" << rows.size() << '\n';
  out << "auc_roc\t" << format_metric(roc) << '\n';
  out << "auc_pr\t" << format_metric(pr) << '\n';
  std::string state_path = o.state;
  if (state_path.empty()) {
    const auto sibling = std::filesystem::path(o.predictions).parent_path() / "state.json";
    if (std::filesystem::exists(sibling)) state_path = sibling.string();
  }
  if (!state_path.empty()) {
    auto sin = open_input(state_path);
    const auto stored = read_state(sin);
    out << "effective_k\t" << effective_group_count(stored.state, o.eps) << '\n';
  }
  return kOk;
}

/// Parses and runs one command; returns the process exit code.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic Poisson gamma membership model", "dpgm"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SimulateOptions so;
  FitOptions fo;
  EvalOptions eo;
  std::string unused_config;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dynamic network");
  sim->add_option("--mode", so.mode, "split-merge, prior or planted")
      ->check(CLI::IsMember({"split-merge", "prior", "planted"}))
      ->capture_default_str();
  sim->add_option("-o,--output", so.output, "Edge-list output path")->required();
  sim->add_option("--state-out", so.state_out, "Ground-truth state path (default: OUTPUT.state.json)");
  sim->add_option("--labels-out", so.labels_out, "Split-merge labels path (default: OUTPUT.labels.tsv)");
  sim->add_option("--seed", so.seed)->capture_default_str();
  sim->add_option("--nodes", so.nodes, "Node count (prior: 10, planted: 40)");
  sim->add_option("--slices", so.slices, "Slice count (prior: 3, planted: 5)");
  sim->add_option("--groups", so.groups, "Group count (prior: 5, planted: 3)");
  sim->add_option("--tau", so.tau)->capture_default_str();
  sim->add_option("--g0", so.g0)->capture_default_str();
  sim->add_option("--h0", so.h0)->capture_default_str();
  sim->add_option("--p-in", so.p_in)->capture_default_str();
  sim->add_option("--p-out", so.p_out)->capture_default_str();
  sim->add_option("--config", unused_config, "key=value defaults file");

  auto* fit = app.add_subcommand("fit", "Fit the model to an edge list");
  fit->add_option("input", fo.input, "Edge-list path")->required();
  fit->add_option("--out-dir", fo.out_dir)->capture_default_str();
  fit->add_option("--engine", fo.engine)->check(CLI::IsMember({"batch", "online"}))->capture_default_str();
  fit->add_option("--seed", fo.seed)->capture_default_str();
  fit->add_option("-K,--groups", fo.groups, "Truncation level (default: N/2)");
  fit->add_option("--tau", fo.tau)->capture_default_str();
  fit->add_option("--g0", fo.g0)->capture_default_str();
  fit->add_option("--h0", fo.h0)->capture_default_str();
  fit->add_option("--burn-in", fo.burn_in)->capture_default_str();
  fit->add_option("--collect", fo.collect)->capture_default_str();
  fit->add_option("--thin", fo.thin)->capture_default_str();
  fit->add_option("--holdout", fo.holdout, "Held-out dyad fraction per slice; 0 disables")->capture_default_str();
  fit->add_option("--kappa", fo.kappa)->capture_default_str();
  fit->add_option("--i0", fo.i0)->capture_default_str();
  fit->add_option("--batch-nodes", fo.batch_nodes, "Online mini-batch size (default: N/4)");
  fit->add_option("--workers", fo.workers)->capture_default_str();
  fit->add_option("--gamma0-update", fo.gamma0_update)->check(CLI::IsMember({"exact", "crt"}))->capture_default_str();
  fit->add_flag("--independent-slices", fo.independent_slices, "Replace the gamma chain by per-slice priors");
  fit->add_flag("--no-trace", fo.no_trace, "Omit the per-sweep trace from the report");
  fit->add_flag("--allow-self-loops", fo.allow_self_loops, "Skip self-loops instead of rejecting them");
  fit->add_option("--config", unused_config, "key=value defaults file");

  auto* ev = app.add_subcommand("eval", "Score a predictions table");
  ev->add_option("predictions", eo.predictions, "predictions.tsv from fit")->required();
  ev->add_option("--state", eo.state, "State file for the effective-K line (default: sibling state.json)");
  ev->add_option("--eps", eo.eps)->capture_default_str();
  ev->add_option("--config", unused_config, "key=value defaults file");

  try {
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "dpgm: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "dpgm: " << e.what() << '\n';
    return kParse;
  } catch (const Error& e) {
    err << "dpgm: " << e.what() << '\n';
    return kFailure;
  }

  try {
    if (*sim) return cmd_simulate(so, out);
    if (*fit) return cmd_fit(fo, out, err);
    return cmd_eval(eo, out);
  } catch (const InvalidParameter& e) {
    err << "dpgm: invalid parameter: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "dpgm: parse error: " << e.what() << '\n';
    return kParse;
  } catch (const RangeError& e) {
    err << "dpgm: range error: " << e.what() << '\n';
    return kParse;
  } catch (const NumericalFault& e) {
    err << "dpgm: numerical fault: " << e.what() << '\n';
    return kNumerical;
  } catch (const UndefinedMetric& e) {
    err << "dpgm: undefined metric: " << e.what() << '\n';
    return kUndefinedMetric;
  } catch (const std::exception& e) {
    err << "dpgm: " << e.what() << '\n';
    return kFailure;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace dpgm::cli

#endif  // DPGM_CLI_HPP
