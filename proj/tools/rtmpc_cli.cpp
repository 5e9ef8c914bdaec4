// Command-line front end for the tube MPC toolkit.
//
//   rtmpc train       fit the residual model, write model.txt
//   rtmpc synthesize  tube/terminal design from a trained model, write synthesis.txt
//   rtmpc simulate    closed-loop slalom with the hybrid controller, write simulate.csv
//   rtmpc compare     hybrid vs linear-only closed loop, write CSVs and metrics
//
// All outputs are plain text with deterministic formatting: identical
// configs and seeds reproduce byte-identical files.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "rtmpc/bicycle.hpp"
#include "rtmpc/config.hpp"
#include "rtmpc/pipeline.hpp"
#include "rtmpc/synthesis.hpp"
#include "rtmpc/text_io.hpp"

namespace fs = std::filesystem;
using namespace rtmpc;

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> features;
  std::optional<std::string> tube_law;
  std::optional<std::string> out_dir;
  bool verbose = false;
};

ExperimentConfig resolve_config(const CliOptions& opt) {
  ExperimentConfig cfg = opt.config_path.empty()
                             ? ExperimentConfig::defaults()
                             : ExperimentConfig::load(KeyValueFile::parse_file(opt.config_path));
  if (opt.seed) {
    cfg.basis_seed = *opt.seed;
    cfg.train_seed = *opt.seed + 1;
    cfg.validation_seed = *opt.seed + 2;
  }
  if (opt.features) cfg.feature_count = *opt.features;
  if (opt.tube_law) cfg.tube_law = tube_law_from_string(*opt.tube_law);
  if (opt.out_dir) cfg.out_dir = *opt.out_dir;
  cfg.validate();
  return cfg;
}

void log(const CliOptions& opt, const std::string& msg) {
  if (opt.verbose) std::cout << msg << '\n';
}

fs::path ensure_out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir);
}

ModelArtifact load_model_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model artifact: " + path.string() +
                                    " (run 'train' first)");
  return load_artifact(is);
}

void write_text_file(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  writer(os);
}

int cmd_train(const CliOptions& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  const fs::path out = ensure_out_dir(cfg);
  log(opt, "training residual model: D = " + std::to_string(cfg.feature_count) + ", M = " +
               std::to_string(cfg.train_count));
  const ModelArtifact artifact = train_model(cfg);
  write_text_file(out / "model.txt", [&](std::ostream& os) { save_artifact(os, artifact); });
  std::cout << "d_max          " << io::fmt(artifact.model.d_max()) << '\n'
            << "d_max_linear   " << io::fmt(artifact.d_max_linear) << '\n'
            << "ratio          " << io::fmt(artifact.model.d_max() / artifact.d_max_linear)
            << '\n'
            << "model artifact " << (out / "model.txt").string() << '\n';
  return 0;
}

int cmd_synthesize(const CliOptions& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  const fs::path out = ensure_out_dir(cfg);
  const ModelArtifact artifact = load_model_file(out / "model.txt");
  log(opt, "tube/terminal synthesis, law = " + std::string(to_string(cfg.tube_law)));
  const SynthesisArtifacts synth =
      synthesize_from_config(cfg, artifact.model.baseline, artifact.model.d_max());
  write_text_file(out / "synthesis.txt", [&](std::ostream& os) { save_synthesis(os, synth); });
  std::cout << "rho       " << io::fmt(synth.tube.rho) << '\n'
            << "Xi        " << io::fmt(synth.tube.Xi) << '\n'
            << "s_inf     " << io::fmt(synth.tube.s_inf) << '\n'
            << "gamma1    " << io::fmt(synth.terminal.gamma1) << '\n'
            << "gamma2    " << io::fmt(synth.terminal.gamma2) << '\n'
            << "synthesis " << (out / "synthesis.txt").string() << '\n';
  return 0;
}

// simulate.csv columns: t, e_y, e_psi, delta, tube, solve_ms, status, fallback
void write_single_trace_csv(std::ostream& os, const bicycle::ClosedLoopTrace& t) {
  os << "t,e_y,e_psi,delta,tube,solve_ms,status,fallback\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << io::fmt(t.time[i]) << ',' << io::fmt(t.e_y[i]) << ',' << io::fmt(t.e_psi[i]) << ','
       << io::fmt(t.delta[i]) << ',' << io::fmt(t.tube_size[i]) << ','
       << io::fmt(t.solve_ms[i]) << ',' << to_string(t.status[i]) << ','
       << (t.fallback[i] ? 1 : 0) << '\n';
  }
}

int cmd_simulate(const CliOptions& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  const fs::path out = ensure_out_dir(cfg);
  const ModelArtifact artifact = load_model_file(out / "model.txt");
  const SynthesisArtifacts synth =
      synthesize_from_config(cfg, artifact.model.baseline, artifact.model.d_max());
  const ConstraintSet constraints = ConstraintSet::box(cfg.state_bound, cfg.input_bound);
  bicycle::RunOptions run;
  run.horizon = cfg.horizon;
  run.Q = cfg.Q;
  run.R = cfg.R;
  run.law = cfg.tube_law;
  log(opt, "closed-loop slalom, " +
               std::to_string(static_cast<int>(std::ceil(cfg.scenario.duration / cfg.plant.dt))) +
               " steps");
  const bicycle::ClosedLoopTrace trace = bicycle::run_closed_loop(
      artifact.model, cfg.plant, cfg.scenario, constraints, synth, run, "hybrid");
  write_text_file(out / "simulate.csv",
                  [&](std::ostream& os) { write_single_trace_csv(os, trace); });
  const int violations = bicycle::count_violations(trace);
  std::cout << "steps      " << trace.size() << '\n'
            << "violations " << violations << '\n'
            << "trace      " << (out / "simulate.csv").string() << '\n';
  return violations == 0 ? 0 : 1;
}

int cmd_compare(const CliOptions& opt) {
  const ExperimentConfig cfg = resolve_config(opt);
  const fs::path out = ensure_out_dir(cfg);

  ModelArtifact artifact;
  if (fs::exists(out / "model.txt")) {
    log(opt, "reusing " + (out / "model.txt").string());
    artifact = load_model_file(out / "model.txt");
  } else {
    log(opt, "no model artifact found; training first");
    artifact = train_model(cfg);
    write_text_file(out / "model.txt", [&](std::ostream& os) { save_artifact(os, artifact); });
  }

  const CompareResult result = run_compare(cfg, artifact);
  write_text_file(out / "bicycle_results.csv", [&](std::ostream& os) {
    bicycle::write_results_csv(os, result.rff, result.lin);
  });
  write_text_file(out / "bicycle_control.csv", [&](std::ostream& os) {
    bicycle::write_control_csv(os, result.rff, result.lin);
  });

  const bicycle::Metrics& m = result.metrics;
  auto print_metrics = [&](std::ostream& os) {
    os << "metric            hybrid      linear      ratio\n"
       << "d_max             " << io::fmt(artifact.model.d_max()) << ' '
       << io::fmt(artifact.d_max_linear) << ' ' << io::fmt(m.d_max_ratio) << '\n'
       << "mean_tube_size    -           -           " << io::fmt(m.tube_ratio) << '\n'
       << "mean_abs_e_y      -           -           " << io::fmt(m.e_y_ratio) << '\n'
       << "mean_abs_e_psi    -           -           " << io::fmt(m.e_psi_ratio) << '\n'
       << "violations        " << m.violations_rff << "           " << m.violations_lin << '\n'
       << "mean_solve_ms     " << io::fmt(m.mean_solve_ms_rff) << ' '
       << io::fmt(m.mean_solve_ms_lin) << '\n'
       << "max_solve_ms      " << io::fmt(m.max_solve_ms_rff) << ' '
       << io::fmt(m.max_solve_ms_lin) << '\n';
  };
  write_text_file(out / "metrics.txt", print_metrics);
  print_metrics(std::cout);
  std::cout << "results " << (out / "bicycle_results.csv").string() << '\n'
            << "control " << (out / "bicycle_control.csv").string() << '\n';
  return (m.violations_rff == 0 && m.violations_lin == 0) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tube MPC with learned residual models: kinematic bicycle case study"};
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("--config", opt.config_path, "key = value configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "base RNG seed (basis; train/validation derive from it)");
  app.add_option("--features", opt.features, "random feature count D")
      ->check(CLI::PositiveNumber);
  app.add_option("--tube-law", opt.tube_law, "tube propagation law")
      ->check(CLI::IsMember({"radius", "paper"}));
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_flag("--verbose", opt.verbose, "progress logging");

  auto* train = app.add_subcommand("train", "fit the residual model and its error bound");
  auto* synth = app.add_subcommand("synthesize", "tube and terminal-set design");
  auto* sim = app.add_subcommand("simulate", "closed-loop slalom with the hybrid controller");
  auto* cmp = app.add_subcommand("compare", "hybrid vs linear-only closed loop");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(opt);
    if (synth->parsed()) return cmd_synthesize(opt);
    if (sim->parsed()) return cmd_simulate(opt);
    if (cmp->parsed()) return cmd_compare(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
