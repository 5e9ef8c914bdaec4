#pragma once

#include <string>
#include <utility>

#include "rtmpc/bicycle.hpp"
#include "rtmpc/config.hpp"
#include "rtmpc/model.hpp"
#include "rtmpc/synthesis.hpp"

namespace rtmpc {

// Resolves the kernel length scale: explicit value, or the median pairwise
// distance over the first 1000 training inputs.
inline double resolve_length_scale(const ExperimentConfig& cfg, const ResidualDataset& train) {
  if (cfg.length_scale != "median") return std::stod(cfg.length_scale);
  const Eigen::Index count = std::min<Eigen::Index>(1000, train.inputs.rows());
  return median_length_scale(train.inputs.topRows(count));
}

// Full offline learning pass: dataset, basis, ridge fit, and both error
// bounds (with and without the learned residual).
inline ModelArtifact train_model(const ExperimentConfig& cfg) {
  const LinearBaseline baseline = bicycle::linearize(cfg.plant);
  const DynamicsOracle oracle = bicycle::training_oracle(cfg.plant);
  const ResidualDataset train =
      generate_dataset(oracle, baseline, cfg.domain, cfg.train_count, cfg.train_seed);

  ResidualModel residual;
  residual.basis = sample_basis(cfg.domain.state_dim() + cfg.domain.input_dim(),
                                cfg.feature_count, resolve_length_scale(cfg, train),
                                cfg.basis_seed);
  residual.weights = fit_ridge(train, residual.basis, cfg.lambda);
  residual.lambda = cfg.lambda;
  residual.beta = cfg.beta;
  residual.validation_count = cfg.validation_count;
  residual.d_max = quantify_error(residual, oracle, baseline, cfg.domain,
                                  cfg.validation_count, cfg.beta, cfg.validation_seed);

  // Linear-only bound over the same validation distribution: W = 0.
  ResidualModel zero = residual;
  zero.weights.setZero();
  const double d_max_linear = quantify_error(zero, oracle, baseline, cfg.domain,
                                             cfg.validation_count, cfg.beta,
                                             cfg.validation_seed);

  ModelArtifact artifact;
  artifact.model.baseline = baseline;
  artifact.model.residual = std::move(residual);
  artifact.domain = cfg.domain;
  artifact.train_seed = cfg.train_seed;
  artifact.validation_seed = cfg.validation_seed;
  artifact.d_max_linear = d_max_linear;
  return artifact;
}

inline SynthesisArtifacts synthesize_from_config(const ExperimentConfig& cfg,
                                                 const LinearBaseline& baseline,
                                                 double d_max) {
  const ConstraintSet constraints = ConstraintSet::box(cfg.state_bound, cfg.input_bound);
  return synthesize(baseline.A, baseline.B, cfg.Q, cfg.R, constraints, d_max, cfg.tube_law);
}

struct CompareResult {
  bicycle::ClosedLoopTrace rff;
  bicycle::ClosedLoopTrace lin;
  bicycle::Metrics metrics;
  SynthesisArtifacts synth_rff;
  SynthesisArtifacts synth_lin;
};

// Runs both controllers (hybrid and linear-only) on the same scenario.
inline CompareResult run_compare(const ExperimentConfig& cfg, const ModelArtifact& artifact) {
  const ConstraintSet constraints = ConstraintSet::box(cfg.state_bound, cfg.input_bound);

  CompareResult result;
  result.synth_rff = synthesize_from_config(cfg, artifact.model.baseline,
                                            artifact.model.d_max());
  result.synth_lin =
      synthesize_from_config(cfg, artifact.model.baseline, artifact.d_max_linear);

  bicycle::RunOptions opts;
  opts.horizon = cfg.horizon;
  opts.Q = cfg.Q;
  opts.R = cfg.R;
  opts.law = cfg.tube_law;

  HybridModel linear_only;
  linear_only.baseline = artifact.model.baseline;

  result.rff = bicycle::run_closed_loop(artifact.model, cfg.plant, cfg.scenario, constraints,
                                        result.synth_rff, opts, "rff");
  result.lin = bicycle::run_closed_loop(linear_only, cfg.plant, cfg.scenario, constraints,
                                        result.synth_lin, opts, "linear");
  result.metrics = bicycle::compute_metrics(result.rff, result.lin, artifact.model.d_max(),
                                            artifact.d_max_linear);
  return result;
}

}  // namespace rtmpc
