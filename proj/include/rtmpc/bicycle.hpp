#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtmpc/controller.hpp"
#include "rtmpc/model.hpp"
#include "rtmpc/rng.hpp"
#include "rtmpc/synthesis.hpp"
#include "rtmpc/text_io.hpp"

namespace rtmpc::bicycle {

// Kinematic bicycle in path coordinates: state (e_y, e_psi), input delta.
struct BicycleParams {
  double speed = 5.0;       // v  [m/s]
  double wheelbase = 2.5;   // L  [m]
  double dt = 0.033;        // sampling period [s]
  // Curvature bound. Holding a curve needs roughly atan(L * kappa) of
  // steering; 0.1 keeps the scenario peak near 0.25 rad, inside the
  // |delta| <= 0.5 constraint even after tube tightening.
  double kappa_max = 0.1;   // [1/m]

  void validate() const {
    if (speed <= 0 || wheelbase <= 0 || dt <= 0 || kappa_max <= 0)
      throw std::invalid_argument("BicycleParams: all parameters must be positive");
    if (speed * dt >= wheelbase)
      throw std::invalid_argument("BicycleParams: require v*dt < L");
  }
};

// e_y+   = e_y + v sin(e_psi) dt
// e_psi+ = e_psi + (v/L) tan(delta) dt - v kappa dt
inline Eigen::Vector2d plant_step(const BicycleParams& p, const Eigen::Vector2d& state,
                                  double delta, double kappa) {
  if (std::abs(delta) >= std::numbers::pi / 2.0)
    throw std::domain_error("plant_step: |delta| must be < pi/2");
  Eigen::Vector2d next;
  next(0) = state(0) + p.speed * std::sin(state(1)) * p.dt;
  next(1) = state(1) + p.speed / p.wheelbase * std::tan(delta) * p.dt -
            p.speed * kappa * p.dt;
  return next;
}

// A = [[1, v dt],[0, 1]], B = [0; (v/L) dt]; curvature enters as the known
// affine offset (0, -v kappa dt).
inline LinearBaseline linearize(const BicycleParams& p) {
  Eigen::MatrixXd A(2, 2), B(2, 1);
  A << 1.0, p.speed * p.dt, 0.0, 1.0;
  B << 0.0, p.speed / p.wheelbase * p.dt;
  return LinearBaseline::state_feedback(std::move(A), std::move(B));
}

inline Eigen::Vector2d curvature_offset(const BicycleParams& p, double kappa) {
  return {0.0, -p.speed * kappa * p.dt};
}

// Exact residual of the linearization: depends only on (e_psi, delta).
inline Eigen::Vector2d residual_oracle(const BicycleParams& p, double e_psi, double delta) {
  if (std::abs(delta) >= std::numbers::pi / 2.0)
    throw std::domain_error("residual_oracle: |delta| must be < pi/2");
  return {p.speed * (std::sin(e_psi) - e_psi) * p.dt,
          p.speed / p.wheelbase * (std::tan(delta) - delta) * p.dt};
}

// True-dynamics oracle for residual training; kappa is a known exogenous
// offset excluded from the learned input, so training uses kappa = 0.
inline DynamicsOracle training_oracle(const BicycleParams& p) {
  return [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return plant_step(p, x.head<2>(), u(0), 0.0);
  };
}

struct ScenarioConfig {
  double duration = 12.0;       // T_f [s]
  double slalom_period = 3.0;   // T_s [s]
  double amplitude_scale = 0.9; // envelope fraction of kappa_max
  double noise_bound = 0.0;     // uniform process-noise bound (experimental)
  std::uint64_t noise_seed = 0;

  void validate() const {
    if (duration <= 0 || slalom_period <= 0)
      throw std::invalid_argument("ScenarioConfig: durations must be positive");
    if (amplitude_scale <= 0 || amplitude_scale >= 1.0)
      throw std::invalid_argument("ScenarioConfig: amplitude_scale must be in (0,1)");
  }
};

// Growing-amplitude slalom: kappa_k = a kappa_max (t/T_f) sin(2 pi t / T_s).
inline double reference_curvature(const BicycleParams& p, const ScenarioConfig& sc, int k) {
  const double t = k * p.dt;
  if (k < 0 || t > sc.duration + 1e-12)
    throw std::out_of_range("reference_curvature: step index outside scenario");
  return sc.amplitude_scale * p.kappa_max * (t / sc.duration) *
         std::sin(2.0 * std::numbers::pi * t / sc.slalom_period);
}

struct ClosedLoopTrace {
  std::string label;
  std::vector<double> time, e_y, e_psi, delta, tube_size, solve_ms;
  std::vector<SolveStatus> status;
  std::vector<bool> fallback;
  std::vector<Eigen::Vector2d> nominal_state;

  std::size_t size() const { return time.size(); }
};

// MPC constraint box of the case study: |e_y| <= 1, |e_psi| <= 0.2,
// |delta| <= 0.5.
inline ConstraintSet default_constraints() {
  Eigen::VectorXd xb(2), ub(1);
  xb << 1.0, 0.2;
  ub << 0.5;
  return ConstraintSet::box(xb, ub);
}

struct RunOptions {
  int horizon = 20;
  Eigen::MatrixXd Q = (Eigen::MatrixXd(2, 2) << 10.0, 0.0, 0.0, 10.0).finished();
  Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, 1.0);
  TubeLaw law = TubeLaw::kPaperSquared;
  SqpSettings sqp;
  Eigen::Vector2d initial_state = Eigen::Vector2d::Zero();
};

// Closed-loop simulation of the true plant under the tube MPC. The spec's
// offset sequence is refreshed every step with previewed curvature.
inline ClosedLoopTrace run_closed_loop(const HybridModel& model, const BicycleParams& params,
                                       const ScenarioConfig& scenario,
                                       const ConstraintSet& constraints,
                                       const SynthesisArtifacts& synth,
                                       const RunOptions& opts, const std::string& label) {
  params.validate();
  scenario.validate();
  const int steps = static_cast<int>(std::ceil(scenario.duration / params.dt));

  OcpSpec spec;
  spec.model = &model;
  spec.horizon = opts.horizon;
  spec.Q = opts.Q;
  spec.R = opts.R;
  spec.constraints = constraints;
  spec.tube = synth.tube;
  spec.terminal = synth.terminal;
  spec.law = opts.law;
  spec.offsets.assign(opts.horizon, Eigen::VectorXd::Zero(2));

  TubeMpcController controller(spec, opts.sqp);
  Rng noise_rng(scenario.noise_seed);

  ClosedLoopTrace trace;
  trace.label = label;
  Eigen::Vector2d x = opts.initial_state;
  for (int k = 0; k < steps; ++k) {
    // Curvature preview over the horizon; hold the last value past T_f.
    for (int t = 0; t < opts.horizon; ++t) {
      const int idx = std::min(k + t, steps - 1);
      controller.spec().offsets[t] =
          curvature_offset(params, reference_curvature(params, scenario, idx));
    }
    const StepRecord rec = controller.step(x);

    trace.time.push_back(k * params.dt);
    trace.e_y.push_back(x(0));
    trace.e_psi.push_back(x(1));
    trace.delta.push_back(rec.u(0));
    trace.tube_size.push_back(rec.s0);
    trace.solve_ms.push_back(rec.solve_ms);
    trace.status.push_back(rec.status);
    trace.fallback.push_back(rec.fallback);
    trace.nominal_state.push_back(rec.nominal_state.head<2>());

    x = plant_step(params, x, rec.u(0), reference_curvature(params, scenario, k));
    if (scenario.noise_bound > 0.0)
      for (int i = 0; i < 2; ++i)
        x(i) += noise_rng.uniform(-scenario.noise_bound, scenario.noise_bound);
    if (!x.allFinite())
      throw std::runtime_error("run_closed_loop: state diverged at step " + std::to_string(k));
  }
  return trace;
}

struct Metrics {
  double tube_ratio = 0.0;
  double e_y_ratio = 0.0;
  double e_psi_ratio = 0.0;
  int violations_rff = 0;
  int violations_lin = 0;
  double mean_solve_ms_rff = 0.0;
  double mean_solve_ms_lin = 0.0;
  double max_solve_ms_rff = 0.0;
  double max_solve_ms_lin = 0.0;
  double d_max_ratio = 0.0;
};

inline int count_violations(const ClosedLoopTrace& t) {
  int count = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::abs(t.e_y[i]) > 1.0 || std::abs(t.e_psi[i]) > 0.2 || std::abs(t.delta[i]) > 0.5)
      ++count;
  return count;
}

inline Metrics compute_metrics(const ClosedLoopTrace& rff, const ClosedLoopTrace& lin,
                               double d_max_rff, double d_max_lin) {
  if (rff.size() != lin.size())
    throw std::invalid_argument("compute_metrics: trace length mismatch");
  auto mean_abs = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s / static_cast<double>(v.size());
  };
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto vmax = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s = std::max(s, x);
    return s;
  };
  Metrics m;
  m.tube_ratio = mean(rff.tube_size) / mean(lin.tube_size);
  m.e_y_ratio = mean_abs(rff.e_y) / mean_abs(lin.e_y);
  m.e_psi_ratio = mean_abs(rff.e_psi) / mean_abs(lin.e_psi);
  m.violations_rff = count_violations(rff);
  m.violations_lin = count_violations(lin);
  m.mean_solve_ms_rff = mean(rff.solve_ms);
  m.mean_solve_ms_lin = mean(lin.solve_ms);
  m.max_solve_ms_rff = vmax(rff.solve_ms);
  m.max_solve_ms_lin = vmax(lin.solve_ms);
  m.d_max_ratio = d_max_lin > 0.0 ? d_max_rff / d_max_lin : 0.0;
  return m;
}

// bicycle_results.csv columns:
// t_rff, ey_rff, epsi_rff, tube_rff, t_lin, ey_lin, epsi_lin, tube_lin
inline void write_results_csv(std::ostream& os, const ClosedLoopTrace& rff,
                              const ClosedLoopTrace& lin) {
  os << "t_rff,ey_rff,epsi_rff,tube_rff,t_lin,ey_lin,epsi_lin,tube_lin\n";
  for (std::size_t i = 0; i < rff.size(); ++i) {
    os << io::fmt(rff.time[i]) << ',' << io::fmt(rff.e_y[i]) << ',' << io::fmt(rff.e_psi[i])
       << ',' << io::fmt(rff.tube_size[i]) << ',' << io::fmt(lin.time[i]) << ','
       << io::fmt(lin.e_y[i]) << ',' << io::fmt(lin.e_psi[i]) << ','
       << io::fmt(lin.tube_size[i]) << '\n';
  }
}

// bicycle_control.csv columns: t_rff, delta_rff, t_lin, delta_lin
inline void write_control_csv(std::ostream& os, const ClosedLoopTrace& rff,
                              const ClosedLoopTrace& lin) {
  os << "t_rff,delta_rff,t_lin,delta_lin\n";
  for (std::size_t i = 0; i < rff.size(); ++i) {
    os << io::fmt(rff.time[i]) << ',' << io::fmt(rff.delta[i]) << ',' << io::fmt(lin.time[i])
       << ',' << io::fmt(lin.delta[i]) << '\n';
  }
}

}  // namespace rtmpc::bicycle
