#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "rtmpc/ocp.hpp"
#include "rtmpc/synthesis.hpp"

namespace rtmpc {

// History carried between MPC updates for tube-size initialization:
// s_{0|k} = s_{1|k-1} + ||e_{0|k}||_P^2 - ||e_{1|k-1}||_P^2.
struct ControllerState {
  OcpSolution previous;
  Eigen::VectorXd predicted_error;  // e_{1|k-1} = x_hat_{1|k-1} - xi_{1|k-1}
  double predicted_error_p = 0.0;   // ||e_{1|k-1}||_P^2
  double tube_next = 0.0;           // s_{1|k-1}
  int step_index = 0;
};

struct StepRecord {
  int k = 0;
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  Eigen::VectorXd nominal_state;  // xi*_0
  Eigen::VectorXd nominal_input;  // v*_0
  double s0 = 0.0;                // sigma*_0^2
  double s1 = 0.0;                // sigma*_1^2
  double objective = 0.0;
  SolveStatus status = SolveStatus::kInfeasible;
  bool fallback = false;
  double solve_ms = 0.0;
};

// Paper tube-size initialization, clamped below at ||e_{0|k}||_P^2 so the
// tube always contains the current error; clamping is reported to the caller.
inline double initialize_tube(const ControllerState& state, const Eigen::MatrixXd& P,
                              const Eigen::VectorXd& x_measured,
                              const Eigen::VectorXd& nominal_candidate,
                              bool* clamped = nullptr) {
  if (state.step_index < 1)
    throw std::logic_error("initialize_tube: no history at k = 0 (cold start)");
  const Eigen::VectorXd e0 = x_measured - nominal_candidate;
  const double e0_p = e0.dot(P * e0);
  const double raw = state.tube_next + e0_p - state.predicted_error_p;
  if (clamped) *clamped = raw < e0_p;
  return std::max(raw, e0_p);
}

// Online receding-horizon loop: one OCP solve per step, applied input
// u_k = v*_0 + K (x_k - xi*_0), infeasibility fallback from the shifted
// previous plan.
class TubeMpcController {
 public:
  TubeMpcController(OcpSpec spec, SqpSettings sqp = {})
      : spec_(std::move(spec)), solver_(sqp) {
    spec_.validate();
  }

  const OcpSpec& spec() const { return spec_; }
  OcpSpec& spec() { return spec_; }
  const std::optional<ControllerState>& state() const { return state_; }
  void reset() { state_.reset(); }

  StepRecord step(const Eigen::VectorXd& x_measured) {
    StepRecord rec;
    rec.x = x_measured;
    rec.k = state_ ? state_->step_index : 0;

    TubeAnchor anchor;
    anchor.x_measured = x_measured;
    if (state_) {
      anchor.has_history = true;
      anchor.history_constant = state_->tube_next - state_->predicted_error_p;
    }

    OcpSolution sol = solver_.solve(spec_, anchor, state_ ? &state_->previous : nullptr);
    rec.status = sol.status;
    rec.solve_ms = sol.solve_ms;

    if (sol.status == SolveStatus::kInfeasible) {
      if (!state_)
        throw std::runtime_error("TubeMpcController: infeasible at k = 0 (fatal)");
      // One-step-shifted previous plan: u = v_{1|k-1} + K (x - xi_{1|k-1}).
      rec.fallback = true;
      const OcpSolution& prev = state_->previous;
      rec.nominal_state = prev.states.col(1);
      rec.nominal_input = prev.inputs.cols() > 1 ? prev.inputs.col(1) : prev.inputs.col(0);
      rec.u = rec.nominal_input + spec_.tube.K * (x_measured - rec.nominal_state);
      rec.s0 = prev.sigma(1) * prev.sigma(1);
      rec.s1 = prev.sigma.size() > 2 ? prev.sigma(2) * prev.sigma(2) : rec.s0;
      rec.objective = prev.objective;
      advance_state(shift(prev), x_measured, rec.u);
      return rec;
    }

    rec.nominal_state = sol.states.col(0);
    rec.nominal_input = sol.inputs.col(0);
    rec.u = rec.nominal_input + spec_.tube.K * (x_measured - rec.nominal_state);
    rec.s0 = sol.sigma(0) * sol.sigma(0);
    rec.s1 = sol.sigma(1) * sol.sigma(1);
    rec.objective = sol.objective;
    advance_state(sol, x_measured, rec.u);
    return rec;
  }

 private:
  OcpSpec spec_;
  SqpSolver solver_;
  std::optional<ControllerState> state_;

  // The controller cannot see the plant: e_{1|k} uses the hybrid model's
  // prediction of the next state.
  void advance_state(const OcpSolution& sol, const Eigen::VectorXd& x_measured,
                     const Eigen::VectorXd& u_applied) {
    ControllerState next;
    next.previous = sol;
    const Eigen::VectorXd x_pred =
        spec_.model->predict(x_measured, u_applied) + spec_.offsets[0];
    next.predicted_error = x_pred - sol.states.col(1);
    next.predicted_error_p = next.predicted_error.dot(spec_.tube.P * next.predicted_error);
    next.tube_next = sol.sigma(1) * sol.sigma(1);
    next.step_index = (state_ ? state_->step_index : 0) + 1;
    state_ = std::move(next);
  }

  static OcpSolution shift(const OcpSolution& prev) {
    OcpSolution s = prev;
    const Eigen::Index N = prev.inputs.cols();
    s.states.leftCols(N) = prev.states.rightCols(N);
    s.inputs.leftCols(N - 1) = prev.inputs.rightCols(N - 1);
    s.sigma.head(N) = prev.sigma.tail(N);
    return s;
  }
};

}  // namespace rtmpc
