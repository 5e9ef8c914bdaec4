#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rtmpc/bicycle.hpp"
#include "rtmpc/ocp.hpp"
#include "rtmpc/rng.hpp"
#include "rtmpc/synthesis.hpp"

#include "kkt_oracle.hpp"

using namespace rtmpc;

namespace {

struct Fixture {
  bicycle::BicycleParams params;
  HybridModel model;
  SynthesisArtifacts synth;
  OcpSpec spec;

  explicit Fixture(double d_max, int horizon = 5, TubeLaw law = TubeLaw::kRadius) {
    model.baseline = bicycle::linearize(params);
    const ConstraintSet constraints = bicycle::default_constraints();
    const Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(2, 2) * 10.0;
    const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(1, 1);
    synth = synthesize(model.baseline.A, model.baseline.B, Q, R, constraints, d_max, law);
    spec.model = &model;
    spec.horizon = horizon;
    spec.Q = Q;
    spec.R = R;
    spec.constraints = constraints;
    spec.tube = synth.tube;
    spec.terminal = synth.terminal;
    spec.law = law;
    spec.offsets.assign(horizon, Eigen::VectorXd::Zero(2));
  }
};

TubeAnchor anchor_at(const Eigen::Vector2d& x) {
  TubeAnchor a;
  a.x_measured = x;
  return a;
}

}  // namespace

TEST_CASE("origin is optimal for the unconstrained linear-quadratic case") {
  Fixture f(0.0, 1);
  f.spec.Q = Eigen::MatrixXd::Identity(2, 2);
  f.spec.R = Eigen::MatrixXd::Identity(1, 1);
  f.spec.terminal.S = Eigen::MatrixXd::Identity(2, 2);
  SqpSolver solver;
  const OcpSolution sol = solver.solve(f.spec, anchor_at(Eigen::Vector2d::Zero()));
  REQUIRE(sol.status == SolveStatus::kOptimal);
  CHECK(sol.states.cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(sol.inputs.cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(sol.objective <= 1e-10);
}

TEST_CASE("QP path matches the independent dense KKT oracle") {
  Fixture f(0.001, 8);
  // Offsets make the instance non-trivial; some tightened rows go active.
  for (int t = 0; t < 8; ++t)
    f.spec.offsets[t] = Eigen::Vector2d(0.0, -0.02 + 0.004 * t);
  SqpSolver solver;
  const TubeAnchor anchor = anchor_at(Eigen::Vector2d(0.1, 0.05));
  const OcpSolution sol = solver.solve(f.spec, anchor);
  REQUIRE(sol.status == SolveStatus::kOptimal);

  const Eigen::VectorXd w_oracle = rtmpc_test::kkt_oracle(f.spec, anchor, sol);
  const Eigen::VectorXd w_sol = SqpSolver::pack(f.spec, sol);
  CHECK((w_sol - w_oracle).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("defect consistency: rolling the solution through predict") {
  Fixture f(0.0005, 8);
  for (int t = 0; t < 8; ++t) f.spec.offsets[t] = Eigen::Vector2d(0.0, 0.01);
  SqpSolver solver;
  const OcpSolution sol = solver.solve(f.spec, anchor_at(Eigen::Vector2d(0.2, -0.05)));
  REQUIRE(sol.status == SolveStatus::kOptimal);
  Eigen::VectorXd x = sol.states.col(0);
  for (int t = 0; t < 8; ++t) {
    x = f.model.predict(x, sol.inputs.col(t)) + f.spec.offsets[t];
    CHECK((x - sol.states.col(t + 1)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("tube propagation law holds along the returned radii") {
  for (TubeLaw law : {TubeLaw::kRadius, TubeLaw::kPaperSquared}) {
    // The radius law is far more conservative; keep its disturbance small
    // enough for the terminal synthesis to admit the constraint box.
    Fixture f(law == TubeLaw::kRadius ? 0.001 : 0.005, 8, law);
    SqpSolver solver;
    const OcpSolution sol = solver.solve(f.spec, anchor_at(Eigen::Vector2d(0.1, 0.05)));
    REQUIRE(sol.status == SolveStatus::kOptimal);
    for (int t = 0; t < 8; ++t) {
      CHECK(sol.sigma(t) >= -1e-9);
      if (law == TubeLaw::kRadius) {
        const double expect =
            f.spec.tube.rho * sol.sigma(t) + std::sqrt(f.spec.tube.Xi) * f.spec.tube.d_max;
        CHECK(sol.sigma(t + 1) == doctest::Approx(expect).epsilon(1e-8));
      } else {
        const double expect = f.spec.tube.rho * f.spec.tube.rho * sol.sigma(t) * sol.sigma(t) +
                              f.spec.tube.Xi * f.spec.tube.d_max * f.spec.tube.d_max;
        CHECK(sol.sigma(t + 1) * sol.sigma(t + 1) == doctest::Approx(expect).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("active tightened rows hold with near equality") {
  Fixture f(0.001, 6);
  // Steer hard: holding this offset needs more steering than the bound allows.
  for (int t = 0; t < 6; ++t) f.spec.offsets[t] = Eigen::Vector2d(0.0, -0.04);
  SqpSolver solver;
  const OcpSolution sol = solver.solve(f.spec, anchor_at(Eigen::Vector2d(0.0, 0.0)));
  REQUIRE(sol.status == SolveStatus::kOptimal);
  bool any_active = false;
  for (int t = 0; t < 6; ++t) {
    Eigen::VectorXd z(3);
    z << sol.states.col(t), sol.inputs.col(t);
    const Eigen::VectorXd vals =
        f.spec.constraints.H * z + f.spec.tube.g * sol.sigma(t) - f.spec.constraints.h;
    CHECK(vals.maxCoeff() <= 1e-6);
    if (vals.maxCoeff() > -1e-4) any_active = true;
  }
  CHECK(any_active);
}

TEST_CASE("monotone conservatism: objective non-decreasing in d_max") {
  double prev = -1.0;
  for (double d : {0.0002, 0.0005, 0.001}) {
    Fixture f(d, 8);
    for (int t = 0; t < 8; ++t) f.spec.offsets[t] = Eigen::Vector2d(0.0, -0.02);
    SqpSolver solver;
    const OcpSolution sol = solver.solve(f.spec, anchor_at(Eigen::Vector2d(0.1, 0.05)));
    REQUIRE(sol.status == SolveStatus::kOptimal);
    CHECK(sol.objective >= prev - 1e-9);
    prev = sol.objective;
  }
}

TEST_CASE("solver determinism") {
  Fixture f(0.001, 8);
  SqpSolver solver;
  const TubeAnchor anchor = anchor_at(Eigen::Vector2d(0.08, -0.04));
  const OcpSolution a = solver.solve(f.spec, anchor);
  const OcpSolution b = solver.solve(f.spec, anchor);
  CHECK(a.states == b.states);
  CHECK(a.inputs == b.inputs);
  CHECK(a.sigma == b.sigma);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("objective gradient matches central finite differences") {
  Fixture f(0.001, 4);
  Rng rng(5);
  const int nv = 2 * 5 + 4 + 5;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd w(nv);
    for (int i = 0; i < nv; ++i) w(i) = rng.uniform(-0.5, 0.5);
    const Eigen::VectorXd g = SqpSolver::objective_gradient_at(f.spec, w);
    const double h = 1e-6;
    for (int i = 0; i < nv; ++i) {
      Eigen::VectorXd wp = w, wm = w;
      wp(i) += h;
      wm(i) -= h;
      const double fd = (SqpSolver::objective_value_at(f.spec, wp) -
                         SqpSolver::objective_value_at(f.spec, wm)) /
                        (2.0 * h);
      const double scale = std::max(1.0, std::abs(fd));
      CHECK(std::abs(g(i) - fd) / scale <= 1e-5);
    }
  }
}

TEST_CASE("RFF dynamics: defects still close after a hybrid solve") {
  // Small residual model trained on the true bicycle nonlinearity.
  bicycle::BicycleParams params;
  Domain dom;
  dom.state_lo = (Eigen::VectorXd(2) << -1.2, -0.25).finished();
  dom.state_hi = (Eigen::VectorXd(2) << 1.2, 0.25).finished();
  dom.input_lo = Eigen::VectorXd::Constant(1, -0.55);
  dom.input_hi = Eigen::VectorXd::Constant(1, 0.55);

  HybridModel model;
  model.baseline = bicycle::linearize(params);
  const ResidualDataset train =
      generate_dataset(bicycle::training_oracle(params), model.baseline, dom, 2000, 21);
  ResidualModel r;
  r.basis = sample_basis(3, 100, median_length_scale(train.inputs.topRows(500)), 22);
  r.weights = fit_ridge(train, r.basis, 1e-6);
  r.lambda = 1e-6;
  r.beta = 1.2;
  r.d_max = quantify_error(r, bicycle::training_oracle(params), model.baseline, dom, 1000,
                           1.2, 23);
  model.residual = r;

  const ConstraintSet constraints = bicycle::default_constraints();
  const Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(2, 2) * 10.0;
  const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(1, 1);
  const SynthesisArtifacts synth = synthesize(model.baseline.A, model.baseline.B, Q, R,
                                              constraints, r.d_max, TubeLaw::kPaperSquared);
  OcpSpec spec;
  spec.model = &model;
  spec.horizon = 10;
  spec.Q = Q;
  spec.R = R;
  spec.constraints = constraints;
  spec.tube = synth.tube;
  spec.terminal = synth.terminal;
  spec.law = TubeLaw::kPaperSquared;
  spec.offsets.assign(10, Eigen::Vector2d(0.0, -0.01));

  SqpSolver solver;
  const OcpSolution sol = solver.solve(spec, anchor_at(Eigen::Vector2d(0.1, 0.05)));
  REQUIRE(sol.status == SolveStatus::kOptimal);
  Eigen::VectorXd x = sol.states.col(0);
  for (int t = 0; t < 10; ++t) {
    x = model.predict(x, sol.inputs.col(t)) + spec.offsets[t];
    CHECK((x - sol.states.col(t + 1)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}
