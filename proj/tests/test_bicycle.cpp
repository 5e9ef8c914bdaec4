#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "rtmpc/bicycle.hpp"
#include "rtmpc/rng.hpp"
#include "rtmpc/synthesis.hpp"

using namespace rtmpc;
using namespace rtmpc::bicycle;

TEST_CASE("plant: origin with zero steering and zero curvature is an equilibrium") {
  BicycleParams p;
  const Eigen::Vector2d next = plant_step(p, Eigen::Vector2d::Zero(), 0.0, 0.0);
  CHECK(next.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("plant: curvature alone drives heading error") {
  BicycleParams p;  // v = 5, dt = 0.033
  const Eigen::Vector2d next = plant_step(p, Eigen::Vector2d::Zero(), 0.0, 0.1);
  CHECK(next(0) == 0.0);
  CHECK(next(1) == doctest::Approx(-0.0165).epsilon(1e-14));  // -v*kappa*dt
}

TEST_CASE("plant: frozen hand-computed step") {
  BicycleParams p;
  // e_y+   = 0.2 + 5*sin(0.1)*0.033   = 0.21646917...
  // e_psi+ = 0.1 + 2*tan(0.3)*0.033 - 5*0.05*0.033 = 0.11216...
  const Eigen::Vector2d next = plant_step(p, Eigen::Vector2d(0.2, 0.1), 0.3, 0.05);
  CHECK(next(0) == doctest::Approx(0.2 + 0.165 * 0.09983341664682815).epsilon(1e-13));
  CHECK(next(1) == doctest::Approx(0.1 + 0.066 * 0.30933624960962325 - 0.00825).epsilon(1e-13));
}

TEST_CASE("plant rejects steering at or beyond pi/2") {
  BicycleParams p;
  CHECK_THROWS_AS(plant_step(p, Eigen::Vector2d::Zero(), 1.6, 0.0), std::domain_error);
}

TEST_CASE("linearization has the expected entries") {
  BicycleParams p;
  const LinearBaseline lin = linearize(p);
  Eigen::MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.165, 0.0, 1.0;
  B << 0.0, 0.066;
  CHECK((lin.A - A).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((lin.B - B).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("curvature offset") {
  BicycleParams p;
  CHECK(curvature_offset(p, 0.0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(curvature_offset(p, 0.2)(1) == doctest::Approx(-0.033).epsilon(1e-14));
  CHECK(curvature_offset(p, 0.2)(0) == 0.0);
}

TEST_CASE("residual oracle: frozen values") {
  BicycleParams p;
  // v (sin(0.8) - 0.8) dt = 0.165 * -0.0826439091004772
  CHECK(residual_oracle(p, 0.8, 0.0)(0) ==
        doctest::Approx(-0.013636245001578738).epsilon(1e-12));
  CHECK(residual_oracle(p, 0.8, 0.0)(1) == 0.0);
  // (v/L)(tan(0.5) - 0.5) dt = 0.066 * 0.0463024898437905
  CHECK(residual_oracle(p, 0.0, 0.5)(1) ==
        doctest::Approx(0.0030559643296901733).epsilon(1e-12));
  CHECK(residual_oracle(p, 0.0, 0.5)(0) == 0.0);
}

TEST_CASE("residual identity: plant = baseline + offset + residual") {
  BicycleParams p;
  const LinearBaseline lin = linearize(p);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d x(rng.uniform(-6.0, 6.0), rng.uniform(-0.8, 0.8));
    const double delta = rng.uniform(-0.6, 0.6);
    const double kappa = rng.uniform(-0.4, 0.4);
    const Eigen::Vector2d truth = plant_step(p, x, delta, kappa);
    const Eigen::Vector2d model = lin.A * x + lin.B * Eigen::VectorXd::Constant(1, delta) +
                                  curvature_offset(p, kappa) +
                                  residual_oracle(p, x(1), delta);
    CHECK((truth - model).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("small-angle regime: residual is third order") {
  BicycleParams p;
  for (double s : {1e-2, 1e-3}) {
    const Eigen::Vector2d r = residual_oracle(p, s, s);
    // sin(x)-x ~ -x^3/6, tan(x)-x ~ x^3/3.
    CHECK(std::abs(r(0) + 0.165 * s * s * s / 6.0) <= 1e-2 * 0.165 * s * s * s);
    CHECK(std::abs(r(1) - 0.066 * s * s * s / 3.0) <= 1e-2 * 0.066 * s * s * s);
  }
}

TEST_CASE("training oracle ignores curvature") {
  BicycleParams p;
  const DynamicsOracle f = training_oracle(p);
  const Eigen::Vector2d x(0.3, 0.2);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, 0.1);
  CHECK((f(x, u) - plant_step(p, x, 0.1, 0.0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reference curvature: zero at start, bounded envelope") {
  BicycleParams p;
  ScenarioConfig sc;
  CHECK(reference_curvature(p, sc, 0) == 0.0);
  double peak = 0.0;
  const int steps = static_cast<int>(std::ceil(sc.duration / p.dt));
  for (int k = 0; k < steps; ++k) {
    const double kap = reference_curvature(p, sc, k);
    const double t = k * p.dt;
    CHECK(std::abs(kap) <= 0.9 * p.kappa_max * (t / sc.duration) + 1e-15);
    peak = std::max(peak, std::abs(kap));
  }
  CHECK(peak <= 0.9 * p.kappa_max + 1e-15);
  CHECK(peak >= 0.8 * 0.9 * p.kappa_max);  // the envelope is actually exercised
  CHECK_THROWS_AS(reference_curvature(p, sc, 10 * steps), std::out_of_range);
}

TEST_CASE("closed loop stays at equilibrium when curvature is negligible") {
  BicycleParams p;
  p.kappa_max = 1e-12;
  ScenarioConfig sc;
  sc.duration = 1.0;
  HybridModel model;
  model.baseline = linearize(p);
  const ConstraintSet constraints = default_constraints();
  RunOptions opts;
  opts.horizon = 10;
  const SynthesisArtifacts synth =
      synthesize(model.baseline.A, model.baseline.B, opts.Q, opts.R, constraints, 1e-9,
                 TubeLaw::kRadius);
  const ClosedLoopTrace trace =
      run_closed_loop(model, p, sc, constraints, synth, opts, "lin");
  REQUIRE(trace.size() > 0);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(std::abs(trace.e_y[i]) <= 1e-6);
    CHECK(std::abs(trace.e_psi[i]) <= 1e-6);
    CHECK(std::abs(trace.delta[i]) <= 1e-6);
    CHECK_FALSE(trace.fallback[i]);
  }
}

TEST_CASE("metrics: identical traces give unit ratios") {
  ClosedLoopTrace t;
  t.time = {0.0, 0.033};
  t.e_y = {0.1, -0.2};
  t.e_psi = {0.05, 0.0};
  t.delta = {0.2, -0.1};
  t.tube_size = {0.01, 0.02};
  t.solve_ms = {1.0, 3.0};
  t.status = {SolveStatus::kOptimal, SolveStatus::kOptimal};
  t.fallback = {false, false};
  t.nominal_state = {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  const Metrics m = compute_metrics(t, t, 0.01, 0.05);
  CHECK(m.tube_ratio == doctest::Approx(1.0));
  CHECK(m.e_y_ratio == doctest::Approx(1.0));
  CHECK(m.e_psi_ratio == doctest::Approx(1.0));
  CHECK(m.violations_rff == 0);
  CHECK(m.violations_lin == 0);
  CHECK(m.d_max_ratio == doctest::Approx(0.2));
  CHECK(m.mean_solve_ms_rff == doctest::Approx(2.0));
  CHECK(m.max_solve_ms_lin == doctest::Approx(3.0));
}

TEST_CASE("violation bookkeeping counts each offending sample once") {
  ClosedLoopTrace t;
  t.time = {0.0, 0.033, 0.066};
  t.e_y = {0.5, 1.2, 0.0};       // one e_y violation
  t.e_psi = {0.0, 0.0, 0.25};    // one e_psi violation
  t.delta = {0.0, 0.0, 0.0};
  CHECK(count_violations(t) == 2);
}

TEST_CASE("csv writers: header plus one row per sample") {
  ClosedLoopTrace t;
  t.time = {0.0};
  t.e_y = {0.125};
  t.e_psi = {-0.5};
  t.delta = {0.25};
  t.tube_size = {0.0625};
  t.solve_ms = {1.0};
  std::ostringstream res, ctl;
  write_results_csv(res, t, t);
  write_control_csv(ctl, t, t);
  CHECK(res.str() ==
        "t_rff,ey_rff,epsi_rff,tube_rff,t_lin,ey_lin,epsi_lin,tube_lin\n"
        "0,0.125,-0.5,0.0625,0,0.125,-0.5,0.0625\n");
  CHECK(ctl.str() == "t_rff,delta_rff,t_lin,delta_lin\n0,0.25,0,0.25\n");
}

TEST_CASE("parameter validation") {
  BicycleParams p;
  p.dt = 1.0;  // v*dt = 5 >= L
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  ScenarioConfig sc;
  sc.amplitude_scale = 1.0;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}
