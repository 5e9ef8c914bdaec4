#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rtmpc/model.hpp"
#include "rtmpc/qp.hpp"
#include "rtmpc/synthesis.hpp"

namespace rtmpc {

// Finite-horizon nominal optimal control problem: hybrid (RFF) dynamics
// equalities, tube-radius propagation, tightened polytopic inequalities,
// terminal set, in a multiple-shooting transcription over xi_{0..N} and
// v_{0..N-1}. The radii sigma_{1..N} follow in closed form from sigma_0, so
// only sigma_0 is kept as a decision variable u, tied to the measured state
// by the smooth floor u^2 >= ||x - xi_0||_P^2 + history. Writing the floor
// on u^2 rather than u avoids the norm kink at xi_0 = x that would blind a
// first-order method to the tube growth. The reported profile is evaluated
// at the binding floor, which the solved u can only exceed.
struct OcpSpec {
  const HybridModel* model = nullptr;
  int horizon = 0;
  Eigen::MatrixXd Q;  // n x n, PSD stage weight
  Eigen::MatrixXd R;  // m x m, PD stage weight
  ConstraintSet constraints;
  TubeDesign tube;
  TerminalSet terminal;
  std::vector<Eigen::VectorXd> offsets;  // known exogenous term per step, size N
  TubeLaw law = TubeLaw::kRadius;

  int state_dim() const { return model->baseline.state_dim(); }
  int input_dim() const { return model->baseline.input_dim(); }

  void validate() const {
    if (!model) throw std::invalid_argument("OcpSpec: model is null");
    if (horizon < 1) throw std::invalid_argument("OcpSpec: horizon must be >= 1");
    const int n = state_dim(), m = input_dim();
    if (Q.rows() != n || Q.cols() != n || R.rows() != m || R.cols() != m)
      throw std::invalid_argument("OcpSpec: weight dimension mismatch");
    constraints.validate(n, m);
    if (offsets.size() != static_cast<std::size_t>(horizon))
      throw std::invalid_argument("OcpSpec: offsets must have length N");
  }
};

enum class SolveStatus { kOptimal, kMaxIter, kInfeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kMaxIter: return "max-iter";
    default: return "infeasible";
  }
}

struct OcpSolution {
  Eigen::MatrixXd states;  // n x (N+1)
  Eigen::MatrixXd inputs;  // m x N
  Eigen::VectorXd sigma;   // N+1 tube radii
  double objective = 0.0;
  SolveStatus status = SolveStatus::kInfeasible;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double max_violation = 0.0;
  double solve_ms = 0.0;
};

// Tube anchor: couples sigma_0 to the measured state. With history,
// sigma_0^2 >= history_constant + ||x_k - xi_0||_P^2 where
// history_constant = s_{1|k-1} - ||e_{1|k-1}||_P^2; the containment floor
// sigma_0^2 >= ||x_k - xi_0||_P^2 is always enforced.
struct TubeAnchor {
  Eigen::VectorXd x_measured;
  bool has_history = false;
  double history_constant = 0.0;
};

struct SqpSettings {
  int max_iterations = 50;
  double kkt_tolerance = 1e-6;
  double step_tolerance = 1e-8;
  double elastic_penalty = 1e6;
  QpSettings qp;
};

class SqpSolver {
 public:
  explicit SqpSolver(SqpSettings settings = {}) : settings_(settings) {}

  OcpSolution solve(const OcpSpec& spec, const TubeAnchor& anchor,
                    const OcpSolution* warm_start = nullptr) const {
    const auto t_start = std::chrono::steady_clock::now();
    spec.validate();
    if (!anchor.x_measured.allFinite())
      throw std::invalid_argument("solve: measured state not finite");

    Layout lay(spec);
    Eigen::VectorXd w = initial_guess(spec, anchor, warm_start, lay);

    // Objective Hessian. The lifted radius u carries no cost; the QP
    // regularization keeps its subproblem direction well defined.
    Eigen::MatrixXd hess_base = Eigen::MatrixXd::Zero(lay.nvs, lay.nvs);
    for (int t = 0; t <= lay.N; ++t) {
      const Eigen::MatrixXd& Wt = t == lay.N ? spec.terminal.S : spec.Q;
      hess_base.block(lay.xi(t), lay.xi(t), lay.n, lay.n) = 2.0 * Wt;
    }
    for (int t = 0; t < lay.N; ++t)
      hess_base.block(lay.v(t), lay.v(t), lay.m, lay.m) = 2.0 * spec.R;

    OcpSolution sol;
    double mu = 10.0;  // l1 penalty weight
    Eigen::VectorXd y;  // QP duals, warm-started across SQP iterations
    bool elastic_used = false;

    Constraints con;
    for (int it = 1; it <= settings_.max_iterations; ++it) {
      evaluate(spec, anchor, lay, w, &con);
      Eigen::VectorXd grad = reduced_gradient(spec, lay, w);

      QpProblem qp;
      qp.P = hess_base;
      if (y.size() == con.total) {
        // Lagrangian curvature of the nonlinear rows, weighted by the
        // previous multipliers. Without it the quadratic model is blind to
        // the strongly active floor and terminal rows and the iterates
        // limit-cycle around the solution. Indefinite terms (the -u^2 in
        // the floor row) are dropped to keep the subproblem convex.
        const int n_h = static_cast<int>(spec.constraints.rows());
        const TubeProfile tp = tube_profile(spec, w(lay.u()), lay.N);
        double cu = 0.0;  // accumulated (u, u) curvature
        int r = con.n_eq;
        for (int t = 0; t < lay.N; ++t) {
          for (int i = 0; i < n_h; ++i)
            cu += std::max(y(r + i), 0.0) * spec.tube.g(i) * tp.ddsig_du(t);
          r += n_h;
        }
        const double y_ts = std::max(y(r), 0.0);
        qp.P.block(lay.xi(lay.N), lay.xi(lay.N), lay.n, lay.n) +=
            y_ts * 2.0 * spec.terminal.S;
        // d^2(sigma_N^2)/du^2 = 2 (dsig^2 + sigma ddsig) = 2 rho^{2N}.
        cu += std::max(y(r + 1), 0.0) * 2.0 *
              (tp.dsig_du(lay.N) * tp.dsig_du(lay.N) +
               tp.sigma(lay.N) * tp.ddsig_du(lay.N));
        qp.P.block(lay.xi(0), lay.xi(0), lay.n, lay.n) +=
            std::max(y(r + 2), 0.0) * 2.0 * spec.tube.P;
        qp.P(lay.u(), lay.u()) += cu;
      }
      qp.q = grad;
      qp.A = con.jac;
      qp.l.resize(con.total);
      qp.u.resize(con.total);
      for (int i = 0; i < con.total; ++i) {
        qp.u(i) = -con.value(i);
        qp.l(i) = i < con.n_eq ? -con.value(i)
                               : -std::numeric_limits<double>::infinity();
      }

      QpSolver qp_solver;
      QpResult qres = qp_solver.solve(qp, settings_.qp, nullptr,
                                      y.size() == con.total ? &y : nullptr);
      if (qres.status != QpStatus::kSolved) {
        // Infeasible or stalled subproblem: fall back to the elastic
        // relaxation, which is always feasible and better conditioned.
        qres = solve_elastic(qp, con.n_eq);
        elastic_used = true;
        if (qres.status == QpStatus::kPrimalInfeasible) break;
      }
      Eigen::VectorXd p = qres.x.head(lay.nvs);
      // Guard against runaway steps from a poorly solved subproblem.
      const double p_norm = p.cwiseAbs().maxCoeff();
      if (p_norm > 10.0) p *= 10.0 / p_norm;
      y = qres.y.head(con.total);

      // KKT residual at the current iterate with the fresh multipliers.
      const double stat = (grad + con.jac.transpose() * y).cwiseAbs().maxCoeff();
      double feas = 0.0;
      for (int i = 0; i < con.total; ++i)
        feas = std::max(feas, i < con.n_eq ? std::abs(con.value(i))
                                           : std::max(0.0, con.value(i)));
      sol.kkt_residual = std::max(stat, feas);
      sol.iterations = it;
      const double step_norm = p.cwiseAbs().maxCoeff();
      if (sol.kkt_residual <= settings_.kkt_tolerance &&
          step_norm <= settings_.step_tolerance) {
        sol.status = SolveStatus::kOptimal;
        break;
      }

      // l1-penalty line search.
      const double y_max = y.size() ? y.cwiseAbs().maxCoeff() : 0.0;
      mu = std::max(1.5 * y_max, 10.0);
      const double merit0 = objective_value(spec, lay, w) + mu * con.violation_l1();
      const double descent = grad.dot(p) - mu * con.violation_l1();
      double alpha = 1.0;
      bool accepted = false;
      Constraints trial_con;
      for (int ls = 0; ls < 30; ++ls) {
        const Eigen::VectorXd w_trial = w + alpha * p;
        evaluate(spec, anchor, lay, w_trial, &trial_con);
        const double merit =
            objective_value(spec, lay, w_trial) + mu * trial_con.violation_l1();
        if (merit <= merit0 + 1e-4 * alpha * descent || alpha < 1e-10) {
          w = w_trial;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        // No merit progress in any backtracked step: further iterations
        // would repeat the same rejected subproblem verbatim.
        sol.status = SolveStatus::kMaxIter;
        break;
      }
      if (it == settings_.max_iterations) sol.status = SolveStatus::kMaxIter;
    }

    extract(spec, anchor, lay, w, &sol);
    evaluate(spec, anchor, lay, w, &con);
    sol.max_violation = 0.0;
    for (int i = 0; i < con.total; ++i)
      sol.max_violation = std::max(sol.max_violation, i < con.n_eq
                                                          ? std::abs(con.value(i))
                                                          : std::max(0.0, con.value(i)));
    if (sol.status == SolveStatus::kOptimal &&
        (elastic_used && sol.max_violation > settings_.kkt_tolerance))
      sol.status = SolveStatus::kInfeasible;
    if (sol.status == SolveStatus::kInfeasible && sol.max_violation <= settings_.kkt_tolerance &&
        sol.kkt_residual <= settings_.kkt_tolerance)
      sol.status = SolveStatus::kOptimal;
    sol.solve_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t_start)
                       .count();
    return sol;
  }

  // Objective gradient at a packed iterate; exposed for derivative checks.
  static Eigen::VectorXd objective_gradient_at(const OcpSpec& spec, const Eigen::VectorXd& w) {
    Layout lay(spec);
    return objective_gradient(spec, lay, w);
  }
  static double objective_value_at(const OcpSpec& spec, const Eigen::VectorXd& w) {
    Layout lay(spec);
    return objective_value(spec, lay, w);
  }
  static Eigen::VectorXd pack(const OcpSpec& spec, const OcpSolution& sol) {
    Layout lay(spec);
    Eigen::VectorXd w(lay.nv);
    for (int t = 0; t <= lay.N; ++t) w.segment(lay.xi(t), lay.n) = sol.states.col(t);
    for (int t = 0; t < lay.N; ++t) w.segment(lay.v(t), lay.m) = sol.inputs.col(t);
    for (int t = 0; t <= lay.N; ++t) w(lay.sig(t)) = sol.sigma(t);
    return w;
  }

 private:
  struct Layout {
    int N, n, m, nv, nvr, nvs;
    explicit Layout(const OcpSpec& spec)
        : N(spec.horizon), n(spec.state_dim()), m(spec.input_dim()) {
      nvr = n * (N + 1) + m * N;  // states and inputs
      nvs = nvr + 1;              // solver variables: states, inputs, sigma_0
      nv = nvr + (N + 1);         // packed form with the radius profile appended
    }
    int xi(int t) const { return t * n; }
    int v(int t) const { return n * (N + 1) + t * m; }
    int u() const { return n * (N + 1) + m * N; }  // sigma_0, solver form only
    int sig(int t) const { return n * (N + 1) + m * N + t; }
  };

  // Closed-form tube radii as a function of the initial radius sigma_0 = u,
  // with the sensitivity d sigma_t / d u. Smooth in u > 0 for both laws (the
  // radius law is linear in u).
  struct TubeProfile {
    Eigen::VectorXd sigma;     // N+1 radii
    Eigen::VectorXd dsig_du;   // d sigma_t / d u
    Eigen::VectorXd ddsig_du;  // d^2 sigma_t / d u^2
  };

  static TubeProfile tube_profile(const OcpSpec& spec, double u, int N) {
    TubeProfile tp;
    tp.sigma.resize(N + 1);
    tp.dsig_du.resize(N + 1);
    tp.ddsig_du.setZero(N + 1);
    const double rho = spec.tube.rho, d = spec.tube.d_max;
    if (spec.law == TubeLaw::kPaperSquared) {
      // s_t = rho^{2t} u^2 + Xi d^2 (1 - rho^{2t}) / (1 - rho^2).
      const double r2 = rho * rho, xd2 = spec.tube.Xi * d * d;
      double pow_r2 = 1.0, c = 0.0;
      for (int t = 0; t <= N; ++t) {
        tp.sigma(t) = std::sqrt(std::max(pow_r2 * u * u + c, 0.0));
        if (tp.sigma(t) > 0.0) {
          tp.dsig_du(t) = pow_r2 * u / tp.sigma(t);
          tp.ddsig_du(t) = pow_r2 * c / std::pow(tp.sigma(t), 3);
        } else {
          tp.dsig_du(t) = t == 0 ? 1.0 : 0.0;
        }
        c = r2 * c + xd2;
        pow_r2 *= r2;
      }
    } else {
      // sigma_t = rho^t u + sqrt(Xi) d (1 - rho^t) / (1 - rho).
      double pow_r = 1.0, c = 0.0;
      for (int t = 0; t <= N; ++t) {
        tp.sigma(t) = pow_r * u + c;
        tp.dsig_du(t) = pow_r;
        c = rho * c + std::sqrt(spec.tube.Xi) * d;
        pow_r *= rho;
      }
    }
    return tp;
  }

  // Anchor floor on sigma_0^2: quad plus the carried-over history constant.
  static double anchor_floor(const TubeAnchor& anchor, double quad) {
    const double a0 =
        anchor.has_history ? std::max(anchor.history_constant, 0.0) : 0.0;
    return std::max(quad, 0.0) + a0;
  }

  struct Constraints {
    Eigen::VectorXd value;
    Eigen::MatrixXd jac;
    int n_eq = 0;
    int total = 0;

    double violation_l1() const {
      double v = 0.0;
      for (int i = 0; i < total; ++i)
        v += i < n_eq ? std::abs(value(i)) : std::max(0.0, value(i));
      return v;
    }
  };

  SqpSettings settings_;

  static double objective_value(const OcpSpec& spec, const Layout& lay,
                                const Eigen::VectorXd& w) {
    double obj = 0.0;
    for (int t = 0; t < lay.N; ++t) {
      const auto xi = w.segment(lay.xi(t), lay.n);
      const auto v = w.segment(lay.v(t), lay.m);
      obj += xi.dot(spec.Q * xi) + v.dot(spec.R * v);
    }
    const auto xN = w.segment(lay.xi(lay.N), lay.n);
    return obj + xN.dot(spec.terminal.S * xN);
  }

  static Eigen::VectorXd objective_gradient(const OcpSpec& spec, const Layout& lay,
                                            const Eigen::VectorXd& w) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.nv);
    for (int t = 0; t < lay.N; ++t) {
      g.segment(lay.xi(t), lay.n) = 2.0 * spec.Q * w.segment(lay.xi(t), lay.n);
      g.segment(lay.v(t), lay.m) = 2.0 * spec.R * w.segment(lay.v(t), lay.m);
    }
    g.segment(lay.xi(lay.N), lay.n) =
        2.0 * spec.terminal.S * w.segment(lay.xi(lay.N), lay.n);
    return g;
  }

  // Evaluates all constraints and their Jacobian at w. Ordering: dynamics
  // equalities first, then inequalities (tightened path rows, terminal
  // state, terminal tube). The radii enter through their closed form, so
  // every tightened row picks up a sensitivity to xi_0.
  static void evaluate(const OcpSpec& spec, const TubeAnchor& anchor, const Layout& lay,
                       const Eigen::VectorXd& w, Constraints* out) {
    const int n = lay.n, m = lay.m, N = lay.N;
    const int n_h = spec.constraints.rows();
    const int n_eq = n * N;
    const int n_in = n_h * N + 4;
    out->n_eq = n_eq;
    out->total = n_eq + n_in;
    out->value.setZero(out->total);
    out->jac.setZero(out->total, lay.nvs);

    const HybridModel& model = *spec.model;
    const bool rff = model.has_residual();
    const int D = rff ? model.residual->basis.feature_count : 0;
    Eigen::VectorXd z(n + m), phi(D);
    Eigen::MatrixXd jphi(D, n + m);

    int row = 0;
    // Dynamics defects: xi_{t+1} - f_hat(xi_t, v_t) - offset_t = 0.
    for (int t = 0; t < N; ++t) {
      const auto xi = w.segment(lay.xi(t), n);
      const auto vt = w.segment(lay.v(t), m);
      Eigen::VectorXd pred = model.baseline.A * xi + model.baseline.B * vt + spec.offsets[t];
      Eigen::MatrixXd dfdx = model.baseline.A;
      Eigen::MatrixXd dfdu = model.baseline.B;
      if (rff) {
        z << xi, vt;
        features_into(model.residual->basis, z, phi);
        pred += model.residual->weights.transpose() * phi;
        feature_jacobian_into(model.residual->basis, z, jphi);
        const Eigen::MatrixXd wj = model.residual->weights.transpose() * jphi;
        dfdx += wj.leftCols(n);
        dfdu += wj.rightCols(m);
      }
      out->value.segment(row, n) = w.segment(lay.xi(t + 1), n) - pred;
      out->jac.block(row, lay.xi(t + 1), n, n) = Eigen::MatrixXd::Identity(n, n);
      out->jac.block(row, lay.xi(t), n, n) = -dfdx;
      out->jac.block(row, lay.v(t), n, m) = -dfdu;
      row += n;
    }
    // Radii driven by the lifted initial radius u = sigma_0.
    const double u = w(lay.u());
    const TubeProfile tp = tube_profile(spec, u, N);

    // Tightened path constraints: H [xi; v] + g sigma_t(u) - h <= 0.
    for (int t = 0; t < N; ++t) {
      z << w.segment(lay.xi(t), n), w.segment(lay.v(t), m);
      out->value.segment(row, n_h) =
          spec.constraints.H * z + spec.tube.g * tp.sigma(t) - spec.constraints.h;
      out->jac.block(row, lay.xi(t), n_h, n) = spec.constraints.H.leftCols(n);
      out->jac.block(row, lay.v(t), n_h, m) = spec.constraints.H.rightCols(m);
      out->jac.block(row, lay.u(), n_h, 1) = spec.tube.g * tp.dsig_du(t);
      row += n_h;
    }
    // Terminal set: ||xi_N||_S^2 <= gamma1, sigma_N(u)^2 <= gamma2.
    {
      const auto xN = w.segment(lay.xi(N), n);
      out->value(row) = xN.dot(spec.terminal.S * xN) - spec.terminal.gamma1;
      out->jac.block(row, lay.xi(N), 1, n) = 2.0 * (spec.terminal.S * xN).transpose();
      ++row;
      const double sN = tp.sigma(N);
      out->value(row) = sN * sN - spec.terminal.gamma2;
      out->jac(row, lay.u()) = 2.0 * sN * tp.dsig_du(N);
      ++row;
    }
    // Anchor floor u^2 >= ||x - xi_0||_P^2 + history, and u >= 0.
    {
      const Eigen::VectorXd e0 = anchor.x_measured - w.segment(lay.xi(0), n);
      const double quad = e0.dot(spec.tube.P * e0);
      out->value(row) = anchor_floor(anchor, quad) - u * u;
      out->jac.block(row, lay.xi(0), 1, n) = -2.0 * (spec.tube.P * e0).transpose();
      out->jac(row, lay.u()) = -2.0 * u;
      ++row;
      out->value(row) = -u;
      out->jac(row, lay.u()) = -1.0;
      ++row;
    }
  }

  // Elastic relaxation: nonnegative slacks on inequality rows with a large
  // linear penalty; engaged only after a hard-infeasible subproblem.
  QpResult solve_elastic(const QpProblem& qp, int n_eq) const {
    const Eigen::Index nv = qp.P.rows();
    const Eigen::Index nc = qp.A.rows();
    const Eigen::Index ns = nc - n_eq;
    QpProblem ext;
    ext.P = Eigen::MatrixXd::Zero(nv + ns, nv + ns);
    ext.P.topLeftCorner(nv, nv) = qp.P;
    ext.P.bottomRightCorner(ns, ns).diagonal().array() = 1e-8;
    ext.q.resize(nv + ns);
    ext.q.head(nv) = qp.q;
    ext.q.tail(ns).array() = settings_.elastic_penalty;
    // Rows: original constraints (inequalities get +slack headroom), then
    // slack nonnegativity.
    ext.A = Eigen::MatrixXd::Zero(nc + ns, nv + ns);
    ext.A.topLeftCorner(nc, nv) = qp.A;
    for (Eigen::Index i = 0; i < ns; ++i) ext.A(n_eq + i, nv + i) = -1.0;
    for (Eigen::Index i = 0; i < ns; ++i) ext.A(nc + i, nv + i) = 1.0;
    ext.l.resize(nc + ns);
    ext.u.resize(nc + ns);
    ext.l.head(nc) = qp.l;
    ext.u.head(nc) = qp.u;
    ext.l.tail(ns).setZero();
    ext.u.tail(ns).setConstant(std::numeric_limits<double>::infinity());
    QpSolver solver;
    return solver.solve(ext, settings_.qp);
  }

  // Objective gradient over the solver variables [xi; v; u]; u is costless.
  static Eigen::VectorXd reduced_gradient(const OcpSpec& spec, const Layout& lay,
                                          const Eigen::VectorXd& w) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.nvs);
    for (int t = 0; t < lay.N; ++t) {
      g.segment(lay.xi(t), lay.n) = 2.0 * spec.Q * w.segment(lay.xi(t), lay.n);
      g.segment(lay.v(t), lay.m) = 2.0 * spec.R * w.segment(lay.v(t), lay.m);
    }
    g.segment(lay.xi(lay.N), lay.n) =
        2.0 * spec.terminal.S * w.segment(lay.xi(lay.N), lay.n);
    return g;
  }

  static Eigen::VectorXd initial_guess(const OcpSpec& spec, const TubeAnchor& anchor,
                                       const OcpSolution* warm, const Layout& lay) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(lay.nvs);
    if (warm && warm->states.cols() == lay.N + 1) {
      // Shift the previous solution by one step, repeating the last input.
      for (int t = 0; t < lay.N; ++t)
        w.segment(lay.xi(t), lay.n) = warm->states.col(t + 1);
      for (int t = 0; t + 1 < lay.N; ++t)
        w.segment(lay.v(t), lay.m) = warm->inputs.col(t + 1);
      w.segment(lay.v(lay.N - 1), lay.m) = warm->inputs.col(lay.N - 1);
      Eigen::VectorXd x_end = spec.model->predict(warm->states.col(lay.N),
                                                  warm->inputs.col(lay.N - 1)) +
                              spec.offsets[lay.N - 1];
      w.segment(lay.xi(lay.N), lay.n) = x_end;
    } else {
      // Cold start: roll the terminal gain out from the measured state; it
      // steers the guess toward the terminal set, unlike a zero-input rollout.
      Eigen::VectorXd x = anchor.x_measured;
      for (int t = 0; t <= lay.N; ++t) {
        w.segment(lay.xi(t), lay.n) = x;
        if (t < lay.N) {
          const Eigen::VectorXd u = spec.terminal.K_omega * x;
          w.segment(lay.v(t), lay.m) = u;
          x = spec.model->baseline.A * x + spec.model->baseline.B * u + spec.offsets[t];
        }
      }
    }
    // Seed the lifted radius at its floor, away from the u = 0 apex where
    // the floor constraint has a vanishing gradient.
    const Eigen::VectorXd e0 = anchor.x_measured - w.segment(lay.xi(0), lay.n);
    w(lay.u()) =
        std::max(std::sqrt(anchor_floor(anchor, e0.dot(spec.tube.P * e0))), 1e-3);
    return w;
  }

  static void extract(const OcpSpec& spec, const TubeAnchor& anchor, const Layout& lay,
                      const Eigen::VectorXd& w, OcpSolution* sol) {
    sol->states.resize(lay.n, lay.N + 1);
    sol->inputs.resize(lay.m, lay.N);
    for (int t = 0; t <= lay.N; ++t) sol->states.col(t) = w.segment(lay.xi(t), lay.n);
    for (int t = 0; t < lay.N; ++t) sol->inputs.col(t) = w.segment(lay.v(t), lay.m);
    // Report the certified profile from the binding floor at the final xi_0;
    // the solver's lifted radius can only sit at or above it.
    const Eigen::VectorXd e0 = anchor.x_measured - sol->states.col(0);
    const double base = anchor_floor(anchor, e0.dot(spec.tube.P * e0));
    sol->sigma = tube_profile(spec, std::sqrt(base), lay.N).sigma;
    sol->objective = objective_value(spec, lay, w);
  }
};

}  // namespace rtmpc
