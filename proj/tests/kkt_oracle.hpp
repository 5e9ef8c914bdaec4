#pragma once

// Shared test oracle: Newton iteration on the KKT system of the
// equality-constrained problem obtained by freezing the active set of a
// reported OCP solution. Independent of the SQP implementation.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rtmpc/ocp.hpp"

namespace rtmpc_test {

using namespace rtmpc;

// Starts from zero; shares no code path with the SQP loop.
inline Eigen::VectorXd kkt_oracle(const OcpSpec& spec, const TubeAnchor& anchor,
                           const OcpSolution& sol) {
  const int n = spec.state_dim(), m = spec.input_dim(), N = spec.horizon;
  const int nv = n * (N + 1) + m * N + (N + 1);
  auto xi = [&](int t) { return t * n; };
  auto vv = [&](int t) { return n * (N + 1) + t * m; };
  auto sg = [&](int t) { return n * (N + 1) + m * N + t; };

  // Active inequality rows at the reported solution (tolerance 1e-6).
  struct Row {
    Eigen::VectorXd lin;
    double rhs = 0.0;
  };
  std::vector<Row> active;
  const Eigen::MatrixXd& H = spec.constraints.H;
  for (int t = 0; t < N; ++t) {
    Eigen::VectorXd z(n + m);
    z << sol.states.col(t), sol.inputs.col(t);
    const Eigen::VectorXd vals = H * z + spec.tube.g * sol.sigma(t) - spec.constraints.h;
    for (int i = 0; i < H.rows(); ++i) {
      if (vals(i) > -1e-6) {
        Row r;
        r.lin = Eigen::VectorXd::Zero(nv);
        r.lin.segment(xi(t), n) = H.row(i).head(n);
        r.lin.segment(vv(t), m) = H.row(i).tail(m);
        r.lin(sg(t)) = spec.tube.g(i);
        r.rhs = spec.constraints.h(i);
        active.push_back(r);
      }
    }
  }
  const Eigen::Vector2d e0 = anchor.x_measured.head(2) - sol.states.col(0).head(2);
  const double quad0 = e0.dot(spec.tube.P * e0);
  const bool anchor_active = quad0 - sol.sigma(0) * sol.sigma(0) > -1e-6;

  // Unknowns: w plus multipliers for dynamics (linear, W=0), tube recursion
  // (radius law, linear), active rows, and the anchor. Solve the stationary
  // KKT equations by Newton from w = 0.
  const int n_dyn = n * N;
  const int n_tube = N;
  const int n_act = static_cast<int>(active.size());
  const int n_anchor = anchor_active ? 1 : 0;
  const int total = nv + n_dyn + n_tube + n_act + n_anchor;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(total);
  for (int newton = 0; newton < 50; ++newton) {
    Eigen::VectorXd F = Eigen::VectorXd::Zero(total);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(total, total);
    const Eigen::VectorXd x = w.head(nv);

    // Objective gradient and Hessian.
    Eigen::MatrixXd Hh = Eigen::MatrixXd::Zero(nv, nv);
    for (int t = 0; t < N; ++t) {
      Hh.block(xi(t), xi(t), n, n) = 2.0 * spec.Q;
      Hh.block(vv(t), vv(t), m, m) = 2.0 * spec.R;
    }
    Hh.block(xi(N), xi(N), n, n) = 2.0 * spec.terminal.S;
    Eigen::VectorXd grad = Hh * x;

    // Dynamics: xi_{t+1} - A xi_t - B v_t - offset_t = 0.
    Eigen::MatrixXd Cjac = Eigen::MatrixXd::Zero(n_dyn + n_tube + n_act + n_anchor, nv);
    Eigen::VectorXd cval = Eigen::VectorXd::Zero(n_dyn + n_tube + n_act + n_anchor);
    int crow = 0;
    for (int t = 0; t < N; ++t) {
      cval.segment(crow, n) = x.segment(xi(t + 1), n) -
                              spec.model->baseline.A * x.segment(xi(t), n) -
                              spec.model->baseline.B * x.segment(vv(t), m) - spec.offsets[t];
      Cjac.block(crow, xi(t + 1), n, n).setIdentity();
      Cjac.block(crow, xi(t), n, n) = -spec.model->baseline.A;
      Cjac.block(crow, vv(t), n, m) = -spec.model->baseline.B;
      crow += n;
    }
    for (int t = 0; t < N; ++t) {
      cval(crow) = x(sg(t + 1)) - spec.tube.rho * x(sg(t)) -
                   std::sqrt(spec.tube.Xi) * spec.tube.d_max;
      Cjac(crow, sg(t + 1)) = 1.0;
      Cjac(crow, sg(t)) = -spec.tube.rho;
      ++crow;
    }
    for (const Row& r : active) {
      cval(crow) = r.lin.dot(x) - r.rhs;
      Cjac.row(crow) = r.lin.transpose();
      ++crow;
    }
    if (anchor_active) {
      const Eigen::Vector2d e = anchor.x_measured.head(2) - x.segment(xi(0), n).head(2);
      cval(crow) = e.dot(spec.tube.P * e) - x(sg(0)) * x(sg(0));
      Cjac.block(crow, xi(0), 1, n) = (-2.0 * spec.tube.P * e).transpose();
      Cjac(crow, sg(0)) = -2.0 * x(sg(0));
      ++crow;
    }

    const Eigen::VectorXd mult = w.tail(total - nv);
    F.head(nv) = grad + Cjac.transpose() * mult;
    F.tail(total - nv) = cval;

    J.topLeftCorner(nv, nv) = Hh;
    if (anchor_active) {
      // Constraint curvature enters the KKT Jacobian.
      const double lam = mult(total - nv - 1);
      Eigen::MatrixXd curv = Eigen::MatrixXd::Zero(nv, nv);
      curv.block(xi(0), xi(0), n, n) = 2.0 * spec.tube.P;
      curv(sg(0), sg(0)) = -2.0;
      J.topLeftCorner(nv, nv) += lam * curv;
    }
    J.topRightCorner(nv, total - nv) = Cjac.transpose();
    J.bottomLeftCorner(total - nv, nv) = Cjac;

    const Eigen::VectorXd dw = J.fullPivLu().solve(-F);
    w += dw;
    if (dw.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return w.head(nv);
}


}  // namespace rtmpc_test
