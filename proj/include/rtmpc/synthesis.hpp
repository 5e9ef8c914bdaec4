#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "rtmpc/text_io.hpp"

namespace rtmpc {

struct SynthesisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Polytope H [x; u] <= h on the stacked state/input vector.
struct ConstraintSet {
  Eigen::MatrixXd H;  // n_h x (n+m)
  Eigen::VectorXd h;  // n_h

  int rows() const { return static_cast<int>(H.rows()); }

  void validate(int state_dim, int input_dim) const {
    if (H.rows() < 1) throw std::invalid_argument("ConstraintSet: need at least one row");
    if (H.cols() != state_dim + input_dim)
      throw std::invalid_argument("ConstraintSet: column count must equal n+m");
    if (h.size() != H.rows()) throw std::invalid_argument("ConstraintSet: h size mismatch");
  }

  // Box |x_i| <= xb_i, |u_j| <= ub_j as 2(n+m) rows.
  static ConstraintSet box(const Eigen::VectorXd& state_bound, const Eigen::VectorXd& input_bound) {
    const Eigen::Index n = state_bound.size(), m = input_bound.size();
    ConstraintSet c;
    c.H = Eigen::MatrixXd::Zero(2 * (n + m), n + m);
    c.h.resize(2 * (n + m));
    for (Eigen::Index i = 0; i < n + m; ++i) {
      c.H(2 * i, i) = 1.0;
      c.H(2 * i + 1, i) = -1.0;
      const double b = i < n ? state_bound(i) : input_bound(i - n);
      c.h(2 * i) = b;
      c.h(2 * i + 1) = b;
    }
    return c;
  }
};

// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
// deterministic start vector; tolerance 1e-12, capped at 1e4 iterations.
inline double symmetric_max_eigenvalue(const Eigen::MatrixXd& M) {
  const Eigen::Index n = M.rows();
  if (n == 1) return M(0, 0);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) += 1e-3 * static_cast<double>(i + 1);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd w = M * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    const double next = v.dot(M * v);
    if (std::abs(next - lambda) <= 1e-12 * std::max(1.0, std::abs(next))) return next;
    lambda = next;
  }
  throw SynthesisError("symmetric_max_eigenvalue: power iteration did not converge");
}

// Discrete-time LQR gain K with A + BK Schur stable (u = K x is the
// stabilizing negative feedback). Riccati fixed-point iteration to
// residual <= 1e-10.
inline Eigen::MatrixXd dlqr(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const Eigen::Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != m ||
      R.cols() != m)
    throw std::invalid_argument("dlqr: dimension mismatch");

  Eigen::MatrixXd P = Q;
  const int max_iter = 100000;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd BtP = B.transpose() * P;
    Eigen::MatrixXd gain_den = R + BtP * B;
    const Eigen::MatrixXd next =
        Q + A.transpose() * P * A -
        A.transpose() * P * B * gain_den.ldlt().solve(BtP * A);
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = next;
    if (delta <= 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
    if (!P.allFinite() || P.cwiseAbs().maxCoeff() > 1e16)
      throw SynthesisError("dlqr: Riccati iteration diverged (pair not stabilizable?)");
    if (it == max_iter - 1)
      throw SynthesisError("dlqr: Riccati iteration did not converge");
  }
  const Eigen::MatrixXd K = -(R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
  // Riccati residual check at the fixed point.
  const Eigen::MatrixXd res = Q + A.transpose() * P * A -
                              A.transpose() * P * B *
                                  (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A) -
                              P;
  if (res.cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, P.cwiseAbs().maxCoeff()))
    throw SynthesisError("dlqr: Riccati residual above tolerance");
  return K;
}

// Solves A^T X A - X = -M for Schur-stable A via the doubling iteration on
// the convergent series sum_k (A^T)^k M A^k.
inline Eigen::MatrixXd dlyap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& M) {
  if (A.rows() != A.cols() || M.rows() != M.cols() || A.rows() != M.rows())
    throw std::invalid_argument("dlyap: dimension mismatch");
  Eigen::MatrixXd X = M;
  Eigen::MatrixXd Ak = A;
  double prev_inc = std::numeric_limits<double>::max();
  for (int it = 0; it < 200; ++it) {
    const Eigen::MatrixXd inc = Ak.transpose() * X * Ak;
    const double inc_norm = inc.cwiseAbs().maxCoeff();
    if (!inc.allFinite() || (it > 4 && inc_norm > prev_inc && inc_norm > 1.0))
      throw SynthesisError("dlyap: series diverged (A not Schur stable?)");
    X += inc;
    if (inc_norm <= 1e-12 * std::max(1.0, X.cwiseAbs().maxCoeff())) {
      const double res = (A.transpose() * X * A - X + M).cwiseAbs().maxCoeff();
      if (res > 1e-9 * std::max(1.0, X.cwiseAbs().maxCoeff()))
        throw SynthesisError("dlyap: residual above tolerance");
      return X;
    }
    Ak = Ak * Ak;
    prev_inc = inc_norm;
  }
  throw SynthesisError("dlyap: did not converge");
}

// Tube propagation law used online. The radius form
// sigma+ = rho sigma + sqrt(Xi) d_max is sound for the (rho, Xi) below; the
// squared form s+ = rho^2 s + Xi d_max^2 matches the published recursion but
// drops the cross term.
enum class TubeLaw { kRadius, kPaperSquared };

inline const char* to_string(TubeLaw law) {
  return law == TubeLaw::kRadius ? "radius" : "paper";
}

inline TubeLaw tube_law_from_string(const std::string& s) {
  if (s == "radius") return TubeLaw::kRadius;
  if (s == "paper") return TubeLaw::kPaperSquared;
  throw std::invalid_argument("unknown tube law '" + s + "' (expected radius|paper)");
}

// Everything the online controller needs about the tube: feedback gain,
// ellipsoid shape, contraction, disturbance gain, and tightening factors.
struct TubeDesign {
  Eigen::MatrixXd K;  // m x n
  Eigen::MatrixXd P;  // n x n, SPD
  double rho = 0.0;   // in (0,1)
  double Xi = 0.0;    // lambda_max(P)
  Eigen::VectorXd g;  // per-constraint tightening factors
  double d_max = 0.0;
  double s_inf = 0.0;  // Xi d_max^2 / (1 - rho^2)

  // Fixed point of the selected propagation law, as a tube size s = sigma^2.
  double steady_state_size(TubeLaw law) const {
    if (law == TubeLaw::kPaperSquared) return s_inf;
    const double sigma_inf = std::sqrt(Xi) * d_max / (1.0 - rho);
    return sigma_inf * sigma_inf;
  }
};

struct TerminalSet {
  Eigen::MatrixXd K_omega;  // m x n terminal gain
  Eigen::MatrixXd S;        // n x n terminal cost, SPD
  double gamma1 = 0.0;      // state ellipsoid level ||xi||_S^2 <= gamma1
  double gamma2 = 0.0;      // tube level 0 <= s <= gamma2
};

// P = dlyap(A_e, I); rho^2 the largest generalized eigenvalue of
// (A_e^T P A_e, P); Xi = lambda_max(P).
inline void tube_geometry(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          const Eigen::MatrixXd& K, double d_max, TubeDesign* out) {
  const Eigen::MatrixXd A_e = A + B * K;
  const Eigen::Index n = A.rows();
  const Eigen::MatrixXd P = dlyap(A_e, Eigen::MatrixXd::Identity(n, n));

  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) throw SynthesisError("tube_geometry: P not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  // Similarity L^{-1} A_e^T P A_e L^{-T} is symmetric with the same spectrum
  // as P^{-1} A_e^T P A_e.
  const Eigen::MatrixXd G = A_e.transpose() * P * A_e;
  const Eigen::MatrixXd Sym =
      L.triangularView<Eigen::Lower>().solve(
          L.triangularView<Eigen::Lower>().solve(G.transpose()).transpose());
  const double rho_sq = symmetric_max_eigenvalue(Sym);
  if (!(rho_sq < 1.0))
    throw SynthesisError("tube_geometry: contraction factor >= 1 (rho^2 = " +
                         std::to_string(rho_sq) + ")");

  out->K = K;
  out->P = P;
  out->rho = std::sqrt(rho_sq);
  out->Xi = symmetric_max_eigenvalue(P);
  out->d_max = d_max;
  out->s_inf = out->Xi * d_max * d_max / (1.0 - rho_sq);
}

// g_i = || H_i [I; K] P^{-1/2} ||_2 = sqrt(a_i P^{-1} a_i^T) with
// a_i = H_i [I; K].
inline Eigen::VectorXd tightening_factors(const ConstraintSet& constraints,
                                          const Eigen::MatrixXd& K, const Eigen::MatrixXd& P) {
  const Eigen::Index n = P.rows();
  const Eigen::Index m = K.rows();
  constraints.validate(static_cast<int>(n), static_cast<int>(m));
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw SynthesisError("tightening_factors: P not positive definite");
  Eigen::MatrixXd stacked(n + m, n);  // [I; K]
  stacked.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  stacked.bottomRows(m) = K;

  Eigen::VectorXd g(constraints.rows());
  for (int i = 0; i < constraints.rows(); ++i) {
    const Eigen::VectorXd a = (constraints.H.row(i) * stacked).transpose();
    g(i) = std::sqrt(a.dot(llt.solve(a)));
  }
  return g;
}

// Terminal gain/cost plus the largest state level gamma1 compatible with
// the constraints tightened by the steady-state tube level gamma2.
inline TerminalSet terminal_synthesis(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                      const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                                      const ConstraintSet& constraints, const TubeDesign& tube,
                                      TubeLaw law) {
  const Eigen::Index n = A.rows(), m = B.cols();
  constraints.validate(static_cast<int>(n), static_cast<int>(m));

  TerminalSet term;
  term.K_omega = dlqr(A, B, Q, R);
  const Eigen::MatrixXd A_cl = A + B * term.K_omega;
  term.S = dlyap(A_cl, Q + term.K_omega.transpose() * R * term.K_omega);
  term.gamma2 = tube.steady_state_size(law);

  Eigen::LLT<Eigen::MatrixXd> llt(term.S);
  if (llt.info() != Eigen::Success)
    throw SynthesisError("terminal_synthesis: S not positive definite");

  Eigen::MatrixXd stacked(n + m, n);
  stacked.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  stacked.bottomRows(m) = term.K_omega;

  const double sqrt_gamma2 = std::sqrt(term.gamma2);
  double gamma1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < constraints.rows(); ++i) {
    const Eigen::VectorXd a = (constraints.H.row(i) * stacked).transpose();
    const double c = std::sqrt(a.dot(llt.solve(a)));  // support of the S-ellipsoid
    if (c <= 1e-14) continue;
    const double margin = constraints.h(i) - tube.g(i) * sqrt_gamma2;
    if (margin <= 0.0)
      throw SynthesisError("terminal_synthesis: tube too large for constraints (row " +
                           std::to_string(i) + ")");
    gamma1 = std::min(gamma1, (margin / c) * (margin / c));
  }
  if (!std::isfinite(gamma1))
    throw SynthesisError("terminal_synthesis: no constraint row bounds the terminal set");
  term.gamma1 = gamma1;
  return term;
}

// Full offline synthesis output, archived as a structured-text report.
struct SynthesisArtifacts {
  TubeDesign tube;
  TerminalSet terminal;
  TubeLaw law = TubeLaw::kRadius;
  double lyapunov_residual_P = 0.0;
  double lyapunov_residual_S = 0.0;
};

inline SynthesisArtifacts synthesize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                                     const ConstraintSet& constraints, double d_max,
                                     TubeLaw law) {
  SynthesisArtifacts art;
  art.law = law;
  const Eigen::MatrixXd K = dlqr(A, B, Q, R);
  tube_geometry(A, B, K, d_max, &art.tube);
  art.tube.g = tightening_factors(constraints, K, art.tube.P);
  art.terminal = terminal_synthesis(A, B, Q, R, constraints, art.tube, law);

  const Eigen::MatrixXd A_e = A + B * K;
  const Eigen::Index n = A.rows();
  art.lyapunov_residual_P =
      (A_e.transpose() * art.tube.P * A_e - art.tube.P + Eigen::MatrixXd::Identity(n, n))
          .cwiseAbs()
          .maxCoeff();
  const Eigen::MatrixXd A_cl = A + B * art.terminal.K_omega;
  art.lyapunov_residual_S =
      (A_cl.transpose() * art.terminal.S * A_cl - art.terminal.S + Q +
       art.terminal.K_omega.transpose() * R * art.terminal.K_omega)
          .cwiseAbs()
          .maxCoeff();
  return art;
}

inline void save_synthesis(std::ostream& os, const SynthesisArtifacts& a) {
  os << "rtmpc_synthesis_v1\n";
  os << "tube_law " << to_string(a.law) << '\n';
  os << "K\n";
  io::write_matrix(os, a.tube.K);
  os << "P\n";
  io::write_matrix(os, a.tube.P);
  os << "rho " << io::fmt(a.tube.rho) << '\n';
  os << "Xi " << io::fmt(a.tube.Xi) << '\n';
  os << "g\n";
  io::write_vector(os, a.tube.g);
  os << "d_max " << io::fmt(a.tube.d_max) << '\n';
  os << "s_inf " << io::fmt(a.tube.s_inf) << '\n';
  os << "K_omega\n";
  io::write_matrix(os, a.terminal.K_omega);
  os << "S\n";
  io::write_matrix(os, a.terminal.S);
  os << "gamma1 " << io::fmt(a.terminal.gamma1) << '\n';
  os << "gamma2 " << io::fmt(a.terminal.gamma2) << '\n';
  os << "lyapunov_residual_P " << io::fmt(a.lyapunov_residual_P) << '\n';
  os << "lyapunov_residual_S " << io::fmt(a.lyapunov_residual_S) << '\n';
}

inline SynthesisArtifacts load_synthesis(std::istream& is) {
  io::expect_tag(is, "rtmpc_synthesis_v1");
  SynthesisArtifacts a;
  std::string law;
  io::expect_tag(is, "tube_law");
  is >> law;
  a.law = tube_law_from_string(law);
  io::expect_tag(is, "K");
  a.tube.K = io::read_matrix(is);
  io::expect_tag(is, "P");
  a.tube.P = io::read_matrix(is);
  io::expect_tag(is, "rho");
  is >> a.tube.rho;
  io::expect_tag(is, "Xi");
  is >> a.tube.Xi;
  io::expect_tag(is, "g");
  a.tube.g = io::read_vector(is);
  io::expect_tag(is, "d_max");
  is >> a.tube.d_max;
  io::expect_tag(is, "s_inf");
  is >> a.tube.s_inf;
  io::expect_tag(is, "K_omega");
  a.terminal.K_omega = io::read_matrix(is);
  io::expect_tag(is, "S");
  a.terminal.S = io::read_matrix(is);
  io::expect_tag(is, "gamma1");
  is >> a.terminal.gamma1;
  io::expect_tag(is, "gamma2");
  is >> a.terminal.gamma2;
  io::expect_tag(is, "lyapunov_residual_P");
  is >> a.lyapunov_residual_P;
  io::expect_tag(is, "lyapunov_residual_S");
  is >> a.lyapunov_residual_S;
  return a;
}

}  // namespace rtmpc
