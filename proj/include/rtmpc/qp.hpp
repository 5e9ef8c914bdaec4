#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

namespace rtmpc {

// Dense operator-splitting (ADMM) solver for
//   min 1/2 x^T P x + q^T x   s.t.  l <= A x <= u
// with equality rows encoded as l = u. Small dense problems only: the
// regularized KKT matrix is factorized once per solve.
struct QpProblem {
  Eigen::MatrixXd P;  // nv x nv, symmetric PSD
  Eigen::VectorXd q;
  Eigen::MatrixXd A;  // nc x nv
  Eigen::VectorXd l, u;
};

enum class QpStatus { kSolved, kMaxIter, kPrimalInfeasible };

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers for l <= Ax <= u
  QpStatus status = QpStatus::kMaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

struct QpSettings {
  double eps = 1e-8;
  int max_iter = 20000;
  double sigma = 1e-6;      // proximal regularization
  double rho_ineq = 1e-1;   // step size on inequality rows
  double rho_eq_scale = 1e3;
  double relaxation = 1.6;  // over-relaxation factor
  int check_interval = 10;
  int polish_interval = 100;  // in-loop early-exit polish cadence
  bool polish = true;
};

class QpSolver {
 public:
  QpResult solve(const QpProblem& prob, const QpSettings& settings = {},
                 const Eigen::VectorXd* x_warm = nullptr,
                 const Eigen::VectorXd* y_warm = nullptr) const {
    const Eigen::Index nv = prob.P.rows();
    const Eigen::Index nc = prob.A.rows();

    // Ruiz equilibration plus cost normalization; ADMM runs on the scaled
    // problem, all termination checks use unscaled residuals.
    QpProblem sp = prob;
    const Scaling sc = equilibrate(&sp);

    Eigen::VectorXd rho(nc);
    for (Eigen::Index i = 0; i < nc; ++i) {
      const bool eq = prob.u(i) - prob.l(i) < 1e-14;
      rho(i) = eq ? settings.rho_ineq * settings.rho_eq_scale : settings.rho_ineq;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    auto factorize = [&]() {
      Eigen::MatrixXd kkt = sp.P;
      kkt.diagonal().array() += settings.sigma;
      kkt.noalias() += sp.A.transpose() * rho.asDiagonal() * sp.A;
      ldlt.compute(kkt);
    };
    factorize();

    // Scaled iterates: x = D xs, y = E ys / c.
    Eigen::VectorXd xs = Eigen::VectorXd::Zero(nv);
    if (x_warm && x_warm->size() == nv) xs = x_warm->cwiseQuotient(sc.D);
    Eigen::VectorXd ys = Eigen::VectorXd::Zero(nc);
    if (y_warm && y_warm->size() == nc)
      ys = sc.c * y_warm->cwiseQuotient(sc.E);
    Eigen::VectorXd z = (sp.A * xs).cwiseMax(sp.l).cwiseMin(sp.u);

    QpResult res;
    const double ra = settings.relaxation;
    Eigen::VectorXd ax(nc), rhs(nv), ztil(nc), xt(nv);
    Eigen::VectorXd y_prev = ys;
    for (int it = 1; it <= settings.max_iter; ++it) {
      rhs = settings.sigma * xs - sp.q + sp.A.transpose() * (rho.asDiagonal() * z - ys);
      xt = ldlt.solve(rhs);
      xs = ra * xt + (1.0 - ra) * xs;
      ax = ra * (sp.A * xt) + (1.0 - ra) * z;
      ztil = ax + rho.cwiseInverse().asDiagonal() * ys;
      z = ztil.cwiseMax(sp.l).cwiseMin(sp.u);
      ys += rho.asDiagonal() * (ax - z);
      res.iterations = it;

      // The active set usually settles long before the splitting iteration
      // reaches full accuracy; a successful polish exits early.
      if (settings.polish && it % settings.polish_interval == 0) {
        QpResult cand;
        cand.x = sc.D.cwiseProduct(xs);
        cand.y = sc.E.cwiseProduct(ys) / sc.c;
        cand.iterations = it;
        polish(prob, settings, &cand);
        if (cand.status == QpStatus::kSolved) return cand;
      }

      if (it % settings.check_interval == 0 || it == settings.max_iter) {
        ax.noalias() = sp.A * xs;
        // Unscaled residuals.
        res.primal_residual = (ax - z).cwiseQuotient(sc.E).cwiseAbs().maxCoeff();
        res.dual_residual = (sp.P * xs + sp.q + sp.A.transpose() * ys)
                                .cwiseQuotient(sc.D)
                                .cwiseAbs()
                                .maxCoeff() /
                            sc.c;
        if (res.primal_residual <= settings.eps && res.dual_residual <= settings.eps) {
          res.status = QpStatus::kSolved;
          break;
        }
        if (is_infeasibility_certificate(sp, ys - y_prev)) {
          res.status = QpStatus::kPrimalInfeasible;
          break;
        }
        y_prev = ys;

        // Residual-balancing step-size adaptation with refactorization.
        const double pn = std::max({(ax.cwiseQuotient(sc.E)).cwiseAbs().maxCoeff(),
                                    (z.cwiseQuotient(sc.E)).cwiseAbs().maxCoeff(), 1e-12});
        const double dn =
            std::max({((sp.P * xs).cwiseQuotient(sc.D)).cwiseAbs().maxCoeff() / sc.c,
                      ((sp.A.transpose() * ys).cwiseQuotient(sc.D)).cwiseAbs().maxCoeff() / sc.c,
                      sp.q.cwiseQuotient(sc.D).cwiseAbs().maxCoeff() / sc.c, 1e-12});
        const double ratio = (res.primal_residual / pn) / (res.dual_residual / dn + 1e-300);
        const double factor = std::sqrt(ratio);
        if (factor > 5.0 || factor < 0.2) {
          rho *= std::min(std::max(factor, 1e-4), 1e4);
          for (Eigen::Index i = 0; i < nc; ++i)
            rho(i) = std::min(std::max(rho(i), 1e-8), 1e8);
          factorize();
        }
      }
    }

    // Unscale before polishing on the original data.
    res.x = sc.D.cwiseProduct(xs);
    res.y = sc.E.cwiseProduct(ys) / sc.c;
    if (settings.polish &&
        (res.status == QpStatus::kSolved || res.status == QpStatus::kMaxIter))
      polish(prob, settings, &res);
    return res;
  }

 private:
  struct Scaling {
    Eigen::VectorXd D, E;
    double c = 1.0;
  };

  // Modified Ruiz equilibration of [P A^T; A 0] with OSQP-style cost scaling.
  // Rewrites *sp in place and returns the diagonal scalings.
  static Scaling equilibrate(QpProblem* sp) {
    const Eigen::Index nv = sp->P.rows();
    const Eigen::Index nc = sp->A.rows();
    Scaling sc;
    sc.D = Eigen::VectorXd::Ones(nv);
    sc.E = Eigen::VectorXd::Ones(nc);
    for (int pass = 0; pass < 10; ++pass) {
      Eigen::VectorXd d(nv), e(nc);
      for (Eigen::Index j = 0; j < nv; ++j) {
        double m = sp->P.col(j).cwiseAbs().maxCoeff();
        if (nc > 0) m = std::max(m, sp->A.col(j).cwiseAbs().maxCoeff());
        d(j) = m > 1e-12 ? 1.0 / std::sqrt(m) : 1.0;
      }
      for (Eigen::Index i = 0; i < nc; ++i) {
        const double m = sp->A.row(i).cwiseAbs().maxCoeff();
        e(i) = m > 1e-12 ? 1.0 / std::sqrt(m) : 1.0;
      }
      sp->P = d.asDiagonal() * sp->P * d.asDiagonal();
      sp->A = e.asDiagonal() * sp->A * d.asDiagonal();
      sp->q = d.cwiseProduct(sp->q);
      sc.D = sc.D.cwiseProduct(d);
      sc.E = sc.E.cwiseProduct(e);

      double pcol = 0.0;
      for (Eigen::Index j = 0; j < nv; ++j) pcol += sp->P.col(j).cwiseAbs().maxCoeff();
      pcol /= static_cast<double>(nv);
      const double qn = sp->q.cwiseAbs().maxCoeff();
      const double gamma = 1.0 / std::max({pcol, qn, 1e-12});
      sp->P *= gamma;
      sp->q *= gamma;
      sc.c *= gamma;
    }
    // Infinite bounds stay infinite under a positive scale.
    sp->l = sc.E.cwiseProduct(sp->l);
    sp->u = sc.E.cwiseProduct(sp->u);
    return sc;
  }
  // Primal infeasibility certificate from the dual update direction dy:
  // A^T dy ~ 0 with support function u^T (dy)_+ + l^T (dy)_- < 0 proves the
  // constraint set empty (rows with an infinite bound must not contribute).
  static bool is_infeasibility_certificate(const QpProblem& prob, Eigen::VectorXd dy) {
    const double scale = dy.cwiseAbs().maxCoeff();
    if (!(scale > 1e-12)) return false;
    dy /= scale;
    const double tol = 1e-5;
    double support = 0.0;
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
      if (dy(i) > tol) {
        if (!std::isfinite(prob.u(i))) return false;
        support += prob.u(i) * dy(i);
      } else if (dy(i) < -tol) {
        if (!std::isfinite(prob.l(i))) return false;
        support += prob.l(i) * dy(i);
      }
    }
    const double aty = (prob.A.transpose() * dy).cwiseAbs().maxCoeff();
    return aty <= tol && support < -tol;
  }

  // Solve the equality-constrained KKT system on the detected active set,
  // recovering near-machine-precision solutions from the ADMM iterate.
  static void polish(const QpProblem& prob, const QpSettings& settings, QpResult* res) {
    const Eigen::Index nv = prob.P.rows();
    const Eigen::Index nc = prob.A.rows();
    const double tol = std::sqrt(std::max(settings.eps, 1e-12));
    std::vector<Eigen::Index> active;
    Eigen::VectorXd ax = prob.A * res->x;
    for (Eigen::Index i = 0; i < nc; ++i) {
      const bool eq = prob.u(i) - prob.l(i) < 1e-14;
      if (eq || ax(i) - prob.l(i) < tol || prob.u(i) - ax(i) < tol ||
          std::abs(res->y(i)) > tol)
        active.push_back(i);
    }
    const Eigen::Index na = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nv + na, nv + na);
    kkt.topLeftCorner(nv, nv) = prob.P;
    kkt.topLeftCorner(nv, nv).diagonal().array() += 1e-12;
    kkt.bottomRightCorner(na, na).diagonal().array() -= 1e-12;
    Eigen::VectorXd rhs(nv + na);
    rhs.head(nv) = -prob.q;
    for (Eigen::Index k = 0; k < na; ++k) {
      const Eigen::Index i = active[k];
      kkt.block(nv + k, 0, 1, nv) = prob.A.row(i);
      kkt.block(0, nv + k, nv, 1) = prob.A.row(i).transpose();
      const bool at_upper = prob.u(i) - ax(i) <= ax(i) - prob.l(i);
      rhs(nv + k) = at_upper ? prob.u(i) : prob.l(i);
    }
    // The KKT matrix is an indefinite saddle-point system; LDLT is only valid
    // for semidefinite matrices and silently corrupts the constraint rows.
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    if (!sol.allFinite()) return;

    Eigen::VectorXd x_new = sol.head(nv);
    Eigen::VectorXd y_new = Eigen::VectorXd::Zero(nc);
    for (Eigen::Index k = 0; k < na; ++k) y_new(active[k]) = sol(nv + k);

    // Reject sign-inconsistent multipliers on one-sided rows.
    for (Eigen::Index k = 0; k < na; ++k) {
      const Eigen::Index i = active[k];
      if (prob.u(i) - prob.l(i) < 1e-14) continue;
      const bool at_upper = prob.u(i) - ax(i) <= ax(i) - prob.l(i);
      if ((at_upper && y_new(i) < -tol) || (!at_upper && y_new(i) > tol)) return;
    }

    // Accept only if the polished point is at least as good on all KKT
    // residuals: primal feasibility, stationarity, and complementarity. The
    // last one matters: a corrupted solve can park a row strictly inside its
    // bound while keeping a positive multiplier, which the one-sided primal
    // measure alone would never see.
    auto residuals = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
      const Eigen::VectorXd v = prob.A * x;
      const double prim =
          ((v - prob.u).cwiseMax(0.0) + (prob.l - v).cwiseMax(0.0)).cwiseAbs().maxCoeff();
      const double dual = (prob.P * x + prob.q + prob.A.transpose() * y).cwiseAbs().maxCoeff();
      double comp = 0.0;
      for (Eigen::Index i = 0; i < nc; ++i) {
        if (y(i) > 0.0 && std::isfinite(prob.u(i)))
          comp = std::max(comp, y(i) * std::max(prob.u(i) - v(i), 0.0));
        else if (y(i) < 0.0 && std::isfinite(prob.l(i)))
          comp = std::max(comp, -y(i) * std::max(v(i) - prob.l(i), 0.0));
      }
      return std::max({prim, dual, comp});
    };
    const double before = residuals(res->x, res->y);
    const double after = residuals(x_new, y_new);
    if (after <= before) {
      res->x = std::move(x_new);
      res->y = std::move(y_new);
      res->primal_residual = after;
      res->dual_residual = after;
      if (after <= settings.eps) res->status = QpStatus::kSolved;
    }
  }
};

}  // namespace rtmpc
