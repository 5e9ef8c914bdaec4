#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "rtmpc/rff.hpp"
#include "rtmpc/text_io.hpp"

namespace rtmpc {

// x+ = A x + B u, outputs y = C x + D u. State feedback uses C = I, D = 0.
struct LinearBaseline {
  Eigen::MatrixXd A, B, C, D;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }

  void validate() const {
    if (A.rows() != A.cols()) throw std::invalid_argument("LinearBaseline: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("LinearBaseline: B row mismatch");
    if (C.size() > 0 && C.cols() != A.rows())
      throw std::invalid_argument("LinearBaseline: C column mismatch");
    if (D.size() > 0 && (D.rows() != C.rows() || D.cols() != B.cols()))
      throw std::invalid_argument("LinearBaseline: D shape mismatch");
  }

  static LinearBaseline state_feedback(Eigen::MatrixXd A, Eigen::MatrixXd B) {
    LinearBaseline m;
    const Eigen::Index n = A.rows();
    const Eigen::Index nin = B.cols();
    m.A = std::move(A);
    m.B = std::move(B);
    m.C = Eigen::MatrixXd::Identity(n, n);
    m.D = Eigen::MatrixXd::Zero(n, nin);
    m.validate();
    return m;
  }
};

// Axis-aligned box of admissible states and inputs.
struct Domain {
  Eigen::VectorXd state_lo, state_hi;
  Eigen::VectorXd input_lo, input_hi;

  void validate() const {
    if (state_lo.size() != state_hi.size() || input_lo.size() != input_hi.size())
      throw std::invalid_argument("Domain: bound size mismatch");
    if (((state_hi - state_lo).array() <= 0.0).any() ||
        ((input_hi - input_lo).array() <= 0.0).any())
      throw std::invalid_argument("Domain: lower bound must be < upper bound");
  }

  int state_dim() const { return static_cast<int>(state_lo.size()); }
  int input_dim() const { return static_cast<int>(input_lo.size()); }

  bool contains(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return (x.array() >= state_lo.array()).all() && (x.array() <= state_hi.array()).all() &&
           (u.array() >= input_lo.array()).all() && (u.array() <= input_hi.array()).all();
  }
};

using DynamicsOracle =
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;

struct ResidualDataset {
  Eigen::MatrixXd inputs;   // M x (n+m), rows z_i = (x_i, u_i)
  Eigen::MatrixXd targets;  // M x n, rows r_i = f(x_i,u_i) - (A x_i + B u_i)
  std::uint64_t seed = 0;
  Domain domain;
};

inline ResidualDataset generate_dataset(const DynamicsOracle& true_dynamics,
                                        const LinearBaseline& baseline, const Domain& domain,
                                        int count, std::uint64_t seed) {
  baseline.validate();
  domain.validate();
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  const int n = domain.state_dim();
  const int m = domain.input_dim();
  if (baseline.state_dim() != n || baseline.input_dim() != m)
    throw std::invalid_argument("generate_dataset: baseline/domain dimension mismatch");

  ResidualDataset ds;
  ds.seed = seed;
  ds.domain = domain;
  ds.inputs.resize(count, n + m);
  ds.targets.resize(count, n);

  Rng rng(seed);
  Eigen::VectorXd x(n), u(m);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < n; ++j) x(j) = rng.uniform(domain.state_lo(j), domain.state_hi(j));
    for (int j = 0; j < m; ++j) u(j) = rng.uniform(domain.input_lo(j), domain.input_hi(j));
    const Eigen::VectorXd next = true_dynamics(x, u);
    if (next.size() != n || !next.allFinite())
      throw std::runtime_error("generate_dataset: oracle returned non-finite state at sample " +
                               std::to_string(i));
    ds.inputs.row(i).head(n) = x;
    ds.inputs.row(i).tail(m) = u;
    ds.targets.row(i) = (next - baseline.A * x - baseline.B * u).transpose();
  }
  return ds;
}

// Ridge regression in feature space: W = (Phi Phi^T + lambda I)^{-1} Phi R,
// solved by Cholesky of the D x D normal matrix.
inline Eigen::MatrixXd fit_ridge(const ResidualDataset& dataset, const RffBasis& basis,
                                 double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_ridge: lambda must be > 0");
  if (dataset.inputs.cols() != basis.input_dim)
    throw std::invalid_argument("fit_ridge: dataset/basis input dimension mismatch");
  const int D = basis.feature_count;
  const Eigen::Index M = dataset.inputs.rows();

  Eigen::MatrixXd Phi(D, M);  // columns phi(z_i)
  Eigen::VectorXd phi(D);
  for (Eigen::Index i = 0; i < M; ++i) {
    features_into(basis, dataset.inputs.row(i).transpose(), phi);
    Phi.col(i) = phi;
  }
  Eigen::MatrixXd G = Phi * Phi.transpose();
  G.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("fit_ridge: Cholesky factorization failed (numerical breakdown)");
  return llt.solve(Phi * dataset.targets);
}

// Learned residual r(x,u) ~= W^T phi(x,u) with its deterministic error bound.
struct ResidualModel {
  RffBasis basis;
  Eigen::MatrixXd weights;  // D x n
  double lambda = 0.0;
  double d_max = 0.0;       // beta * max validation error
  double beta = 1.0;
  int validation_count = 0;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& z) const {
    return weights.transpose() * features(basis, z);
  }
};

// Validation-set bound d_max = beta * max_j ||r_j - W^T phi(z_j)||_2 over a
// fresh uniform sample. The validation seed must differ from training.
inline double quantify_error(const ResidualModel& model, const DynamicsOracle& true_dynamics,
                             const LinearBaseline& baseline, const Domain& domain,
                             int validation_count, double beta, std::uint64_t seed) {
  if (validation_count < 1) throw std::invalid_argument("quantify_error: N_val must be >= 1");
  if (!(beta > 1.0)) throw std::invalid_argument("quantify_error: beta must be > 1");
  const ResidualDataset val = generate_dataset(true_dynamics, baseline, domain, validation_count, seed);
  double max_err = 0.0;
  Eigen::VectorXd phi(model.basis.feature_count);
  for (Eigen::Index j = 0; j < val.inputs.rows(); ++j) {
    features_into(model.basis, val.inputs.row(j).transpose(), phi);
    const double err = (val.targets.row(j).transpose() - model.weights.transpose() * phi).norm();
    max_err = std::max(max_err, err);
  }
  return beta * max_err;
}

// Linear baseline plus optional learned residual correction.
struct HybridModel {
  LinearBaseline baseline;
  std::optional<ResidualModel> residual;

  bool has_residual() const { return residual.has_value(); }

  Eigen::VectorXd predict(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    if (x.size() != baseline.state_dim() || u.size() != baseline.input_dim())
      throw std::invalid_argument("HybridModel::predict: dimension mismatch");
    Eigen::VectorXd next = baseline.A * x + baseline.B * u;
    if (residual) {
      Eigen::VectorXd z(x.size() + u.size());
      z << x, u;
      next += residual->evaluate(z);
    }
    return next;
  }

  double d_max() const { return residual ? residual->d_max : 0.0; }
};

inline void save_domain(std::ostream& os, const Domain& d) {
  os << "domain\n";
  io::write_vector(os, d.state_lo);
  io::write_vector(os, d.state_hi);
  io::write_vector(os, d.input_lo);
  io::write_vector(os, d.input_hi);
}

inline Domain load_domain(std::istream& is) {
  io::expect_tag(is, "domain");
  Domain d;
  d.state_lo = io::read_vector(is);
  d.state_hi = io::read_vector(is);
  d.input_lo = io::read_vector(is);
  d.input_hi = io::read_vector(is);
  d.validate();
  return d;
}

// Trained-model artifact written by `train`, read by `simulate`/`compare`.
struct ModelArtifact {
  HybridModel model;
  Domain domain;
  std::uint64_t train_seed = 0;
  std::uint64_t validation_seed = 0;
  double d_max_linear = 0.0;  // W = 0 bound over the same validation set
};

inline void save_artifact(std::ostream& os, const ModelArtifact& a) {
  os << "rtmpc_model_v1\n";
  os << "baseline\n";
  io::write_matrix(os, a.model.baseline.A);
  io::write_matrix(os, a.model.baseline.B);
  io::write_matrix(os, a.model.baseline.C);
  io::write_matrix(os, a.model.baseline.D);
  save_domain(os, a.domain);
  os << "train_seed " << a.train_seed << '\n';
  os << "validation_seed " << a.validation_seed << '\n';
  os << "d_max_linear " << io::fmt(a.d_max_linear) << '\n';
  os << "has_residual " << (a.model.has_residual() ? 1 : 0) << '\n';
  if (a.model.has_residual()) {
    const ResidualModel& r = *a.model.residual;
    save_basis(os, r.basis);
    os << "weights\n";
    io::write_matrix(os, r.weights);
    os << "lambda " << io::fmt(r.lambda) << '\n';
    os << "beta " << io::fmt(r.beta) << '\n';
    os << "d_max " << io::fmt(r.d_max) << '\n';
    os << "validation_count " << r.validation_count << '\n';
  }
}

inline ModelArtifact load_artifact(std::istream& is) {
  io::expect_tag(is, "rtmpc_model_v1");
  ModelArtifact a;
  io::expect_tag(is, "baseline");
  a.model.baseline.A = io::read_matrix(is);
  a.model.baseline.B = io::read_matrix(is);
  a.model.baseline.C = io::read_matrix(is);
  a.model.baseline.D = io::read_matrix(is);
  a.model.baseline.validate();
  a.domain = load_domain(is);
  io::expect_tag(is, "train_seed");
  is >> a.train_seed;
  io::expect_tag(is, "validation_seed");
  is >> a.validation_seed;
  io::expect_tag(is, "d_max_linear");
  is >> a.d_max_linear;
  io::expect_tag(is, "has_residual");
  int has = 0;
  is >> has;
  if (has) {
    ResidualModel r;
    r.basis = load_basis(is);
    io::expect_tag(is, "weights");
    r.weights = io::read_matrix(is);
    io::expect_tag(is, "lambda");
    is >> r.lambda;
    io::expect_tag(is, "beta");
    is >> r.beta;
    io::expect_tag(is, "d_max");
    is >> r.d_max;
    io::expect_tag(is, "validation_count");
    is >> r.validation_count;
    a.model.residual = std::move(r);
  }
  return a;
}

}  // namespace rtmpc
