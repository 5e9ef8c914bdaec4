#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "rtmpc/rng.hpp"
#include "rtmpc/text_io.hpp"

namespace rtmpc {

// Random Fourier Feature basis approximating the RBF kernel
// exp(-||z - z'||^2 / (2 sigma^2)) via phi(z)^T phi(z').
// Immutable after construction; safe for concurrent evaluation.
struct RffBasis {
  Eigen::MatrixXd frequencies;  // D x input_dim
  Eigen::VectorXd phases;       // D, each in [0, 2*pi)
  double length_scale = 1.0;
  int feature_count = 0;
  int input_dim = 0;
  std::uint64_t seed = 0;
};

inline RffBasis sample_basis(int input_dim, int feature_count, double length_scale,
                             std::uint64_t seed) {
  if (input_dim < 1) throw std::invalid_argument("sample_basis: input_dim must be >= 1");
  if (feature_count < 1) throw std::invalid_argument("sample_basis: feature_count must be >= 1");
  if (!(length_scale > 0.0)) throw std::invalid_argument("sample_basis: length_scale must be > 0");

  RffBasis basis;
  basis.length_scale = length_scale;
  basis.feature_count = feature_count;
  basis.input_dim = input_dim;
  basis.seed = seed;
  basis.frequencies.resize(feature_count, input_dim);
  basis.phases.resize(feature_count);

  Rng rng(seed);
  const double inv_sigma = 1.0 / length_scale;
  for (int i = 0; i < feature_count; ++i)
    for (int j = 0; j < input_dim; ++j) basis.frequencies(i, j) = inv_sigma * rng.normal();
  for (int i = 0; i < feature_count; ++i) basis.phases(i) = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return basis;
}

// phi(z)_i = sqrt(2/D) cos(omega_i^T z + b_i), written into a caller buffer
// so the per-step MPC path allocates nothing.
inline void features_into(const RffBasis& basis, const Eigen::VectorXd& z,
                          Eigen::Ref<Eigen::VectorXd> out) {
  if (z.size() != basis.input_dim)
    throw std::invalid_argument("features: input dimension mismatch");
  if (out.size() != basis.feature_count)
    throw std::invalid_argument("features: output buffer size mismatch");
  const double scale = std::sqrt(2.0 / basis.feature_count);
  out.noalias() = basis.frequencies * z;
  out += basis.phases;
  out = scale * out.array().cos();
}

inline Eigen::VectorXd features(const RffBasis& basis, const Eigen::VectorXd& z) {
  Eigen::VectorXd out(basis.feature_count);
  features_into(basis, z, out);
  return out;
}

// d phi / d z, row i = -sqrt(2/D) sin(omega_i^T z + b_i) omega_i^T.
inline void feature_jacobian_into(const RffBasis& basis, const Eigen::VectorXd& z,
                                  Eigen::Ref<Eigen::MatrixXd> out) {
  if (z.size() != basis.input_dim)
    throw std::invalid_argument("feature_jacobian: input dimension mismatch");
  if (out.rows() != basis.feature_count || out.cols() != basis.input_dim)
    throw std::invalid_argument("feature_jacobian: output buffer shape mismatch");
  const double scale = std::sqrt(2.0 / basis.feature_count);
  Eigen::VectorXd arg = basis.frequencies * z + basis.phases;
  out = (-scale * arg.array().sin()).matrix().asDiagonal() * basis.frequencies;
}

inline Eigen::MatrixXd feature_jacobian(const RffBasis& basis, const Eigen::VectorXd& z) {
  Eigen::MatrixXd out(basis.feature_count, basis.input_dim);
  feature_jacobian_into(basis, z, out);
  return out;
}

inline double exact_kernel(const Eigen::VectorXd& z, const Eigen::VectorXd& zp,
                           double length_scale) {
  if (z.size() != zp.size()) throw std::invalid_argument("exact_kernel: dimension mismatch");
  if (!(length_scale > 0.0)) throw std::invalid_argument("exact_kernel: length_scale must be > 0");
  return std::exp(-(z - zp).squaredNorm() / (2.0 * length_scale * length_scale));
}

// Median pairwise distance over the given sample of inputs (rows of Z).
// Standard data-scale-aware default for the kernel length scale.
inline double median_length_scale(const Eigen::MatrixXd& Z) {
  const Eigen::Index n = Z.rows();
  if (n < 2) throw std::invalid_argument("median_length_scale: need at least 2 samples");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back((Z.row(i) - Z.row(j)).norm());
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

inline void save_basis(std::ostream& os, const RffBasis& b) {
  os << "rff_basis_v1\n";
  os << "seed " << b.seed << '\n';
  os << "length_scale " << io::fmt(b.length_scale) << '\n';
  os << "feature_count " << b.feature_count << '\n';
  os << "input_dim " << b.input_dim << '\n';
  os << "frequencies\n";
  io::write_matrix(os, b.frequencies);
  os << "phases\n";
  io::write_vector(os, b.phases);
}

inline RffBasis load_basis(std::istream& is) {
  io::expect_tag(is, "rff_basis_v1");
  RffBasis b;
  io::expect_tag(is, "seed");
  is >> b.seed;
  io::expect_tag(is, "length_scale");
  is >> b.length_scale;
  io::expect_tag(is, "feature_count");
  is >> b.feature_count;
  io::expect_tag(is, "input_dim");
  is >> b.input_dim;
  io::expect_tag(is, "frequencies");
  b.frequencies = io::read_matrix(is);
  io::expect_tag(is, "phases");
  b.phases = io::read_vector(is);
  if (b.frequencies.rows() != b.feature_count || b.frequencies.cols() != b.input_dim ||
      b.phases.size() != b.feature_count)
    throw std::runtime_error("load_basis: inconsistent dimensions");
  return b;
}

}  // namespace rtmpc
