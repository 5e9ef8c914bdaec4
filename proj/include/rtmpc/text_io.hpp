#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace rtmpc::io {

// "%.17g" round-trips IEEE doubles exactly, keeping text artifacts
// byte-stable across runs.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << fmt(m(i, j));
    }
    os << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0)
    throw std::runtime_error("read_matrix: malformed header");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(is >> m(i, j))) throw std::runtime_error("read_matrix: truncated data");
  return m;
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  os << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << fmt(v(i));
  }
  os << '\n';
}

inline Eigen::VectorXd read_vector(std::istream& is) {
  Eigen::Index n = 0;
  if (!(is >> n) || n < 0) throw std::runtime_error("read_vector: malformed header");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> v(i))) throw std::runtime_error("read_vector: truncated data");
  return v;
}

// Reads one token and checks it against the expected tag.
inline void expect_tag(std::istream& is, const std::string& tag) {
  std::string tok;
  if (!(is >> tok) || tok != tag)
    throw std::runtime_error("expected tag '" + tag + "', got '" + tok + "'");
}

}  // namespace rtmpc::io
