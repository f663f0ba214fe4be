#pragma once

// Exponentiated-gradient updates on the simplex:
//   p'_j = p_j * exp(eta * sum_i b_i A_ij) / Z

#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "lmo/error.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/simplex.hpp"

namespace lmo {

struct EgdConfig {
  double eta = 0.2;
  std::optional<double> gamma;  // EMA coefficient over normalized matrices

  void check() const {
    require(eta > 0.0 && std::isfinite(eta), ErrorCode::InvalidArgument, "step size must be positive");
    if (gamma) require(*gamma >= 0.0 && *gamma < 1.0, ErrorCode::GammaOutOfRange, "gamma must lie in [0, 1)");
  }
};

/// Update scores eta * (b^T A)_j. A may be r x m with b of length r (r = 1 for a
/// single out-of-domain loss).
inline Eigen::VectorXd egd_scores(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double eta) {
  return eta * (A.transpose() * b);
}

/// One EGD step computed in log space. Zero entries of p stay zero.
inline MixtureProportions egd_step(const MixtureProportions& p, const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                   double eta) {
  const auto m = static_cast<Eigen::Index>(p.size());
  require(A.cols() == m && A.rows() == b.size(), ErrorCode::DimensionMismatch,
          "matrix columns must match groups and rows must match b");
  require(eta > 0.0 && std::isfinite(eta), ErrorCode::InvalidArgument, "step size must be positive");
  const Eigen::VectorXd score = egd_scores(A, b, eta);
  require(score.allFinite(), ErrorCode::ZeroMass, "non-finite update scores");

  Eigen::VectorXd logw(m);
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < m; ++j) {
    logw[j] = p[static_cast<std::size_t>(j)] > 0.0 ? std::log(p[static_cast<std::size_t>(j)]) + score[j]
                                                    : -std::numeric_limits<double>::infinity();
    top = std::max(top, logw[j]);
  }
  require(std::isfinite(top), ErrorCode::ZeroMass, "all mass vanished");
  // Scalar exp: Eigen's vectorized exp clamps -inf to a denormal.
  Eigen::VectorXd w(m);
  for (Eigen::Index j = 0; j < m; ++j) w[j] = std::exp(logw[j] - top);
  w /= w.sum();
  return MixtureProportions::validate(w);
}

inline MixtureProportions egd_step(const MixtureProportions& p, const InteractionMatrix& A, const Eigen::VectorXd& b,
                                   double eta) {
  return egd_step(p, A.entries, b, eta);
}

/// A / ||A||_F.
inline InteractionMatrix normalize_interaction(const InteractionMatrix& A) {
  const double norm = A.entries.norm();
  require(norm > 0.0, ErrorCode::ZeroMatrix, "cannot normalize a zero matrix");
  require(std::isfinite(norm), ErrorCode::InvalidArgument, "non-finite matrix");
  return {A.entries / norm, A.horizon_steps};
}

/// First call (no previous average) returns the current matrix; afterwards
/// (1 - gamma) * current + gamma * previous.
inline InteractionMatrix ema_interaction(const std::optional<InteractionMatrix>& previous,
                                         const InteractionMatrix& current, double gamma) {
  require(gamma >= 0.0 && gamma < 1.0, ErrorCode::GammaOutOfRange, "gamma must lie in [0, 1)");
  if (!previous) return current;
  require(previous->entries.rows() == current.entries.rows() && previous->entries.cols() == current.entries.cols(),
          ErrorCode::DimensionMismatch, "EMA operands differ in shape");
  return {(1.0 - gamma) * current.entries + gamma * previous->entries, current.horizon_steps};
}

}  // namespace lmo
