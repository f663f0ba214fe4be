#pragma once

// Log-linear static and linear dynamic mixing laws: evaluation, fitting and goodness of fit.
//
//   static:   L_i(p)       = c_i + b_i * exp(-sum_j A_ij p_j)
//   dynamic:  L_i^{t+1}(p) = L_i^t - sum_j A_ij p_j        (scale absorbed into A)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmo/error.hpp"
#include "lmo/simplex.hpp"

namespace lmo {

class StaticLawParams {
 public:
  StaticLawParams(Eigen::MatrixXd A, Eigen::VectorXd b, Eigen::VectorXd c)
      : A_(std::move(A)), b_(std::move(b)), c_(std::move(c)) {
    const auto m = A_.rows();
    require(m >= 1 && A_.cols() == m && b_.size() == m && c_.size() == m, ErrorCode::DimensionMismatch,
            "static law needs square A and matching b, c");
    require(A_.allFinite() && b_.allFinite() && c_.allFinite(), ErrorCode::InvalidParams, "non-finite parameter");
    require((b_.array() > 0.0).all(), ErrorCode::InvalidParams, "every b_i must be positive");
  }

  Eigen::Index groups() const noexcept { return A_.rows(); }
  const Eigen::MatrixXd& A() const noexcept { return A_; }
  const Eigen::VectorXd& b() const noexcept { return b_; }
  const Eigen::VectorXd& c() const noexcept { return c_; }

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
  Eigen::VectorXd c_;
};

/// Linear-dynamic parameters. `horizon_steps` records how many trainer steps the
/// matrix was estimated over (0 when not applicable).
struct InteractionMatrix {
  Eigen::MatrixXd entries;
  std::int64_t horizon_steps = 0;

  Eigen::Index groups() const noexcept { return entries.rows(); }
  Eigen::RowVectorXd column_sums() const { return entries.colwise().sum(); }
};

struct FitReport {
  double mse = 0.0;
  double r_squared = 1.0;
  Eigen::VectorXd per_group_r_squared;
  Eigen::MatrixXd residuals;  // groups x samples, predicted - observed
  int restarts_used = 0;
};

/// One (L^t, p^t, L^{t+1}) observation of the dynamic law.
struct LossTriple {
  Eigen::VectorXd before;
  MixtureProportions p;
  Eigen::VectorXd after;
};

struct StaticSample {
  MixtureProportions p;
  Eigen::VectorXd loss;
};

inline Eigen::VectorXd eval_static(const StaticLawParams& params, const MixtureProportions& p) {
  require(static_cast<Eigen::Index>(p.size()) == params.groups(), ErrorCode::DimensionMismatch,
          "proportions do not match law dimension");
  const Eigen::VectorXd exponent = -(params.A() * p.vector());
  return params.c().array() + params.b().array() * exponent.array().exp();
}

inline Eigen::VectorXd eval_dynamic(const InteractionMatrix& A, const Eigen::VectorXd& losses,
                                    const MixtureProportions& p) {
  require(A.entries.cols() == static_cast<Eigen::Index>(p.size()) && A.entries.rows() == losses.size(),
          ErrorCode::DimensionMismatch, "interaction matrix, losses and proportions disagree in size");
  return losses - A.entries * p.vector();
}

inline double r_squared_of(const Eigen::ArrayXd& predicted, const Eigen::ArrayXd& observed) {
  const double ss_res = (predicted - observed).square().sum();
  const double ss_tot = (observed - observed.mean()).square().sum();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

/// Pooled MSE and R^2 over all (group, sample) cells; inputs are groups x samples.
inline FitReport goodness(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& observed) {
  require(predicted.rows() == observed.rows() && predicted.cols() == observed.cols(), ErrorCode::ShapeMismatch,
          "predicted and observed shapes differ");
  require(observed.cols() >= 2 && observed.rows() >= 1, ErrorCode::ShapeMismatch, "need at least 2 samples");
  FitReport report;
  report.residuals = predicted - observed;
  report.mse = report.residuals.array().square().mean();
  const Eigen::Map<const Eigen::ArrayXd> pred(predicted.data(), predicted.size());
  const Eigen::Map<const Eigen::ArrayXd> obs(observed.data(), observed.size());
  report.r_squared = r_squared_of(pred, obs);
  report.per_group_r_squared.resize(observed.rows());
  for (Eigen::Index i = 0; i < observed.rows(); ++i)
    report.per_group_r_squared[i] =
        r_squared_of(predicted.row(i).transpose().array(), observed.row(i).transpose().array());
  return report;
}

struct StaticFitConfig {
  double huber_delta = 1e-3;
  int restarts = 32;
  int max_iterations = 500;
  double gradient_tolerance = 1e-10;
  std::uint64_t seed = 0;
};

namespace detail {

struct HuberGroupFit {
  Eigen::VectorXd theta;  // [A_i1..A_im, log b_i, c_i]
  double objective = std::numeric_limits<double>::infinity();
  bool converged = false;
};

inline double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

// Levenberg-Marquardt on the Huber objective of a single group's law, using the
// IRLS weights psi(r)/r so that J^T W r is the exact gradient.
inline HuberGroupFit fit_group_lm(const Eigen::MatrixXd& P, const Eigen::VectorXd& y, Eigen::VectorXd theta,
                                  const StaticFitConfig& cfg) {
  const Eigen::Index n = P.rows();
  const Eigen::Index m = P.cols();
  const Eigen::Index dim = m + 2;

  auto residuals = [&](const Eigen::VectorXd& th, Eigen::VectorXd& e) {
    e = (th[m] - (P * th.head(m)).array()).exp();  // b * exp(-A.p), with b = exp(u)
    return Eigen::VectorXd((e.array() + th[m + 1]).matrix() - y);
  };
  auto objective = [&](const Eigen::VectorXd& r) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < r.size(); ++k) s += huber(r[k], cfg.huber_delta);
    return s;
  };

  Eigen::VectorXd e;
  Eigen::VectorXd r = residuals(theta, e);
  double f = objective(r);
  double lambda = 1e-3;
  HuberGroupFit out;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    Eigen::MatrixXd J(n, dim);
    J.leftCols(m) = -(P.array().colwise() * e.array()).matrix();
    J.col(m) = e;
    J.col(m + 1).setOnes();
    Eigen::VectorXd w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double a = std::abs(r[k]);
      w[k] = a <= cfg.huber_delta ? 1.0 : cfg.huber_delta / a;
    }
    const Eigen::VectorXd grad = J.transpose() * (w.asDiagonal() * r);
    if (!grad.allFinite()) break;
    if (grad.lpNorm<Eigen::Infinity>() <= cfg.gradient_tolerance) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd H = J.transpose() * w.asDiagonal() * J;

    bool improved = false;
    while (lambda < 1e12) {
      Eigen::MatrixXd damped = H;
      damped.diagonal().array() += lambda * (H.diagonal().array().max(1e-12));
      const Eigen::VectorXd step = damped.ldlt().solve(-grad);
      const Eigen::VectorXd trial = theta + step;
      Eigen::VectorXd e_trial;
      const Eigen::VectorXd r_trial = residuals(trial, e_trial);
      const double f_trial = r_trial.allFinite() ? objective(r_trial) : std::numeric_limits<double>::infinity();
      if (f_trial < f) {
        const bool tiny = step.norm() <= 1e-14 * (1.0 + theta.norm());
        theta = trial;
        e = e_trial;
        r = r_trial;
        f = f_trial;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (tiny) out.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    // No descent direction left at machine precision: a stationary point.
    if (!improved) out.converged = true;
    if (out.converged) break;
  }
  out.theta = theta;
  out.objective = f;
  return out;
}

}  // namespace detail

struct StaticFit {
  StaticLawParams params;
  FitReport report;
};

/// Fits c_i + b_i exp(-A_i . p) per group by minimizing the Huber loss, keeping the
/// best of `restarts` random initializations.
inline StaticFit fit_static(const std::vector<StaticSample>& samples, const StaticFitConfig& cfg = {}) {
  require(!samples.empty(), ErrorCode::InsufficientSamples, "no samples");
  const auto m = static_cast<Eigen::Index>(samples.front().p.size());
  require(static_cast<Eigen::Index>(samples.size()) >= m + 1, ErrorCode::InsufficientSamples,
          "need at least m + 1 = " + std::to_string(m + 1) + " samples, got " + std::to_string(samples.size()));
  require(cfg.restarts >= 1 && cfg.max_iterations >= 1 && cfg.huber_delta > 0.0, ErrorCode::InvalidArgument,
          "bad fit configuration");
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd P(n, m);
  Eigen::MatrixXd Y(m, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& smp = samples[static_cast<std::size_t>(s)];
    require(static_cast<Eigen::Index>(smp.p.size()) == m && smp.loss.size() == m, ErrorCode::DimensionMismatch,
            "sample dimensions disagree");
    require(smp.loss.allFinite(), ErrorCode::InvalidArgument, "non-finite loss");
    P.row(s) = smp.p.vector().transpose();
    Y.col(s) = smp.loss;
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> a_init(0.0, 5.0);
  std::uniform_real_distribution<double> b_init(0.1, 30.0);

  Eigen::MatrixXd A(m, m);
  Eigen::VectorXd b(m), c(m);
  bool all_groups_converged = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd y = Y.row(i).transpose();
    std::uniform_real_distribution<double> c_init(0.0, std::max(0.0, y.minCoeff()));
    detail::HuberGroupFit best;
    bool converged = false;
    for (int rs = 0; rs < cfg.restarts; ++rs) {
      Eigen::VectorXd theta(m + 2);
      for (Eigen::Index j = 0; j < m; ++j) theta[j] = a_init(rng);
      theta[m] = std::log(b_init(rng));
      theta[m + 1] = c_init(rng);
      auto fit = detail::fit_group_lm(P, y, theta, cfg);
      converged = converged || fit.converged;
      if (fit.objective < best.objective) best = std::move(fit);
    }
    all_groups_converged = all_groups_converged && converged;
    require(best.theta.size() == m + 2 && best.theta.allFinite(), ErrorCode::NonConvergence,
            "no finite fit for group " + std::to_string(i));
    A.row(i) = best.theta.head(m).transpose();
    b[i] = std::exp(best.theta[m]);
    c[i] = best.theta[m + 1];
  }
  require(all_groups_converged, ErrorCode::NonConvergence, "no restart reached the gradient tolerance");

  StaticLawParams params(A, b, c);
  Eigen::MatrixXd predicted(m, n);
  for (Eigen::Index s = 0; s < n; ++s) predicted.col(s) = eval_static(params, samples[static_cast<std::size_t>(s)].p);
  StaticFit out{std::move(params), goodness(predicted, Y)};
  out.report.restarts_used = cfg.restarts;
  return out;
}

struct DynamicFit {
  InteractionMatrix A;
  FitReport report;
};

/// Ordinary least squares per target group of sum_j A_ij p_j = L_i^t - L_i^{t+1}.
inline DynamicFit fit_dynamic(const std::vector<LossTriple>& triples, std::int64_t horizon_steps = 0) {
  require(!triples.empty(), ErrorCode::SingularDesign, "no triples");
  const auto m = static_cast<Eigen::Index>(triples.front().p.size());
  const auto n = static_cast<Eigen::Index>(triples.size());
  const auto groups = triples.front().before.size();
  Eigen::MatrixXd X(n, m);
  Eigen::MatrixXd drop(n, groups);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& t = triples[static_cast<std::size_t>(s)];
    require(static_cast<Eigen::Index>(t.p.size()) == m && t.before.size() == groups && t.after.size() == groups,
            ErrorCode::DimensionMismatch, "triple dimensions disagree");
    X.row(s) = t.p.vector().transpose();
    drop.row(s) = (t.before - t.after).transpose();
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  require(n >= m && qr.rank() == m, ErrorCode::SingularDesign,
          "proportion design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(m));
  const Eigen::MatrixXd At = qr.solve(drop);  // m x groups

  DynamicFit out;
  out.A.entries = At.transpose();
  out.A.horizon_steps = horizon_steps;
  Eigen::MatrixXd predicted(groups, n), observed(groups, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& t = triples[static_cast<std::size_t>(s)];
    predicted.col(s) = t.before - out.A.entries * t.p.vector();
    observed.col(s) = t.after;
  }
  out.report = goodness(predicted, observed);
  return out;
}

/// Least-squares scalar b with L^t - L^{t+1} ~= b * A p pooled over groups and samples.
inline double fit_scalar_b(const InteractionMatrix& method_A, const std::vector<LossTriple>& triples) {
  require(!triples.empty(), ErrorCode::InsufficientSamples, "need at least one triple");
  double num = 0.0, den = 0.0;
  for (const auto& t : triples) {
    require(method_A.entries.cols() == static_cast<Eigen::Index>(t.p.size()) &&
                method_A.entries.rows() == t.before.size() && t.after.size() == t.before.size(),
            ErrorCode::DimensionMismatch, "matrix and triple dimensions disagree");
    const Eigen::VectorXd x = method_A.entries * t.p.vector();
    const Eigen::VectorXd y = t.before - t.after;
    num += x.dot(y);
    den += x.squaredNorm();
  }
  require(den > 0.0 && std::isfinite(den), ErrorCode::DegenerateScale, "method matrix maps every sample to zero");
  return num / den;
}

}  // namespace lmo
