#pragma once

// Geometry and sampling on the probability simplex.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "lmo/error.hpp"

namespace lmo {

inline constexpr double kSimplexTolerance = 1e-9;

/// Deterministic 64-bit mixer used to derive independent RNG streams from a seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// A validated point on the m-simplex (m >= 2). Groups are indexed from 0.
class MixtureProportions {
 public:
  static MixtureProportions validate(std::vector<double> weights) {
    require(weights.size() >= 2, ErrorCode::TooFewGroups,
            "need at least 2 groups, got " + std::to_string(weights.size()));
    double sum = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      const double w = weights[j];
      require(std::isfinite(w), ErrorCode::InvalidArgument, "non-finite weight");
      require(w >= 0.0, ErrorCode::NegativeWeight,
              "weight " + std::to_string(j) + " is " + std::to_string(w));
      sum += w;
    }
    require(std::abs(sum - 1.0) <= kSimplexTolerance, ErrorCode::SumNotOne,
            "weights sum to " + std::to_string(sum));
    MixtureProportions p;
    p.weights_ = std::move(weights);
    return p;
  }

  static MixtureProportions validate(const Eigen::VectorXd& v) {
    return validate(std::vector<double>(v.data(), v.data() + v.size()));
  }

  std::size_t size() const noexcept { return weights_.size(); }
  double operator[](std::size_t j) const { return weights_[j]; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::vector<double>::const_iterator begin() const noexcept { return weights_.begin(); }
  std::vector<double>::const_iterator end() const noexcept { return weights_.end(); }

  Eigen::VectorXd vector() const {
    return Eigen::Map<const Eigen::VectorXd>(weights_.data(), static_cast<Eigen::Index>(weights_.size()));
  }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(weights_.begin(), weights_.end()) - weights_.begin());
  }

  friend bool operator==(const MixtureProportions&, const MixtureProportions&) = default;

 private:
  MixtureProportions() = default;
  std::vector<double> weights_;
};

inline std::ostream& operator<<(std::ostream& os, const MixtureProportions& p) {
  os << '[';
  for (std::size_t j = 0; j < p.size(); ++j) os << (j ? ", " : "") << p[j];
  return os << ']';
}

/// Per-round proportions of a dynamic mixture.
class MixtureSchedule {
 public:
  explicit MixtureSchedule(std::vector<MixtureProportions> rounds) : rounds_(std::move(rounds)) {
    require(!rounds_.empty(), ErrorCode::InvalidArgument, "schedule needs at least one round");
    for (const auto& p : rounds_)
      require(p.size() == rounds_.front().size(), ErrorCode::DimensionMismatch,
              "all rounds must share the same number of groups");
  }

  std::size_t rounds() const noexcept { return rounds_.size(); }
  std::size_t groups() const noexcept { return rounds_.front().size(); }
  const MixtureProportions& operator[](std::size_t t) const { return rounds_[t]; }
  const std::vector<MixtureProportions>& all() const noexcept { return rounds_; }

  /// Time-averaged static proportions.
  MixtureProportions average() const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(groups()));
    for (const auto& p : rounds_) acc += p.vector();
    acc /= static_cast<double>(rounds_.size());
    acc /= acc.sum();
    return MixtureProportions::validate(acc);
  }

  friend bool operator==(const MixtureSchedule&, const MixtureSchedule&) = default;

 private:
  std::vector<MixtureProportions> rounds_;
};

inline MixtureProportions uniform(std::size_t m) {
  require(m >= 2, ErrorCode::TooFewGroups, "uniform mixture needs m >= 2");
  return MixtureProportions::validate(std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

inline MixtureProportions onehot(std::size_t i, std::size_t m) {
  require(m >= 2, ErrorCode::TooFewGroups, "one-hot mixture needs m >= 2");
  require(i < m, ErrorCode::IndexOutOfRange, "group index out of range");
  std::vector<double> w(m, 0.0);
  w[i] = 1.0;
  return MixtureProportions::validate(std::move(w));
}

/// (1 - eps) * e_i + eps * Unif(m).
inline MixtureProportions smoothed_onehot(std::size_t i, std::size_t m, double epsilon) {
  require(m >= 2, ErrorCode::TooFewGroups, "smoothed one-hot needs m >= 2");
  require(i < m, ErrorCode::IndexOutOfRange, "group index " + std::to_string(i) + " out of range");
  require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::EpsilonOutOfRange, "epsilon must lie in [0, 1]");
  const double off = epsilon / static_cast<double>(m);
  std::vector<double> w(m, off);
  w[i] = (1.0 - epsilon) + off;
  return MixtureProportions::validate(std::move(w));
}

/// A shuffled sequence holding each group index exactly k times.
inline std::vector<std::size_t> interleave_order(std::size_t m, std::size_t k, std::uint64_t seed) {
  require(m >= 2, ErrorCode::TooFewGroups, "interleave order needs m >= 2");
  require(k >= 1, ErrorCode::InvalidArgument, "need at least one sweep per group");
  std::vector<std::size_t> order;
  order.reserve(m * k);
  for (std::size_t rep = 0; rep < k; ++rep)
    for (std::size_t i = 0; i < m; ++i) order.push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// One draw from Dirichlet(alpha, ..., alpha) via normalized Gamma variates.
template <class Rng>
Eigen::VectorXd sample_dirichlet(std::size_t m, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(m));
  for (;;) {
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = gamma(rng);
    const double s = x.sum();
    if (s > 0.0 && std::isfinite(s)) return x / s;
  }
}

struct GridSweep {
  friend bool operator==(const GridSweep&, const GridSweep&) = default;
};

struct DirichletSweep {
  double alpha = 1.0;
  std::size_t count = 10;
  std::size_t oversample = 4;
  std::uint64_t seed = 0;
  friend bool operator==(const DirichletSweep&, const DirichletSweep&) = default;
};

using SweepSpec = std::variant<GridSweep, DirichletSweep>;

struct CandidateSet {
  std::vector<MixtureProportions> candidates;
  SweepSpec generation;

  std::size_t size() const noexcept { return candidates.size(); }
  const MixtureProportions& operator[](std::size_t i) const { return candidates[i]; }
};

namespace detail {

// Repeatedly replaces the globally closest pair (Euclidean) by its midpoint.
inline std::vector<Eigen::VectorXd> merge_closest(std::vector<Eigen::VectorXd> points, std::size_t target) {
  while (points.size() > target) {
    std::size_t best_a = 0, best_b = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < points.size(); ++a)
      for (std::size_t b = a + 1; b < points.size(); ++b) {
        const double d = (points[a] - points[b]).squaredNorm();
        if (d < best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    points[best_a] = 0.5 * (points[best_a] + points[best_b]);
    points.erase(points.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  return points;
}

}  // namespace detail

/// Grid mode: the nine m=2 mixtures [0.1, 0.9] ... [0.9, 0.1].
/// Dirichlet mode: oversample x count draws, then merge closest pairs until count remain.
inline CandidateSet candidate_sweep(std::size_t m, const SweepSpec& spec) {
  require(m >= 2, ErrorCode::TooFewGroups, "candidate sweep needs m >= 2");
  CandidateSet out{{}, spec};
  if (std::holds_alternative<GridSweep>(spec)) {
    require(m == 2, ErrorCode::GridRequiresTwoGroups, "grid sweep is defined for m = 2 only");
    for (int s = 1; s <= 9; ++s) {
      const double p1 = s / 10.0;
      out.candidates.push_back(MixtureProportions::validate(std::vector<double>{p1, 1.0 - p1}));
    }
    return out;
  }
  const auto& d = std::get<DirichletSweep>(spec);
  require(d.alpha > 0.0 && std::isfinite(d.alpha), ErrorCode::InvalidAlpha, "Dirichlet alpha must be positive");
  require(d.count >= 1, ErrorCode::InvalidArgument, "candidate count must be >= 1");
  require(d.oversample >= 1, ErrorCode::InvalidArgument, "oversample factor must be >= 1");
  std::mt19937_64 rng(d.seed);
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(d.count * d.oversample);
  for (std::size_t s = 0; s < d.count * d.oversample; ++s) draws.push_back(sample_dirichlet(m, d.alpha, rng));
  for (const auto& point : detail::merge_closest(std::move(draws), d.count))
    out.candidates.push_back(MixtureProportions::validate(point));
  return out;
}

/// One candidate per row, comma-separated weights.
inline void write_candidates(std::ostream& os, const CandidateSet& set) {
  std::ostringstream line;
  line.precision(17);
  for (const auto& p : set.candidates) {
    line.str({});
    for (std::size_t j = 0; j < p.size(); ++j) line << (j ? "," : "") << p[j];
    os << line.str() << '\n';
  }
}

inline std::vector<MixtureProportions> read_candidates(std::istream& is) {
  std::vector<MixtureProportions> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> w;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      try {
        w.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, "bad candidate cell '" + cell + "'");
      }
    }
    out.push_back(MixtureProportions::validate(std::move(w)));
  }
  return out;
}

}  // namespace lmo
