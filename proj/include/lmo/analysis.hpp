#pragma once

// Analyses over mixing parameters: A* estimation from checkpoint sweeps, the
// cosine/Spearman similarity of column sums, greedy vs exhaustive schedule
// search, and diagonal-vs-full comparisons.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "lmo/error.hpp"
#include "lmo/methods.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/simplex.hpp"
#include "lmo/trainer.hpp"

namespace lmo {

struct SimilarityScore {
  double value = 0.0;
  double cosine = 0.0;
  double spearman = 0.0;
};

/// Ranks starting at 1; tied values share the mean of their positions.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[static_cast<Eigen::Index>(a)] < x[static_cast<Eigen::Index>(b)];
  });
  Eigen::VectorXd r(x.size());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[static_cast<Eigen::Index>(idx[j + 1])] == x[static_cast<Eigen::Index>(idx[i])]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t s = i; s <= j; ++s) r[static_cast<Eigen::Index>(idx[s])] = rank;
    i = j + 1;
  }
  return r;
}

/// Pearson correlation. Two constant vectors count as perfectly correlated when
/// equal and uncorrelated otherwise; one constant vector gives 0.
inline double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  require(x.size() == y.size() && x.size() >= 1, ErrorCode::DimensionMismatch, "correlation needs equal sizes");
  const Eigen::VectorXd dx = x.array() - x.mean();
  const Eigen::VectorXd dy = y.array() - y.mean();
  const double sx = dx.squaredNorm(), sy = dy.squaredNorm();
  if (sx == 0.0 && sy == 0.0) return x == y ? 1.0 : 0.0;
  if (sx == 0.0 || sy == 0.0) return 0.0;
  // sqrt(sx * sy) rather than sqrt(sx) * sqrt(sy) keeps x vs +-x exact.
  return std::clamp(dx.dot(dy) / std::sqrt(sx * sy), -1.0, 1.0);
}

inline double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

inline double cosine_similarity(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  require(x.size() == y.size(), ErrorCode::DimensionMismatch, "cosine needs equal sizes");
  const double sx = x.squaredNorm(), sy = y.squaredNorm();
  require(sx > 0.0 && sy > 0.0, ErrorCode::ZeroColumnSums, "zero vector has no direction");
  return std::clamp(x.dot(y) / std::sqrt(sx * sy), -1.0, 1.0);
}

/// sim = 0.5 cos(a~, a*) + 0.5 Spearman(a~, a*), where a~ are the L2-normalized
/// column sums of b A_method and a* those of A_star.
inline SimilarityScore similarity(const Eigen::MatrixXd& A_method, double b, const Eigen::MatrixXd& A_star) {
  require(A_method.cols() == A_star.cols(), ErrorCode::DimensionMismatch, "matrices differ in group count");
  Eigen::VectorXd a = (b * A_method).colwise().sum().transpose();
  Eigen::VectorXd s = A_star.colwise().sum().transpose();
  const double na = a.norm(), ns = s.norm();
  require(na > 0.0 && std::isfinite(na), ErrorCode::ZeroColumnSums, "method column sums are all zero");
  require(ns > 0.0 && std::isfinite(ns), ErrorCode::ZeroColumnSums, "reference column sums are all zero");
  a /= na;
  s /= ns;
  SimilarityScore out;
  out.cosine = cosine_similarity(a, s);
  out.spearman = spearman(a, s);
  out.value = std::clamp(0.5 * out.cosine + 0.5 * out.spearman, -1.0, 1.0);
  return out;
}

inline SimilarityScore similarity(const InteractionMatrix& A_method, double b, const InteractionMatrix& A_star) {
  return similarity(A_method.entries, b, A_star.entries);
}

/// Loss triples from branching a snapshot: for each candidate, restore, read
/// validation losses, train `horizon` steps, read again. Each branch gets its
/// own noise stream. The trainer is left at the snapshot.
inline std::vector<LossTriple> branch_triples(Trainer& trainer, SnapshotToken snapshot,
                                              const std::vector<MixtureProportions>& candidates, std::int64_t horizon,
                                              std::uint64_t noise_seed = 0) {
  require(horizon >= 1, ErrorCode::InvalidArgument, "horizon must be >= 1");
  std::vector<LossTriple> triples;
  triples.reserve(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    trainer.restore(snapshot);
    trainer.reseed(derive_seed(noise_seed, c));
    LossTriple t{trainer.observe_losses(Split::Val), candidates[c], {}};
    trainer.train(candidates[c], horizon);
    t.after = trainer.observe_losses(Split::Val);
    triples.push_back(std::move(t));
  }
  trainer.restore(snapshot);
  return triples;
}

/// A* over `horizon` steps at the snapshot, by least squares on branch triples.
inline InteractionMatrix estimate_a_star(Trainer& trainer, SnapshotToken snapshot,
                                         const std::vector<MixtureProportions>& candidates, std::int64_t horizon,
                                         std::uint64_t noise_seed = 0) {
  return fit_dynamic(branch_triples(trainer, snapshot, candidates, horizon, noise_seed), horizon).A;
}

/// Zeroes the off-diagonal entries.
inline InteractionMatrix diagonal_projection(const InteractionMatrix& A) {
  require(A.entries.rows() == A.entries.cols(), ErrorCode::DimensionMismatch, "diagonal projection needs a square matrix");
  return {Eigen::MatrixXd(A.entries.diagonal().asDiagonal()), A.horizon_steps};
}

inline std::size_t column_sum_argmax(const InteractionMatrix& A) {
  Eigen::Index j = 0;
  A.column_sums().maxCoeff(&j);
  return static_cast<std::size_t>(j);
}

/// Trailing mean of the traced A over the `width` updates ending at `index`.
inline Eigen::MatrixXd smoothed_trace(const std::vector<TraceEntry>& trace, std::size_t index, std::size_t width = 100) {
  require(index < trace.size(), ErrorCode::RoundNotTraced, "trace index out of range");
  require(width >= 1, ErrorCode::InvalidArgument, "smoothing width must be >= 1");
  const std::size_t first = index + 1 >= width ? index + 1 - width : 0;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(trace[index].A.rows(), trace[index].A.cols());
  for (std::size_t s = first; s <= index; ++s) acc += trace[s].A;
  return acc / static_cast<double>(index - first + 1);
}

// Parameter accuracy of a running method.

struct AccuracyProbe {
  std::int64_t round = 1;         // trace round at which to compare
  std::size_t smoothing = 100;    // trailing-mean width over traced matrices
  std::vector<MixtureProportions> candidates;
  std::int64_t horizon = 100;
  std::uint64_t noise_seed = 0;
  bool use_estimate = false;      // compare the raw LearnParams estimate (AIOLI) instead of A
};

struct AccuracyResult {
  Eigen::MatrixXd method_A;
  InteractionMatrix a_star;
  double b = 0.0;
  SimilarityScore score;
};

/// An observer that, at `probe.round`, branches a copy of the trainer to estimate
/// A* and scores the method's smoothed matrix against it.
inline UpdateObserver accuracy_observer(AccuracyProbe probe, std::shared_ptr<std::optional<AccuracyResult>> out) {
  auto recent = std::make_shared<std::deque<Eigen::MatrixXd>>();
  return [probe = std::move(probe), out, recent](const Trainer& trainer, const TraceEntry& e) {
    const Eigen::MatrixXd& A = probe.use_estimate && e.estimate ? *e.estimate : e.A;
    recent->push_back(A);
    if (recent->size() > probe.smoothing) recent->pop_front();
    if (e.round != probe.round) return;
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(A.rows(), A.cols());
    for (const auto& r : *recent) mean += r;
    mean /= static_cast<double>(recent->size());

    Trainer branch = trainer;
    const auto snap = branch.snapshot();
    const auto triples = branch_triples(branch, snap, probe.candidates, probe.horizon, probe.noise_seed);
    AccuracyResult res;
    res.method_A = mean;
    res.a_star = fit_dynamic(triples, probe.horizon).A;
    if (mean.rows() == res.a_star.entries.rows()) {
      res.b = fit_scalar_b({mean, 0}, triples);
    } else {
      res.b = 1.0;  // out-of-domain rows have no per-group counterpart
    }
    res.score = similarity(mean, res.b, res.a_star.entries);
    *out = std::move(res);
  };
}

// Greedy vs exhaustive.

struct GreedyComparison {
  std::vector<std::size_t> greedy;      // candidate index per round
  double greedy_loss = 0.0;
  std::vector<std::size_t> exhaustive;
  double exhaustive_loss = 0.0;
  bool match = false;
  std::size_t schedules_evaluated = 0;
};

struct GreedyOptions {
  std::size_t max_schedules = 10000;
  std::size_t parallelism = 1;
};

namespace detail {

inline double run_schedule(const TrainerFactory& factory, const std::vector<MixtureProportions>& candidates,
                           const std::vector<std::size_t>& schedule, std::int64_t round_steps) {
  Trainer t = factory.final_run();
  for (auto c : schedule) t.train(candidates[c], round_steps);
  return t.true_losses(Split::Val).mean();
}

inline std::vector<std::size_t> decode_schedule(std::size_t code, std::size_t base, int T) {
  std::vector<std::size_t> s(static_cast<std::size_t>(T));
  for (int t = T - 1; t >= 0; --t) {
    s[static_cast<std::size_t>(t)] = code % base;
    code /= base;
  }
  return s;
}

}  // namespace detail

/// Greedy picks, round by round, the candidate with the lowest observed average
/// validation loss after one round from the current state. Exhaustive scores
/// every |candidates|^T schedule. Both final losses are noise-free validation
/// averages, so exhaustive <= greedy always holds.
inline GreedyComparison greedy_vs_exhaustive(const TrainerFactory& factory,
                                             const std::vector<MixtureProportions>& candidates, int T,
                                             std::int64_t round_steps, const GreedyOptions& opts = {}) {
  require(!candidates.empty(), ErrorCode::InvalidArgument, "no candidates");
  require(T >= 1 && round_steps >= 1, ErrorCode::InvalidArgument, "need T >= 1 and round_steps >= 1");
  const std::size_t n = candidates.size();
  std::size_t total = 1;
  for (int t = 0; t < T; ++t) {
    require(total <= opts.max_schedules / n, ErrorCode::ComplexityLimitExceeded,
            std::to_string(n) + "^" + std::to_string(T) + " schedules exceed the limit of " +
                std::to_string(opts.max_schedules));
    total *= n;
  }

  GreedyComparison out;
  Trainer g = factory.final_run();
  for (int t = 0; t < T; ++t) {
    const auto snap = g.snapshot();
    std::size_t best = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      g.restore(snap);
      g.train(candidates[c], round_steps);
      const double v = g.observe_losses(Split::Val).mean();
      if (v < best_loss) {
        best_loss = v;
        best = c;
      }
    }
    g.restore(snap);
    g.train(candidates[best], round_steps);
    out.greedy.push_back(best);
  }
  out.greedy_loss = detail::run_schedule(factory, candidates, out.greedy, round_steps);

  std::vector<double> losses(total);
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.parallelism, total));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t code = w; code < total; code += workers)
          losses[code] = detail::run_schedule(factory, candidates, detail::decode_schedule(code, n, T), round_steps);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const auto best = static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin());
  out.exhaustive = detail::decode_schedule(best, n, T);
  out.exhaustive_loss = losses[best];
  out.match = out.exhaustive == out.greedy;
  out.schedules_evaluated = total;
  return out;
}

// Export.

struct ComparisonRow {
  std::string method;
  std::string config;
  double similarity = 0.0;
  double delta_vs_stratified = 0.0;
};

/// CSV columns: method,config,similarity,delta_vs_stratified
inline void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  os << "method,config,similarity,delta_vs_stratified\n";
  const auto old = os.precision(17);
  for (const auto& r : rows) os << r.method << ',' << r.config << ',' << r.similarity << ',' << r.delta_vs_stratified << '\n';
  os.precision(old);
}

}  // namespace lmo
