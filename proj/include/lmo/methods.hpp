#pragma once

// Data-mixing methods driven against a trainer oracle.
//
// Every online method records a parameter trace: at each update it stores the
// (A^t, b^t) that expresses its update as a generic EGD step, the proportions it
// started from, and the proportions its own update rule produced. The two
// routes are computed independently so their agreement can be checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmo/budget.hpp"
#include "lmo/egd.hpp"
#include "lmo/error.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/simplex.hpp"
#include "lmo/trainer.hpp"

namespace lmo {

struct TraceEntry {
  std::int64_t round = 0;  // 1-based update index
  std::int64_t step = 0;   // trainer step at which the update was made
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  MixtureProportions p;        // proportions the update started from
  MixtureProportions updated;  // proportions produced by the method's own rule
  std::optional<Eigen::MatrixXd> estimate;  // raw LearnParams output (AIOLI only)
};

struct MethodResult {
  std::string method;
  std::optional<MixtureProportions> static_proportions;
  std::optional<MixtureSchedule> schedule;  // proportions per round of a dynamic final run
  Eigen::VectorXd final_test_losses;
  double average_test_loss = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  std::vector<TraceEntry> trace;
  double eta = 0.0;  // step size of the traced updates
  std::int64_t final_steps = 0;
  std::optional<BudgetLedger> ledger;

  std::int64_t extra_steps() const { return ledger ? ledger->consumed() : 0; }
};

/// Called after every traced update, before the trainer continues.
using UpdateObserver = std::function<void(const Trainer&, const TraceEntry&)>;

struct RunOptions {
  std::int64_t trajectory_stride = 100;
  UpdateObserver observer;
};

struct SkillItParams {
  int rounds = 10;
  double eta = 0.2;
  int window = 3;
};

struct DoReMiParams {
  double eta = 0.01;
  double smoothing = 1e-3;
};

struct DoGEParams {
  double eta = 0.01;
  double smoothing = 0.0;
};

/// `delta` is the fraction of each round spent in LearnParams.
struct AioliParams {
  int rounds = 20;
  std::size_t sweeps = 4;
  double epsilon = 0.75;
  double eta = 0.2;
  double delta = 0.128;
  std::optional<double> gamma;
  std::int64_t init_steps = 0;
  std::optional<MixtureProportions> init_proportions;
  std::uint64_t seed = 0;
};

struct DmlParams {
  StaticFitConfig fit;
  std::size_t dense_samples = 10000;
  double dense_alpha = 1.0;
  std::uint64_t seed = 0;
};

// Native update rules, written in each method's own terms.

/// Skill-It: p_j <- p_j exp(eta * sum_i S_ij L_i), S the skills graph.
inline MixtureProportions skill_it_update(const MixtureProportions& p, const Eigen::MatrixXd& skills_graph,
                                          const Eigen::VectorXd& val_losses, double eta) {
  const auto m = static_cast<Eigen::Index>(p.size());
  Eigen::VectorXd score(m);
  for (Eigen::Index j = 0; j < m; ++j) score[j] = eta * skills_graph.col(j).dot(val_losses);
  const double top = score.maxCoeff();
  Eigen::VectorXd w(m);
  for (Eigen::Index j = 0; j < m; ++j) w[j] = p[static_cast<std::size_t>(j)] * std::exp(score[j] - top);
  return MixtureProportions::validate(w / w.sum());
}

/// DoReMi: p_j <- p_j exp(eta * max(L_train_j - L_ref_j, 0)).
inline MixtureProportions doremi_update(const MixtureProportions& p, const Eigen::VectorXd& train_losses,
                                        const Eigen::VectorXd& reference_losses, double eta) {
  const Eigen::VectorXd excess = (train_losses - reference_losses).cwiseMax(0.0);
  const double top = (eta * excess).maxCoeff();
  Eigen::VectorXd w(excess.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = p[static_cast<std::size_t>(j)] * std::exp(eta * excess[j] - top);
  return MixtureProportions::validate(w / w.sum());
}

/// DoGE: p_j <- p_j exp(eta * <grad L_train_j, sum_i grad L_val_i>), with the inner
/// products given as G_ij = <grad L_val_i, grad L_train_j>.
inline MixtureProportions doge_update(const MixtureProportions& p, const Eigen::MatrixXd& alignment, double eta) {
  const Eigen::VectorXd score = eta * alignment.colwise().sum().transpose();
  const double top = score.maxCoeff();
  Eigen::VectorXd w(score.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = p[static_cast<std::size_t>(j)] * std::exp(score[j] - top);
  return MixtureProportions::validate(w / w.sum());
}

/// (1 - eps) p + eps Unif(m).
inline MixtureProportions smooth_toward_uniform(const MixtureProportions& p, double eps) {
  if (eps == 0.0) return p;
  Eigen::VectorXd v = (1.0 - eps) * p.vector();
  v.array() += eps / static_cast<double>(p.size());
  return MixtureProportions::validate(v / v.sum());
}

namespace detail {

inline void finish(MethodResult& r, const Trainer& t) {
  r.final_test_losses = t.true_losses(Split::Test);
  r.average_test_loss = r.final_test_losses.mean();
  r.final_steps = t.steps_for(RunPurpose::Final);
}

// Trains in chunks aligned to the trajectory stride and records after each chunk.
inline void train_recorded(Trainer& t, const MixtureProportions& p, std::int64_t steps, const RunOptions& opts,
                           std::vector<TrajectoryPoint>& traj) {
  const std::int64_t stride = std::max<std::int64_t>(1, opts.trajectory_stride);
  while (steps > 0) {
    const std::int64_t to_boundary = stride - (t.step() % stride);
    const std::int64_t chunk = std::min(steps, to_boundary);
    t.train(p, chunk);
    steps -= chunk;
    if (t.step() % stride == 0 || steps == 0) record_trajectory(traj, t);
  }
}

inline MethodResult static_final_run(const TrainerFactory& factory, std::int64_t S, const MixtureProportions& p,
                                     std::string name, const RunOptions& opts) {
  require(S >= 1, ErrorCode::InvalidArgument, "final run needs S >= 1");
  MethodResult r;
  r.method = std::move(name);
  r.static_proportions = p;
  Trainer t = factory.final_run();
  record_trajectory(r.trajectory, t);
  train_recorded(t, p, S, opts, r.trajectory);
  finish(r, t);
  return r;
}

inline std::size_t argmin_average(const std::vector<Eigen::VectorXd>& losses) {
  std::size_t best = 0;
  for (std::size_t s = 1; s < losses.size(); ++s)
    if (losses[s].mean() < losses[best].mean()) best = s;
  return best;
}

// Stream ids keep every extra run on its own RNG stream.
inline constexpr std::uint64_t kSweepStream = 1000;
inline constexpr std::uint64_t kSkillsStream = 2000;
inline constexpr std::uint64_t kReferenceStream = 3000;
inline constexpr std::uint64_t kProxyStream = 3001;
inline constexpr std::uint64_t kDogeStream = 4000;

// Trains one run per candidate and reads the final validation losses.
inline std::vector<Eigen::VectorXd> sweep_runs(const TrainerFactory& factory, const std::vector<MixtureProportions>& cands,
                                               std::int64_t steps) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(cands.size());
  for (std::size_t s = 0; s < cands.size(); ++s) {
    Trainer t = factory.make(kSweepStream + s, RunPurpose::Sweep);
    t.train(cands[s], steps);
    out.push_back(t.observe_losses(Split::Val));
  }
  return out;
}

inline void check_candidates(const TrainerFactory& factory, const CandidateSet& candidates) {
  require(!candidates.candidates.empty(), ErrorCode::InvalidArgument, "no candidates");
  for (const auto& c : candidates.candidates)
    require(c.size() == factory.groups(), ErrorCode::DimensionMismatch, "candidate size does not match m");
}

inline void check_round_steps(std::int64_t S, int rounds) {
  require(rounds >= 1, ErrorCode::InvalidArgument, "need at least one round");
  require(S >= rounds, ErrorCode::InvalidArgument, "fewer steps than rounds");
}

inline std::int64_t round_length(std::int64_t total, int rounds, int t /* 1-based */) {
  const std::int64_t base = total / rounds;
  return t == rounds ? total - base * (rounds - 1) : base;
}

}  // namespace detail

/// Uniform proportions for the whole run; no extra budget.
inline MethodResult run_stratified(const TrainerFactory& factory, std::int64_t S, const RunOptions& opts = {}) {
  auto r = detail::static_final_run(factory, S, uniform(factory.groups()), "stratified", opts);
  r.ledger = BudgetLedger(S, 0);
  return r;
}

/// One run per candidate, pick the lowest average validation loss, retrain for S steps.
inline MethodResult run_grid_search(const TrainerFactory& factory, std::int64_t S, const CandidateSet& candidates,
                                    BudgetLedger ledger, RunAllocation allocation, const RunOptions& opts = {}) {
  detail::check_candidates(factory, candidates);
  require(allocation.steps_per_run >= 1, ErrorCode::BudgetExceeded, "allocation leaves no steps per run");
  const auto runs = static_cast<std::int64_t>(candidates.size());
  require(runs <= allocation.runs, ErrorCode::BudgetExceeded,
          std::to_string(runs) + " candidates but only " + std::to_string(allocation.runs) + " runs allowed");
  ledger.charge(RunPurpose::Sweep, runs * allocation.steps_per_run);

  const auto losses = detail::sweep_runs(factory, candidates.candidates, allocation.steps_per_run);
  const auto& winner = candidates[detail::argmin_average(losses)];
  auto r = detail::static_final_run(factory, S, winner, "grid_search", opts);
  r.ledger = ledger;
  return r;
}

/// Sweep, fit the log-linear static law, minimize its predicted average loss, retrain.
inline MethodResult run_dml(const TrainerFactory& factory, std::int64_t S, const CandidateSet& candidates,
                            BudgetLedger ledger, RunAllocation allocation, const DmlParams& params = {},
                            const RunOptions& opts = {}) {
  detail::check_candidates(factory, candidates);
  const auto m = static_cast<std::int64_t>(factory.groups());
  require(allocation.steps_per_run >= 1 && allocation.runs >= m + 1 && ledger.can_afford((m + 1) * allocation.steps_per_run),
          ErrorCode::BudgetExceeded, "budget does not cover m + 1 sweep runs");
  const auto runs = static_cast<std::int64_t>(candidates.size());
  require(runs >= m + 1, ErrorCode::InsufficientSamples, "DML needs at least m + 1 candidates");
  require(runs <= allocation.runs, ErrorCode::BudgetExceeded,
          std::to_string(runs) + " candidates but only " + std::to_string(allocation.runs) + " runs allowed");
  ledger.charge(RunPurpose::Sweep, runs * allocation.steps_per_run);

  const auto losses = detail::sweep_runs(factory, candidates.candidates, allocation.steps_per_run);
  std::vector<StaticSample> samples;
  for (std::size_t s = 0; s < candidates.size(); ++s) samples.push_back({candidates[s], losses[s]});
  const auto fit = fit_static(samples, params.fit);

  std::mt19937_64 rng(params.seed);
  auto best = candidates[0];
  double best_loss = eval_static(fit.params, best).mean();
  auto consider = [&](const MixtureProportions& p) {
    const double v = eval_static(fit.params, p).mean();
    if (v < best_loss) {
      best_loss = v;
      best = p;
    }
  };
  for (const auto& c : candidates.candidates) consider(c);
  for (std::size_t s = 0; s < params.dense_samples; ++s)
    consider(MixtureProportions::validate(sample_dirichlet(factory.groups(), params.dense_alpha, rng)));

  auto r = detail::static_final_run(factory, S, best, "dml", opts);
  r.ledger = ledger;
  return r;
}

/// Skills graph entry (i, j): relative decrease of group i's loss after training on group j only.
inline Eigen::MatrixXd learn_skills_graph(const TrainerFactory& factory, std::int64_t steps) {
  const std::size_t m = factory.groups();
  Eigen::MatrixXd graph(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    Trainer t = factory.make(detail::kSkillsStream + j, RunPurpose::SkillsGraph);
    const Eigen::VectorXd start = t.observe_losses(Split::Val);
    t.train(onehot(j, m), steps);
    const Eigen::VectorXd end = t.observe_losses(Split::Val);
    graph.col(static_cast<Eigen::Index>(j)) = ((start - end).array() / start.array()).matrix();
  }
  return graph;
}

inline MethodResult run_skill_it(const TrainerFactory& factory, std::int64_t S, BudgetLedger ledger,
                                 RunAllocation allocation, const SkillItParams& hp = {}, const RunOptions& opts = {}) {
  require(hp.eta > 0.0 && hp.window >= 1, ErrorCode::InvalidArgument, "Skill-It needs eta > 0 and window >= 1");
  detail::check_round_steps(S, hp.rounds);
  const auto m = static_cast<std::int64_t>(factory.groups());
  require(allocation.runs >= m && allocation.steps_per_run >= 1, ErrorCode::BudgetExceeded,
          "allocation does not cover one run per group");
  ledger.charge(RunPurpose::SkillsGraph, m * allocation.steps_per_run);
  const Eigen::MatrixXd graph = learn_skills_graph(factory, allocation.steps_per_run);

  MethodResult r;
  r.method = "skill_it";
  r.eta = hp.eta;
  Trainer t = factory.final_run();
  record_trajectory(r.trajectory, t);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
  auto p = uniform(factory.groups());
  std::deque<Eigen::VectorXd> window;
  std::vector<MixtureProportions> used;
  for (int round = 1; round <= hp.rounds; ++round) {
    const Eigen::VectorXd val = t.observe_losses(Split::Val);
    TraceEntry e{round, t.step(), val.asDiagonal() * graph, ones, p, skill_it_update(p, graph, val, hp.eta), {}};
    window.push_back(e.updated.vector());
    if (static_cast<int>(window.size()) > hp.window) window.pop_front();
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(m);
    for (const auto& w : window) avg += w;
    avg /= avg.sum();
    if (opts.observer) opts.observer(t, e);
    r.trace.push_back(std::move(e));
    p = MixtureProportions::validate(avg);
    used.push_back(p);
    detail::train_recorded(t, p, detail::round_length(S, hp.rounds, round), opts, r.trajectory);
  }
  r.schedule = MixtureSchedule(std::move(used));
  detail::finish(r, t);
  r.ledger = ledger;
  return r;
}

namespace detail {

// Shared proxy loop of DoReMi and DoGE: per-step updates, then a final run on
// the mean of the traced proportions.
template <class StepFn>
MethodResult run_proxy_method(std::string name, const TrainerFactory& factory, std::int64_t S, Trainer& proxy,
                              std::int64_t proxy_steps, double eta, double smoothing, StepFn&& step_fn,
                              const RunOptions& opts) {
  MethodResult r;
  r.eta = eta;
  auto p = uniform(factory.groups());
  for (std::int64_t s = 1; s <= proxy_steps; ++s) {
    TraceEntry e = step_fn(proxy, p);
    e.round = s;
    e.step = proxy.step();
    if (opts.observer) opts.observer(proxy, e);
    const auto next = smooth_toward_uniform(e.updated, smoothing);
    r.trace.push_back(std::move(e));
    proxy.train(next, 1);
    p = next;
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(factory.groups()));
  for (const auto& e : r.trace) mean += e.p.vector();
  mean /= mean.sum();
  auto final_run = static_final_run(factory, S, MixtureProportions::validate(mean), std::move(name), opts);
  final_run.trace = std::move(r.trace);
  final_run.eta = eta;
  return final_run;
}

}  // namespace detail

inline MethodResult run_doremi(const TrainerFactory& factory, std::int64_t S, BudgetLedger ledger,
                               RunAllocation allocation, const DoReMiParams& hp = {}, const RunOptions& opts = {}) {
  require(hp.eta > 0.0 && hp.smoothing >= 0.0 && hp.smoothing <= 1.0, ErrorCode::InvalidArgument,
          "DoReMi needs eta > 0 and smoothing in [0, 1]");
  require(allocation.runs >= 2 && allocation.steps_per_run >= 1, ErrorCode::BudgetExceeded,
          "allocation does not cover reference and proxy runs");
  ledger.charge(RunPurpose::Reference, allocation.steps_per_run);
  ledger.charge(RunPurpose::Proxy, allocation.steps_per_run);

  Trainer reference = factory.make(detail::kReferenceStream, RunPurpose::Reference);
  reference.train(uniform(factory.groups()), allocation.steps_per_run);
  const Eigen::VectorXd ref_losses = reference.observe_losses(Split::Train);

  Trainer proxy = factory.make(detail::kProxyStream, RunPurpose::Proxy);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(factory.groups()));
  auto r = detail::run_proxy_method(
      "doremi", factory, S, proxy, allocation.steps_per_run, hp.eta, hp.smoothing,
      [&](Trainer& t, const MixtureProportions& p) {
        const Eigen::VectorXd train = t.observe_losses(Split::Train);
        const Eigen::MatrixXd A = (train - ref_losses).cwiseMax(0.0).asDiagonal();
        return TraceEntry{0, 0, A, ones, p, doremi_update(p, train, ref_losses, hp.eta), {}};
      },
      opts);
  r.ledger = ledger;
  return r;
}

inline MethodResult run_doge(const TrainerFactory& factory, std::int64_t S, BudgetLedger ledger,
                             RunAllocation allocation, const DoGEParams& hp = {}, const RunOptions& opts = {}) {
  require(hp.eta > 0.0 && hp.smoothing >= 0.0 && hp.smoothing <= 1.0, ErrorCode::InvalidArgument,
          "DoGE needs eta > 0 and smoothing in [0, 1]");
  require(allocation.runs >= 1 && allocation.steps_per_run >= 1, ErrorCode::BudgetExceeded,
          "allocation does not cover a proxy run");
  ledger.charge(RunPurpose::Proxy, allocation.steps_per_run);

  Trainer proxy = factory.make(detail::kDogeStream, RunPurpose::Proxy);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(factory.groups()));
  auto r = detail::run_proxy_method(
      "doge", factory, S, proxy, allocation.steps_per_run, hp.eta, hp.smoothing,
      [&](Trainer& t, const MixtureProportions& p) {
        const Eigen::MatrixXd G = t.gradient_alignment();
        return TraceEntry{0, 0, G, ones, p, doge_update(p, G, hp.eta), {}};
      },
      opts);
  r.ledger = ledger;
  return r;
}

namespace detail {

inline Eigen::MatrixXd sweep_design(std::size_t m, double epsilon) {
  const auto mm = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd P(mm, mm);
  for (std::size_t s = 0; s < m; ++s) P.row(static_cast<Eigen::Index>(s)) = smoothed_onehot(s, m, epsilon).vector().transpose();
  return P;
}

inline std::int64_t interval_steps(std::int64_t delta_steps, std::size_t m, std::size_t k) {
  require(k >= 1, ErrorCode::InvalidArgument, "need at least one sweep per group");
  const auto K = static_cast<std::int64_t>(m * k);
  require(delta_steps >= K && delta_steps % K == 0, ErrorCode::IndivisibleSteps,
          std::to_string(delta_steps) + " steps do not split into " + std::to_string(K) + " equal intervals");
  return delta_steps / K;
}

// Interleaved sweep shared by the in-domain and out-of-domain estimators. `read`
// returns the validation losses being tracked; the result is beta (rows: losses,
// columns: sweep mixture), averaged over the k repetitions.
template <class ReadFn>
Eigen::MatrixXd interleaved_sweep(Trainer& trainer, std::int64_t delta_steps, std::size_t k, double epsilon,
                                  std::uint64_t seed, Eigen::Index tracked, ReadFn&& read) {
  const std::size_t m = trainer.groups();
  const std::int64_t interval = interval_steps(delta_steps, m, k);
  require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::EpsilonOutOfRange, "epsilon must lie in [0, 1]");
  const Eigen::MatrixXd P = sweep_design(m, epsilon);
  require(Eigen::FullPivLU<Eigen::MatrixXd>(P).rank() == P.rows(), ErrorCode::SingularP,
          "smoothed one-hot sweep mixtures are linearly dependent");

  std::vector<MixtureProportions> mixtures;
  for (std::size_t s = 0; s < m; ++s) mixtures.push_back(smoothed_onehot(s, m, epsilon));
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(tracked, static_cast<Eigen::Index>(m));
  Eigen::VectorXd before = read(trainer);
  for (std::size_t j : interleave_order(m, k, seed)) {
    trainer.train(mixtures[j], interval);
    Eigen::VectorXd after = read(trainer);
    beta.col(static_cast<Eigen::Index>(j)) += before - after;
    before = std::move(after);
  }
  return beta / static_cast<double>(k);
}

}  // namespace detail

/// Estimates A^t from one interleaved pass of K = m k intervals over `delta_steps`
/// steps, solving P A_i^T = beta_i for every target group i. The trainer advances
/// by `delta_steps`. The estimate is on the scale of one interval.
inline InteractionMatrix learn_params(Trainer& trainer, std::int64_t delta_steps, std::size_t k, double epsilon,
                                      std::uint64_t seed) {
  const std::size_t m = trainer.groups();
  const Eigen::MatrixXd beta = detail::interleaved_sweep(
      trainer, delta_steps, k, epsilon, seed, static_cast<Eigen::Index>(m),
      [](Trainer& t) { return t.observe_losses(Split::Val); });
  const Eigen::MatrixXd P = detail::sweep_design(m, epsilon);
  // Rows of P are sweep mixtures, so A = beta P^{-T}.
  const Eigen::MatrixXd At = P.fullPivLu().solve(beta.transpose());
  return {At.transpose(), detail::interval_steps(delta_steps, m, k)};
}

/// Out-of-domain variant: a single tracked loss, returns the 1 x m row a with P a^T = beta.
inline InteractionMatrix learn_params_ood(Trainer& trainer, std::int64_t delta_steps, std::size_t k, double epsilon,
                                          std::uint64_t seed) {
  require(trainer.has_ood(), ErrorCode::InvalidConfig, "trainer has no out-of-domain channel");
  const std::size_t m = trainer.groups();
  const Eigen::MatrixXd beta = detail::interleaved_sweep(trainer, delta_steps, k, epsilon, seed, 1, [](Trainer& t) {
    Eigen::VectorXd v(1);
    v[0] = t.observe_ood_loss(Split::Val);
    return v;
  });
  const Eigen::MatrixXd P = detail::sweep_design(m, epsilon);
  const Eigen::VectorXd a = P.fullPivLu().solve(beta.row(0).transpose());
  return {a.transpose(), detail::interval_steps(delta_steps, m, k)};
}

namespace detail {

inline void check_aioli(const AioliParams& hp, std::int64_t S, std::size_t m) {
  require(hp.rounds >= 1 && hp.sweeps >= 1, ErrorCode::InvalidArgument, "AIOLI needs T >= 1 and k >= 1");
  require(hp.epsilon >= 0.0 && hp.epsilon <= 1.0, ErrorCode::EpsilonOutOfRange, "epsilon must lie in [0, 1]");
  require(hp.eta > 0.0, ErrorCode::InvalidArgument, "eta must be positive");
  require(hp.delta > 0.0 && hp.delta < 1.0, ErrorCode::InvalidArgument, "delta must lie in (0, 1)");
  if (hp.gamma) require(*hp.gamma >= 0.0 && *hp.gamma < 1.0, ErrorCode::GammaOutOfRange, "gamma must lie in [0, 1)");
  require(hp.init_steps >= 0 && hp.init_steps < S, ErrorCode::InvalidArgument, "need 0 <= S_init < S");
  if (hp.init_steps > 0) {
    require(hp.init_proportions.has_value(), ErrorCode::InvalidArgument, "S_init > 0 needs initial proportions");
    require(hp.init_proportions->size() == m, ErrorCode::DimensionMismatch, "initial proportions size mismatch");
  }
}

// Shared AIOLI loop; `estimate` runs the parameter-learning phase and returns
// the matrix whose b = 1 weighted column sums drive the update.
template <class EstimateFn>
MethodResult run_aioli_loop(std::string name, Trainer trainer, std::int64_t S, const AioliParams& hp,
                            const RunOptions& opts, EstimateFn&& estimate) {
  const std::size_t m = trainer.groups();
  check_aioli(hp, S, m);
  MethodResult r;
  r.method = std::move(name);
  r.eta = hp.eta;
  trainer.set_purpose(RunPurpose::Final);
  record_trajectory(r.trajectory, trainer);
  if (hp.init_steps > 0) train_recorded(trainer, *hp.init_proportions, hp.init_steps, opts, r.trajectory);

  const auto p0 = uniform(m);
  auto p = p0;
  std::optional<InteractionMatrix> ema;
  std::vector<MixtureProportions> used;
  const std::int64_t remaining = S - hp.init_steps;
  check_round_steps(remaining, hp.rounds);
  const auto K = static_cast<std::int64_t>(m * hp.sweeps);
  for (int round = 1; round <= hp.rounds; ++round) {
    const std::int64_t round_steps = round_length(remaining, hp.rounds, round);
    const auto interval = static_cast<std::int64_t>(std::floor(hp.delta * static_cast<double>(round_steps) /
                                                               static_cast<double>(K)));
    require(interval >= 1, ErrorCode::IndivisibleSteps,
            "round of " + std::to_string(round_steps) + " steps leaves no interval for " + std::to_string(K) +
                " LearnParams intervals");
    const std::int64_t learn_steps = interval * K;
    const std::int64_t step_before = trainer.step();
    const InteractionMatrix raw = estimate(trainer, learn_steps, derive_seed(hp.seed, static_cast<std::uint64_t>(round)));
    record_trajectory(r.trajectory, trainer);

    // An all-zero estimate carries no direction; keep the current proportions.
    if (raw.entries.norm() > 0.0) {
      const InteractionMatrix normalized = normalize_interaction(raw);
      InteractionMatrix driving = normalized;
      MixtureProportions from = p;
      if (hp.gamma) {
        ema = ema_interaction(ema, normalized, *hp.gamma);
        driving = *ema;
        from = p0;
      }
      const Eigen::VectorXd b = Eigen::VectorXd::Ones(driving.entries.rows());
      TraceEntry e{round, step_before, driving.entries, b, from, egd_step(from, driving, b, hp.eta), raw.entries};
      if (opts.observer) opts.observer(trainer, e);
      p = e.updated;
      r.trace.push_back(std::move(e));
    }
    used.push_back(p);
    if (round_steps > learn_steps) train_recorded(trainer, p, round_steps - learn_steps, opts, r.trajectory);
  }
  r.schedule = MixtureSchedule(std::move(used));
  finish(r, trainer);
  r.ledger = BudgetLedger(S, 0);
  return r;
}

}  // namespace detail

/// AIOLI: per round, estimate A^t with LearnParams over a delta fraction of the
/// round, normalize, (optionally) average, take an EGD step, then train the rest
/// of the round on the new proportions. Uses no extra budget.
inline MethodResult run_aioli(Trainer trainer, std::int64_t S, const AioliParams& hp, const RunOptions& opts = {}) {
  const double eps = hp.epsilon;
  const std::size_t k = hp.sweeps;
  return detail::run_aioli_loop("aioli", std::move(trainer), S, hp, opts,
                                [&](Trainer& t, std::int64_t steps, std::uint64_t seed) {
                                  return learn_params(t, steps, k, eps, seed);
                                });
}

inline MethodResult run_aioli_ood(Trainer trainer, std::int64_t S, const AioliParams& hp, const RunOptions& opts = {}) {
  require(trainer.has_ood(), ErrorCode::InvalidConfig, "AIOLI-OOD needs an out-of-domain channel");
  const double eps = hp.epsilon;
  const std::size_t k = hp.sweeps;
  auto r = detail::run_aioli_loop("aioli_ood", std::move(trainer), S, hp, opts,
                                  [&](Trainer& t, std::int64_t steps, std::uint64_t seed) {
                                    return learn_params_ood(t, steps, k, eps, seed);
                                  });
  return r;
}

/// The (A^t, b^t) a method used at a traced round.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> extract_parameters(const MethodResult& result, std::int64_t round) {
  const auto it = std::lower_bound(result.trace.begin(), result.trace.end(), round,
                                   [](const TraceEntry& e, std::int64_t r) { return e.round < r; });
  require(it != result.trace.end() && it->round == round, ErrorCode::RoundNotTraced,
          "round " + std::to_string(round) + " is not in the parameter trace");
  return {it->A, it->b};
}

}  // namespace lmo
