#pragma once

// Seeded discrete-time stand-in for model training. Per-group losses evolve under
// a ground-truth interaction schedule:
//
//   linear kind:      L <- max(floor, L - A_gt(step) p)              once per step
//   log-linear kind:  L_i = max(floor, c_i + b_i exp(-(A x)_i / H))  x = cumulative exposure
//
// Observations add Gaussian noise from the trainer's own RNG, so the whole
// trajectory is a pure function of the configuration and the call sequence.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmo/error.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/simplex.hpp"

namespace lmo {

enum class Split { Train, Val, Test };

constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

enum class TrainerKind { Linear, LogLinear };

/// What a block of trainer steps is spent on.
enum class RunPurpose { Final, Reference, Proxy, Sweep, SkillsGraph };
inline constexpr std::size_t kRunPurposeCount = 5;

constexpr std::string_view to_string(RunPurpose p) {
  switch (p) {
    case RunPurpose::Final: return "final";
    case RunPurpose::Reference: return "reference";
    case RunPurpose::Proxy: return "proxy";
    case RunPurpose::Sweep: return "sweep";
    case RunPurpose::SkillsGraph: return "skills_graph";
  }
  return "?";
}

struct DynamicsSegment {
  std::int64_t start = 0;
  Eigen::MatrixXd per_step;  // ground-truth interaction applied once per step
};

class DynamicsSchedule {
 public:
  DynamicsSchedule() = default;
  DynamicsSchedule(std::vector<DynamicsSegment> segments, double loss_floor)
      : segments_(std::move(segments)), floor_(loss_floor) {
    require(!segments_.empty(), ErrorCode::InvalidConfig, "dynamics schedule needs a segment");
    require(segments_.front().start == 0, ErrorCode::InvalidConfig, "first segment must start at step 0");
    require(loss_floor > 0.0 && std::isfinite(loss_floor), ErrorCode::InvalidConfig, "loss floor must be positive");
    const auto m = segments_.front().per_step.rows();
    for (std::size_t s = 0; s < segments_.size(); ++s) {
      const auto& seg = segments_[s];
      require(seg.per_step.rows() == m && seg.per_step.cols() == m, ErrorCode::InvalidConfig,
              "segment matrices must be square and equally sized");
      require(seg.per_step.allFinite(), ErrorCode::InvalidConfig, "non-finite ground-truth entry");
      if (s > 0)
        require(seg.start > segments_[s - 1].start, ErrorCode::InvalidConfig,
                "segment starts must be strictly increasing");
    }
  }

  static DynamicsSchedule constant(Eigen::MatrixXd per_step, double loss_floor) {
    return DynamicsSchedule({{0, std::move(per_step)}}, loss_floor);
  }

  Eigen::Index groups() const noexcept { return segments_.empty() ? 0 : segments_.front().per_step.rows(); }
  double loss_floor() const noexcept { return floor_; }
  const std::vector<DynamicsSegment>& segments() const noexcept { return segments_; }

  std::size_t segment_index(std::int64_t step) const {
    std::size_t idx = 0;
    while (idx + 1 < segments_.size() && segments_[idx + 1].start <= step) ++idx;
    return idx;
  }
  const Eigen::MatrixXd& at(std::int64_t step) const { return segments_[segment_index(step)].per_step; }

  /// First step of the segment after the one containing `step`, if any.
  std::optional<std::int64_t> next_boundary(std::int64_t step) const {
    const auto idx = segment_index(step);
    if (idx + 1 < segments_.size()) return segments_[idx + 1].start;
    return std::nullopt;
  }

 private:
  std::vector<DynamicsSegment> segments_;
  double floor_ = 0.01;
};

struct OodSegment {
  std::int64_t start = 0;
  Eigen::RowVectorXd per_step;  // influence of each training group on the out-of-domain loss
};

/// An extra loss channel for a group that is evaluated but never trained on.
struct OodChannel {
  double initial_val = 3.0;
  double initial_test = 3.0;
  std::vector<OodSegment> segments;

  const Eigen::RowVectorXd& at(std::int64_t step) const {
    std::size_t idx = 0;
    while (idx + 1 < segments.size() && segments[idx + 1].start <= step) ++idx;
    return segments[idx].per_step;
  }
};

struct SplitLosses {
  Eigen::VectorXd train;
  Eigen::VectorXd val;
  Eigen::VectorXd test;

  const Eigen::VectorXd& operator[](Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
  Eigen::VectorXd& operator[](Split s) { return s == Split::Train ? train : s == Split::Val ? val : test; }

  static SplitLosses same(const Eigen::VectorXd& v) { return {v, v, v}; }
};

struct TrainerConfig {
  std::size_t m = 2;
  SplitLosses initial;
  DynamicsSchedule dynamics;
  double observation_noise = 0.0;
  double gradient_noise = 0.0;
  std::uint64_t seed = 0;
  TrainerKind kind = TrainerKind::Linear;
  std::optional<StaticLawParams> static_law;  // log-linear kind only
  std::int64_t law_horizon = 0;               // steps at which exposure x / H equals p
  std::optional<OodChannel> ood;

  void validate() const {
    require(m >= 2, ErrorCode::InvalidConfig, "trainer needs m >= 2");
    const auto mm = static_cast<Eigen::Index>(m);
    require(dynamics.groups() == mm, ErrorCode::InvalidConfig, "dynamics dimension does not match m");
    require(observation_noise >= 0.0 && gradient_noise >= 0.0, ErrorCode::InvalidConfig, "noise must be >= 0");
    const double floor = dynamics.loss_floor();
    if (kind == TrainerKind::Linear) {
      for (auto s : {Split::Train, Split::Val, Split::Test}) {
        require(initial[s].size() == mm, ErrorCode::InvalidConfig,
                std::string("initial ") + std::string(to_string(s)) + " losses must have m entries");
        require(initial[s].allFinite() && (initial[s].array() > floor).all(), ErrorCode::InvalidConfig,
                "initial losses must exceed the loss floor");
      }
    } else {
      require(static_law.has_value(), ErrorCode::InvalidConfig, "log-linear trainer needs a static law");
      require(static_law->groups() == mm, ErrorCode::InvalidConfig, "static law dimension does not match m");
      require(law_horizon > 0, ErrorCode::InvalidConfig, "log-linear trainer needs a positive horizon");
      require(((static_law->b() + static_law->c()).array() > floor).all(), ErrorCode::InvalidConfig,
              "initial losses c + b must exceed the loss floor");
    }
    if (ood) {
      require(!ood->segments.empty() && ood->segments.front().start == 0, ErrorCode::InvalidConfig,
              "out-of-domain schedule must start at step 0");
      for (std::size_t s = 0; s < ood->segments.size(); ++s) {
        require(ood->segments[s].per_step.size() == mm && ood->segments[s].per_step.allFinite(),
                ErrorCode::InvalidConfig, "out-of-domain rows must have m finite entries");
        if (s > 0)
          require(ood->segments[s].start > ood->segments[s - 1].start, ErrorCode::InvalidConfig,
                  "out-of-domain segment starts must be strictly increasing");
      }
      require(ood->initial_val > floor && ood->initial_test > floor, ErrorCode::InvalidConfig,
              "out-of-domain initial losses must exceed the loss floor");
    }
  }
};

struct TrainerState {
  std::int64_t step = 0;
  SplitLosses losses;
  Eigen::VectorXd exposure;  // cumulative p-weighted steps per group
  double ood_val = 0.0;
  double ood_test = 0.0;
  std::mt19937_64 rng;
  std::array<std::int64_t, kRunPurposeCount> steps_by_purpose{};

  friend bool operator==(const TrainerState& a, const TrainerState& b) {
    auto same = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
      return x.size() == y.size() && (x.size() == 0 || x == y);
    };
    return a.step == b.step && same(a.losses.train, b.losses.train) && same(a.losses.val, b.losses.val) &&
           same(a.losses.test, b.losses.test) && same(a.exposure, b.exposure) && a.ood_val == b.ood_val &&
           a.ood_test == b.ood_test && a.rng == b.rng && a.steps_by_purpose == b.steps_by_purpose;
  }
};

struct SnapshotToken {
  std::uint64_t id = 0;
  friend bool operator==(const SnapshotToken&, const SnapshotToken&) = default;
};

class Trainer {
 public:
  explicit Trainer(TrainerConfig config) : config_(std::make_shared<const TrainerConfig>(std::move(config))) {
    config_->validate();
    state_.rng.seed(config_->seed);
    const auto m = static_cast<Eigen::Index>(config_->m);
    state_.exposure = Eigen::VectorXd::Zero(m);
    if (config_->kind == TrainerKind::Linear) {
      state_.losses = config_->initial;
    } else {
      state_.losses = SplitLosses::same(law_losses());
    }
    if (config_->ood) {
      state_.ood_val = config_->ood->initial_val;
      state_.ood_test = config_->ood->initial_test;
    }
  }

  const TrainerConfig& config() const noexcept { return *config_; }
  const TrainerState& state() const noexcept { return state_; }
  std::size_t groups() const noexcept { return config_->m; }
  std::int64_t step() const noexcept { return state_.step; }
  double loss_floor() const noexcept { return config_->dynamics.loss_floor(); }
  bool has_ood() const noexcept { return config_->ood.has_value(); }

  RunPurpose purpose() const noexcept { return purpose_; }
  void set_purpose(RunPurpose p) noexcept { purpose_ = p; }
  std::int64_t steps_for(RunPurpose p) const { return state_.steps_by_purpose[static_cast<std::size_t>(p)]; }

  /// Trains `steps` steps on the fixed mixture p.
  void train(const MixtureProportions& p, std::int64_t steps) {
    require(steps >= 1, ErrorCode::InvalidArgument, "train needs at least one step");
    require(p.size() == config_->m, ErrorCode::DimensionMismatch, "mixture size does not match trainer");
    const Eigen::VectorXd pv = p.vector();
    const double floor = loss_floor();
    std::int64_t remaining = steps;
    while (remaining > 0) {
      std::int64_t chunk = remaining;
      if (auto next = config_->dynamics.next_boundary(state_.step)) chunk = std::min(chunk, *next - state_.step);
      if (config_->ood)
        if (auto next = next_ood_boundary(state_.step)) chunk = std::min(chunk, *next - state_.step);
      const auto n = static_cast<double>(chunk);
      if (config_->kind == TrainerKind::Linear) {
        // Per-step drop d is constant within a segment, so n steps of max(floor, L - d) collapse to one.
        const Eigen::VectorXd drop = config_->dynamics.at(state_.step) * pv;
        for (auto s : {Split::Train, Split::Val, Split::Test})
          state_.losses[s] = (state_.losses[s] - n * drop).cwiseMax(floor);
      }
      if (config_->ood) {
        const double drop = config_->ood->at(state_.step).dot(pv);
        state_.ood_val = std::max(floor, state_.ood_val - n * drop);
        state_.ood_test = std::max(floor, state_.ood_test - n * drop);
      }
      state_.exposure += n * pv;
      state_.step += chunk;
      remaining -= chunk;
    }
    if (config_->kind == TrainerKind::LogLinear) state_.losses = SplitLosses::same(law_losses());
    state_.steps_by_purpose[static_cast<std::size_t>(purpose_)] += steps;
  }

  const Eigen::VectorXd& true_losses(Split split) const { return state_.losses[split]; }

  Eigen::VectorXd observe_losses(Split split) {
    Eigen::VectorXd out = state_.losses[split];
    add_noise(out, config_->observation_noise);
    return out;
  }

  double true_ood_loss(Split split = Split::Val) const {
    require(has_ood(), ErrorCode::InvalidConfig, "trainer has no out-of-domain channel");
    return split == Split::Test ? state_.ood_test : state_.ood_val;
  }

  double observe_ood_loss(Split split = Split::Val) {
    Eigen::VectorXd v(1);
    v[0] = true_ood_loss(split);
    add_noise(v, config_->observation_noise);
    return v[0];
  }

  /// The ground-truth per-step interaction in effect at the current step.
  Eigen::MatrixXd active_matrix() const {
    if (config_->kind == TrainerKind::Linear) return config_->dynamics.at(state_.step);
    // d L_i / d x_j of the log-linear law, per unit of exposure.
    const auto& law = *config_->static_law;
    const double H = static_cast<double>(config_->law_horizon);
    const Eigen::VectorXd scale =
        law.b().array() * (-(law.A() * state_.exposure).array() / H).exp() / H;
    return scale.asDiagonal() * law.A();
  }

  /// Synthetic gradient inner products: the active ground truth plus fresh noise.
  Eigen::MatrixXd gradient_alignment() {
    Eigen::MatrixXd G = active_matrix();
    if (config_->gradient_noise > 0.0) {
      std::normal_distribution<double> noise(0.0, config_->gradient_noise);
      for (Eigen::Index c = 0; c < G.cols(); ++c)
        for (Eigen::Index r = 0; r < G.rows(); ++r) G(r, c) += noise(state_.rng);
    }
    return G;
  }

  SnapshotToken snapshot() {
    const SnapshotToken token{next_token_++};
    snapshots_.emplace(token.id, state_);
    return token;
  }

  void restore(SnapshotToken token) {
    const auto it = snapshots_.find(token.id);
    require(it != snapshots_.end(), ErrorCode::UnknownToken, "no snapshot " + std::to_string(token.id));
    state_ = it->second;
  }

  /// Replaces the noise stream; used to decorrelate runs branched from one snapshot.
  void reseed(std::uint64_t seed) { state_.rng.seed(seed); }

  const TrainerState& snapshot_state(SnapshotToken token) const {
    const auto it = snapshots_.find(token.id);
    require(it != snapshots_.end(), ErrorCode::UnknownToken, "no snapshot " + std::to_string(token.id));
    return it->second;
  }

 private:
  Eigen::VectorXd law_losses() const {
    const auto& law = *config_->static_law;
    const double H = static_cast<double>(config_->law_horizon);
    const Eigen::VectorXd exponent = -(law.A() * state_.exposure) / H;
    return (law.c().array() + law.b().array() * exponent.array().exp()).max(loss_floor()).matrix();
  }

  std::optional<std::int64_t> next_ood_boundary(std::int64_t step) const {
    for (const auto& seg : config_->ood->segments)
      if (seg.start > step) return seg.start;
    return std::nullopt;
  }

  void add_noise(Eigen::VectorXd& v, double sigma) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += noise(state_.rng);
  }

  std::shared_ptr<const TrainerConfig> config_;
  TrainerState state_;
  RunPurpose purpose_ = RunPurpose::Final;
  std::map<std::uint64_t, TrainerState> snapshots_;
  std::uint64_t next_token_ = 1;
};

inline Trainer new_trainer(TrainerConfig config) { return Trainer(std::move(config)); }

/// Produces independent trainers for the runs of one method: stream 0 is the
/// final run, other streams are extra runs. Each stream gets its own RNG seed.
class TrainerFactory {
 public:
  explicit TrainerFactory(TrainerConfig config) : config_(std::move(config)) { config_.validate(); }

  Trainer make(std::uint64_t stream, RunPurpose purpose) const {
    TrainerConfig cfg = config_;
    cfg.seed = stream == 0 ? config_.seed : derive_seed(config_.seed, stream);
    Trainer t(std::move(cfg));
    t.set_purpose(purpose);
    return t;
  }

  Trainer final_run() const { return make(0, RunPurpose::Final); }
  const TrainerConfig& config() const noexcept { return config_; }
  std::size_t groups() const noexcept { return config_.m; }

 private:
  TrainerConfig config_;
};

struct TrajectoryPoint {
  std::int64_t step = 0;
  Split split = Split::Val;
  std::size_t group = 0;
  double loss = 0.0;
};

inline void record_trajectory(std::vector<TrajectoryPoint>& out, const Trainer& trainer) {
  for (auto s : {Split::Val, Split::Test}) {
    const auto& l = trainer.true_losses(s);
    for (Eigen::Index i = 0; i < l.size(); ++i)
      out.push_back({trainer.step(), s, static_cast<std::size_t>(i), l[i]});
  }
}

/// CSV columns: step,group,split,loss
inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& points) {
  os << "step,group,split,loss\n";
  const auto old = os.precision(17);
  for (const auto& pt : points) os << pt.step << ',' << pt.group << ',' << to_string(pt.split) << ',' << pt.loss << '\n';
  os.precision(old);
}

}  // namespace lmo
