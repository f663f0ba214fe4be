#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "lmo/trainer.hpp"
#include "test_util.hpp"

using namespace lmo;

namespace {

TrainerConfig linear(Eigen::MatrixXd A, Eigen::VectorXd L0, double floor = 0.01) {
  TrainerConfig c;
  c.m = static_cast<std::size_t>(A.rows());
  c.initial = SplitLosses::same(L0);
  c.dynamics = DynamicsSchedule::constant(std::move(A), floor);
  return c;
}

Eigen::Vector2d v2(double a, double b) { return {a, b}; }

MixtureProportions mix(std::initializer_list<double> v) { return MixtureProportions::validate(std::vector<double>(v)); }

}  // namespace

TEST(NewTrainer, StartsAtInitialLosses) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Identity() * 1e-3, v2(2, 3)));
  EXPECT_EQ(t.step(), 0);
  for (auto s : {Split::Train, Split::Val, Split::Test}) EXPECT_EQ(t.true_losses(s), v2(2, 3));
}

TEST(NewTrainer, SameSeedSameState) {
  auto c = linear(Eigen::Matrix2d::Identity() * 1e-3, v2(2, 3));
  c.observation_noise = 0.1;
  c.seed = 9;
  auto a = new_trainer(c), b = new_trainer(c);
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(a.observe_losses(Split::Val), b.observe_losses(Split::Val));
}

TEST(NewTrainer, InvalidConfigs) {
  EXPECT_EQ(code_of([] { new_trainer(linear(Eigen::Matrix2d::Zero(), v2(0.001, 3))); }), ErrorCode::InvalidConfig);
  auto noisy = linear(Eigen::Matrix2d::Zero(), v2(2, 3));
  noisy.observation_noise = -1;
  EXPECT_EQ(code_of([&] { new_trainer(noisy); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { DynamicsSchedule::constant(Eigen::Matrix2d::Zero(), 0.0); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { DynamicsSchedule({{5, Eigen::Matrix2d::Zero()}}, 0.01); }), ErrorCode::InvalidConfig);
}

TEST(Train, ZeroDynamicsLeavesLosses) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Zero(), v2(2, 3)));
  t.train(uniform(2), 1000);
  EXPECT_EQ(t.true_losses(Split::Val), v2(2, 3));
  EXPECT_EQ(t.step(), 1000);
}

TEST(Train, ClosedFormAccumulation) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Identity() * 0.001, v2(2, 3)));
  t.train(onehot(0, 2), 100);
  EXPECT_NEAR(t.true_losses(Split::Val)[0], 1.9, 1e-12);
  EXPECT_EQ(t.true_losses(Split::Val)[1], 3.0);
}

TEST(Train, ChunkedEqualsStepwise) {
  Eigen::Matrix2d A;
  A << 0.002, 0.0005, -0.0003, 0.001;
  auto a = new_trainer(linear(A, v2(2, 3)));
  auto b = new_trainer(linear(A, v2(2, 3)));
  a.train(mix({0.3, 0.7}), 500);
  for (int s = 0; s < 500; ++s) b.train(mix({0.3, 0.7}), 1);
  EXPECT_LT((a.true_losses(Split::Val) - b.true_losses(Split::Val)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Train, ClampsAtFloorAndIsMonotone) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Constant(0.01), v2(2, 3), 0.5));
  Eigen::VectorXd prev = t.true_losses(Split::Val);
  for (int r = 0; r < 50; ++r) {
    t.train(mix({0.8, 0.2}), 20);
    const Eigen::VectorXd cur = t.true_losses(Split::Val);
    EXPECT_TRUE((cur.array() <= prev.array()).all());
    EXPECT_TRUE((cur.array() >= 0.5).all());
    prev = cur;
  }
  EXPECT_EQ(prev, v2(0.5, 0.5));
}

TEST(Train, LinearLawIdentity) {
  Eigen::Matrix3d A;
  A << 3e-4, 1e-4, 0, 0, 2e-4, 5e-5, 1e-5, 0, 4e-4;
  TrainerConfig c;
  c.m = 3;
  c.initial = SplitLosses::same(Eigen::Vector3d(4, 4, 4));
  c.dynamics = DynamicsSchedule::constant(A, 0.01);
  auto t = new_trainer(c);
  const auto p = mix({0.2, 0.5, 0.3});
  const Eigen::VectorXd before = t.true_losses(Split::Val);
  t.train(p, 250);
  EXPECT_LT(((before - t.true_losses(Split::Val)) - 250.0 * A * p.vector()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Train, ScheduleSegmentsFlipColumnSumOrder) {
  Eigen::Matrix2d first, second;
  first << 0.148, 0.011, -0.013, 0.087;
  second << 0.015, 0.001, 0.001, 0.016;
  const std::int64_t round = 100;
  TrainerConfig c;
  c.m = 2;
  c.initial = SplitLosses::same(v2(5, 5));
  c.dynamics = DynamicsSchedule({{0, first / round}, {round, second / round}}, 0.01);
  auto t = new_trainer(c);
  const Eigen::RowVector2d early = t.active_matrix().colwise().sum();
  EXPECT_GT(early[0], early[1]);
  t.train(uniform(2), round);
  const Eigen::RowVector2d late = t.active_matrix().colwise().sum();
  EXPECT_LT(late[0], late[1]);

  // Crossing the boundary inside one call uses each segment for its own steps.
  auto u = new_trainer(c);
  u.train(onehot(0, 2), 150);
  const Eigen::Vector2d expected = v2(5, 5) - first.col(0) - 0.5 * second.col(0);
  EXPECT_LT((u.true_losses(Split::Val) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Observe, NoiseFreeIsExact) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Zero(), v2(2, 3)));
  EXPECT_EQ(t.observe_losses(Split::Val), v2(2, 3));
  EXPECT_EQ(t.observe_losses(Split::Test), t.true_losses(Split::Val));
}

TEST(Observe, NoiseMeanWithinThreeSigma) {
  auto c = linear(Eigen::Matrix2d::Zero(), v2(2, 3));
  c.observation_noise = 0.01;
  auto t = new_trainer(c);
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  const int n = 10000;
  for (int s = 0; s < n; ++s) sum += t.observe_losses(Split::Val);
  const Eigen::Vector2d mean = sum / n;
  EXPECT_LT(std::abs(mean[0] - 2.0), 3 * 0.01 / std::sqrt(n));
  EXPECT_LT(std::abs(mean[1] - 3.0), 3 * 0.01 / std::sqrt(n));
  EXPECT_NE(t.observe_losses(Split::Val), t.observe_losses(Split::Val));
}

TEST(GradientAlignment, OracleAndNoise) {
  Eigen::Matrix2d A;
  A << 0.002, 0.0001, 0.0002, 0.001;
  auto exact = new_trainer(linear(A, v2(2, 3)));
  EXPECT_EQ(exact.gradient_alignment(), Eigen::MatrixXd(A));

  auto c = linear(A, v2(2, 3));
  c.gradient_noise = 0.05;
  auto t = new_trainer(c);
  EXPECT_NE(t.gradient_alignment(), t.gradient_alignment());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(2, 2);
  const int n = 10000;
  for (int s = 0; s < n; ++s) sum += t.gradient_alignment();
  EXPECT_LT((sum / n - A).cwiseAbs().maxCoeff(), 3 * 0.05 / std::sqrt(n));
}

TEST(Snapshot, RestoreIsBitIdentical) {
  auto c = linear(Eigen::Matrix2d::Identity() * 1e-3, v2(2, 3));
  c.observation_noise = 0.02;
  auto t = new_trainer(c);
  t.train(uniform(2), 10);
  const auto token = t.snapshot();
  const TrainerState saved = t.state();
  t.train(onehot(1, 2), 40);
  const auto first = t.observe_losses(Split::Val);
  t.restore(token);
  EXPECT_EQ(t.state(), saved);
  t.train(onehot(1, 2), 40);
  EXPECT_EQ(t.observe_losses(Split::Val), first);
  t.restore(token);
  t.restore(token);
  EXPECT_EQ(t.state(), saved);
  EXPECT_EQ(code_of([&] { t.restore(SnapshotToken{999}); }), ErrorCode::UnknownToken);
}

TEST(Purpose, StepsAreItemized) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Zero(), v2(2, 3)));
  t.train(uniform(2), 5);
  t.set_purpose(RunPurpose::Proxy);
  t.train(uniform(2), 7);
  EXPECT_EQ(t.steps_for(RunPurpose::Final), 5);
  EXPECT_EQ(t.steps_for(RunPurpose::Proxy), 7);
}

TEST(Factory, StreamsAreIndependentAndDeterministic) {
  auto c = linear(Eigen::Matrix2d::Zero(), v2(2, 3));
  c.observation_noise = 0.1;
  c.seed = 4;
  const TrainerFactory f(c);
  auto a = f.make(7, RunPurpose::Sweep), b = f.make(7, RunPurpose::Sweep), d = f.make(8, RunPurpose::Sweep);
  const auto va = a.observe_losses(Split::Val);
  EXPECT_EQ(va, b.observe_losses(Split::Val));
  EXPECT_NE(va, d.observe_losses(Split::Val));
  EXPECT_EQ(f.final_run().purpose(), RunPurpose::Final);
}

TEST(LogLinear, EndpointFollowsStaticLaw) {
  Eigen::Matrix2d A;
  A << 2.0, 0.5, 0.3, 1.5;
  TrainerConfig c;
  c.m = 2;
  c.kind = TrainerKind::LogLinear;
  c.dynamics = DynamicsSchedule::constant(Eigen::Matrix2d::Zero(), 0.01);
  c.static_law = StaticLawParams(A, v2(3, 2.5), v2(1, 1.5));
  c.law_horizon = 1000;
  auto t = new_trainer(c);
  EXPECT_LT((t.true_losses(Split::Val) - v2(4, 4)).norm(), 1e-12);
  const auto p = mix({0.3, 0.7});
  t.train(p, 1000);
  EXPECT_LT((t.true_losses(Split::Val) - eval_static(*c.static_law, p)).norm(), 1e-12);
}

TEST(Ood, ChannelEvolvesUnderRow) {
  auto c = linear(Eigen::Matrix2d::Zero(), v2(2, 3));
  c.ood = OodChannel{3.0, 3.5, {{0, Eigen::RowVector2d(0.001, 0.003)}}};
  auto t = new_trainer(c);
  t.train(mix({0.5, 0.5}), 100);
  EXPECT_NEAR(t.true_ood_loss(Split::Val), 3.0 - 0.2, 1e-12);
  EXPECT_NEAR(t.true_ood_loss(Split::Test), 3.5 - 0.2, 1e-12);
}

TEST(Trajectory, CsvColumns) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Zero(), v2(2, 3)));
  std::vector<TrajectoryPoint> pts;
  record_trajectory(pts, t);
  std::ostringstream os;
  write_trajectory_csv(os, pts);
  EXPECT_EQ(os.str(), "step,group,split,loss\n0,0,val,2\n0,1,val,3\n0,0,test,2\n0,1,test,3\n");
}
