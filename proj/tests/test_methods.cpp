#include <gtest/gtest.h>

#include <cmath>

#include "lmo/methods.hpp"
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

Eigen::Matrix2d m2(double a, double b, double c, double d) {
  Eigen::Matrix2d A;
  A << a, b, c, d;
  return A;
}

CandidateSet grid() { return candidate_sweep(2, GridSweep{}); }

void expect_egd_replay(const MethodResult& r) {
  ASSERT_FALSE(r.trace.empty()) << r.method;
  for (const auto& e : r.trace) {
    const auto via_egd = egd_step(e.p, e.A, e.b, r.eta);
    EXPECT_LT((via_egd.vector() - e.updated.vector()).cwiseAbs().maxCoeff(), 1e-12)
        << r.method << " round " << e.round;
  }
}

void expect_result_invariants(const MethodResult& r) {
  EXPECT_NEAR(r.average_test_loss, r.final_test_losses.mean(), 1e-15);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LT(r.trace[i - 1].round, r.trace[i].round);
  if (r.ledger) {
    EXPECT_LE(r.ledger->consumed(), r.ledger->allowance());
  }
}

Eigen::VectorXd trace_mean(const MethodResult& r) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(r.trace.front().p.vector().size());
  for (const auto& e : r.trace) mean += e.p.vector();
  return mean / static_cast<double>(r.trace.size());
}

}  // namespace

TEST(Stratified, ClosedFormDrop) {
  const double a = 2e-4;
  const std::int64_t S = 5000;
  const TrainerFactory f(linear(Eigen::Matrix2d::Identity() * a, v2(5, 5)));
  const auto r = run_stratified(f, S);
  EXPECT_NEAR(r.final_test_losses[0], 5.0 - S * a / 2, 1e-10);
  EXPECT_NEAR(r.final_test_losses[1], 5.0 - S * a / 2, 1e-10);
  EXPECT_EQ(r.ledger->consumed(), 0);
  EXPECT_EQ(r.final_steps, S);
  expect_result_invariants(r);
}

TEST(Stratified, SymmetricGroundTruthGivesEqualLosses) {
  const TrainerFactory f(linear(m2(3e-4, 1e-4, 1e-4, 3e-4), v2(4, 4)));
  const auto r = run_stratified(f, 3000);
  EXPECT_DOUBLE_EQ(r.final_test_losses[0], r.final_test_losses[1]);
}

TEST(GridSearch, PicksExhaustiveOptimumWhenNoiseless) {
  // The floor makes the average loss non-linear in p, so the optimum is interior.
  const std::int64_t S = 2000;
  const auto cfg = linear(m2(8e-4, 1e-4, 0.0, 6e-4), v2(2, 2), 1.0);
  const TrainerFactory f(cfg);
  const auto cands = grid();

  std::size_t oracle = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < cands.size(); ++s) {
    auto t = new_trainer(cfg);
    t.train(cands[s], S);
    const double v = t.true_losses(Split::Val).mean();
    if (v < best - 1e-12) {
      best = v;
      oracle = s;
    }
  }
  const auto r = run_grid_search(f, S, cands, BudgetLedger::for_mode(BudgetMode::Unrestricted, S),
                                 allocation_for(BaseMethod::GridSearch, 2, S, BudgetMode::Unrestricted));
  EXPECT_EQ(*r.static_proportions, cands[oracle]);
  EXPECT_EQ(r.ledger->consumed(RunPurpose::Sweep), 9 * S);
  expect_result_invariants(r);
}

TEST(GridSearch, RestrictedAllocation) {
  const std::int64_t S = 5000;
  const TrainerFactory f(linear(m2(2e-4, 0, 0, 1e-4), v2(3, 3)));
  const auto cands = candidate_sweep(2, DirichletSweep{1.0, 10, 4, 5});
  const auto alloc = allocation_for(BaseMethod::GridSearch, 2, S, BudgetMode::Restricted);
  EXPECT_EQ(alloc, (RunAllocation{10, 250}));
  const auto r = run_grid_search(f, S, cands, BudgetLedger::for_mode(BudgetMode::Restricted, S), alloc);
  EXPECT_EQ(r.ledger->consumed(), 2500);
  EXPECT_EQ(r.extra_steps(), 10 * 250);
}

TEST(GridSearch, SingleCandidateAndBudget) {
  const TrainerFactory f(linear(m2(2e-4, 0, 0, 1e-4), v2(3, 3)));
  const auto only = MixtureProportions::validate(std::vector<double>{0.3, 0.7});
  const CandidateSet one{{only}, GridSweep{}};
  const auto r = run_grid_search(f, 100, one, BudgetLedger(100, 100), {1, 100});
  EXPECT_EQ(*r.static_proportions, only);
  EXPECT_EQ(code_of([&] { run_grid_search(f, 100, grid(), BudgetLedger(100, 100), {1, 100}); }),
            ErrorCode::BudgetExceeded);
  EXPECT_EQ(code_of([&] { run_grid_search(f, 100, grid(), BudgetLedger(100, 500), {10, 100}); }),
            ErrorCode::BudgetExceeded);
}

namespace {

TrainerConfig log_linear(const StaticLawParams& law, std::int64_t horizon) {
  TrainerConfig c;
  c.m = static_cast<std::size_t>(law.A().rows());
  c.kind = TrainerKind::LogLinear;
  c.dynamics = DynamicsSchedule::constant(Eigen::MatrixXd::Zero(law.A().rows(), law.A().cols()), 0.01);
  c.static_law = law;
  c.law_horizon = horizon;
  return c;
}

}  // namespace

TEST(Dml, SymmetricLawChoosesNearUniform) {
  const std::int64_t S = 1000;
  const StaticLawParams law(m2(2.0, 0.5, 0.5, 2.0), v2(3, 3), v2(1, 1));
  const TrainerFactory f(log_linear(law, S));
  const auto cands = grid();
  const auto r = run_dml(f, S, cands, BudgetLedger::for_mode(BudgetMode::Unrestricted, S),
                         allocation_for(BaseMethod::Dml, 2, S, BudgetMode::Unrestricted));
  EXPECT_NEAR((*r.static_proportions)[0], 0.5, 0.05);
  expect_result_invariants(r);
}

TEST(Dml, ExactLawBeatsEveryCandidate) {
  const std::int64_t S = 1000;
  const StaticLawParams law(m2(2.0, 0.5, 0.3, 1.5), v2(3.0, 2.5), v2(1.0, 1.5));
  const TrainerFactory f(log_linear(law, S));
  const auto cands = grid();
  const auto r = run_dml(f, S, cands, BudgetLedger::for_mode(BudgetMode::Unrestricted, S), {10, S});
  double best_candidate = std::numeric_limits<double>::infinity();
  for (const auto& c : cands.candidates) best_candidate = std::min(best_candidate, eval_static(law, c).mean());
  EXPECT_LE(r.average_test_loss, best_candidate + 1e-9);
}

TEST(Dml, TooFewRunsIsBudgetExceeded) {
  const StaticLawParams law(m2(2.0, 0.5, 0.5, 2.0), v2(3, 3), v2(1, 1));
  const TrainerFactory f(log_linear(law, 100));
  EXPECT_EQ(code_of([&] { run_dml(f, 100, grid(), BudgetLedger(100, 1000), {2, 100}); }), ErrorCode::BudgetExceeded);
  EXPECT_EQ(code_of([&] { run_dml(f, 100, grid(), BudgetLedger(100, 250), {10, 100}); }), ErrorCode::BudgetExceeded);
}

TEST(SkillIt, GraphOrientation) {
  // One-hot training on group 0 takes its loss 2.0 -> 1.0.
  const TrainerFactory f(linear(Eigen::Matrix2d::Identity() * 1e-3, v2(2, 3)));
  const auto graph = learn_skills_graph(f, 1000);
  const double literal = (1.0 - 2.0) / 2.0;
  EXPECT_DOUBLE_EQ(literal, -0.5);
  EXPECT_NEAR(graph(0, 0), -literal, 1e-12);
  EXPECT_EQ(graph(1, 0), 0.0);
  EXPECT_NEAR(graph(1, 1), 1.0 / 3.0, 1e-12);
}

TEST(SkillIt, TraceIsRowScaledGraph) {
  const std::int64_t S = 5000;
  Eigen::Matrix3d A;
  A << 3e-4, 1e-4, 0, 0, 2e-4, 5e-5, 1e-5, 0, 4e-4;
  auto cfg = linear(A, Eigen::Vector3d(4, 4, 4));
  const TrainerFactory f(cfg);
  const auto alloc = allocation_for(BaseMethod::SkillIt, 3, S, BudgetMode::Restricted);
  EXPECT_EQ(alloc, (RunAllocation{3, 833}));
  const auto r = run_skill_it(f, S, BudgetLedger::for_mode(BudgetMode::Restricted, S), alloc);
  EXPECT_EQ(r.ledger->consumed(RunPurpose::SkillsGraph), 3 * 833);
  const auto graph = learn_skills_graph(f, 833);
  ASSERT_EQ(r.trace.size(), 10u);

  // Replay the final run to read L_val at each update.
  auto t = f.final_run();
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto [At, bt] = extract_parameters(r, static_cast<std::int64_t>(i + 1));
    const Eigen::VectorXd val = t.true_losses(Split::Val);
    EXPECT_LT((At - val.asDiagonal() * graph).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(bt, Eigen::VectorXd::Ones(3));
    t.train((*r.schedule)[i], detail::round_length(S, 10, static_cast<int>(i + 1)));
  }
  EXPECT_LT((t.true_losses(Split::Test) - r.final_test_losses).cwiseAbs().maxCoeff(), 1e-12);
  expect_egd_replay(r);
  expect_result_invariants(r);
}

TEST(SkillIt, WindowAveragesLastProportions) {
  const TrainerFactory f(linear(m2(1e-3, 0, 0, 2e-4), v2(3, 3)));
  SkillItParams hp;
  hp.rounds = 4;
  hp.window = 2;
  const auto r = run_skill_it(f, 400, BudgetLedger(400, 800), {2, 100}, hp);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    const Eigen::VectorXd avg = 0.5 * (r.trace[i - 1].updated.vector() + r.trace[i].updated.vector());
    EXPECT_LT((avg - (*r.schedule)[i].vector()).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_EQ((*r.schedule)[0], r.trace[0].updated);
}

TEST(DoReMi, NoExcessKeepsUniform) {
  const std::int64_t S = 5000;
  const TrainerFactory f(linear(Eigen::Matrix2d::Zero(), v2(3, 3)));
  const auto alloc = allocation_for(BaseMethod::DoReMi, 2, S, BudgetMode::Restricted);
  EXPECT_EQ(alloc, (RunAllocation{2, 1250}));
  const auto r = run_doremi(f, S, BudgetLedger::for_mode(BudgetMode::Restricted, S), alloc);
  EXPECT_EQ(r.ledger->consumed(RunPurpose::Reference), 1250);
  EXPECT_EQ(r.ledger->consumed(RunPurpose::Proxy), 1250);
  EXPECT_EQ(r.trace.size(), 1250u);
  for (const auto& e : r.trace) EXPECT_TRUE(e.A.isZero(0.0));
  EXPECT_EQ(*r.static_proportions, uniform(2));
}

TEST(DoReMi, TraceIsDiagonalAndFinalIsTraceMean) {
  auto cfg = linear(m2(5e-4, 2e-4, 1e-4, 1e-4), v2(4, 3));
  cfg.observation_noise = 0.01;
  cfg.seed = 3;
  const TrainerFactory f(cfg);
  DoReMiParams hp;
  hp.eta = 0.5;
  const auto r = run_doremi(f, 1000, BudgetLedger(1000, 1000), {2, 500}, hp);
  for (const auto& e : r.trace) {
    EXPECT_TRUE(e.A.isDiagonal(0.0));
    EXPECT_GE(e.A.minCoeff(), 0.0);
  }
  EXPECT_LT((trace_mean(r) - r.static_proportions->vector()).cwiseAbs().maxCoeff(), 1e-12);
  expect_egd_replay(r);
  expect_result_invariants(r);
}

TEST(DoGE, NoiselessTraceEqualsGroundTruth) {
  const std::int64_t S = 2000;
  const Eigen::Matrix2d A = m2(1e-4, 4e-4, 1e-4, 3e-4);  // column 1 dominates
  const TrainerFactory f(linear(A, v2(4, 4)));
  DoGEParams hp;
  hp.eta = 10.0;
  const auto r = run_doge(f, S, BudgetLedger::for_mode(BudgetMode::Unrestricted, S),
                          allocation_for(BaseMethod::DoGE, 2, S, BudgetMode::Unrestricted), hp);
  EXPECT_EQ(r.ledger->consumed(), S);
  EXPECT_EQ(r.ledger->consumed(RunPurpose::Proxy), S);
  for (std::int64_t round : {1, 500, 2000}) EXPECT_EQ(extract_parameters(r, round).first, Eigen::MatrixXd(A));
  EXPECT_EQ(r.static_proportions->argmax(), 1u);
  EXPECT_LT((trace_mean(r) - r.static_proportions->vector()).cwiseAbs().maxCoeff(), 1e-12);
  expect_egd_replay(r);
}

TEST(UpdateEquivalence, RandomizedStates) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1e-3);
    Eigen::Matrix3d A;
    for (Eigen::Index i = 0; i < 9; ++i) A.data()[i] = u(rng);
    auto cfg = linear(A, Eigen::Vector3d(4, 5, 6));
    cfg.observation_noise = 0.02;
    cfg.gradient_noise = 1e-4;
    cfg.seed = seed;
    const TrainerFactory f(cfg);
    const BudgetLedger ledger(600, 6000);
    SkillItParams sk;
    sk.eta = 2.0;
    expect_egd_replay(run_skill_it(f, 600, ledger, {3, 600}, sk));
    expect_egd_replay(run_doremi(f, 600, ledger, {2, 300}, {1.0, 0.0}));
    expect_egd_replay(run_doge(f, 600, ledger, {1, 300}, {50.0, 0.0}));
    AioliParams hp;
    hp.rounds = 5;
    hp.sweeps = 2;
    hp.delta = 0.5;
    hp.seed = seed;
    expect_egd_replay(run_aioli(f.final_run(), 600, hp));
    hp.gamma = 0.5;
    expect_egd_replay(run_aioli(f.final_run(), 600, hp));
  }
}

TEST(LearnParams, NoiselessRecoveryIsExact) {
  Eigen::Matrix3d A;
  A << 3e-4, 1e-4, 0, 0, 2e-4, 5e-5, 1e-5, 0, 4e-4;
  auto t = new_trainer(linear(A, Eigen::Vector3d(4, 4, 4)));
  // 3 groups x 4 sweeps = 12 intervals of 50 steps.
  const auto est = learn_params(t, 600, 4, 0.75, 17);
  EXPECT_EQ(est.horizon_steps, 50);
  EXPECT_LT((est.entries - 50.0 * A).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(t.step(), 600);
  const Eigen::RowVectorXd cs = normalize_interaction(est).column_sums();
  const Eigen::RowVectorXd truth = A.colwise().sum() / (50.0 * A).norm() * 50.0;
  EXPECT_LT((cs - truth).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LearnParams, Errors) {
  auto t = new_trainer(linear(Eigen::Matrix2d::Identity() * 1e-4, v2(3, 3)));
  EXPECT_EQ(code_of([&] { learn_params(t, 400, 4, 1.0, 0); }), ErrorCode::SingularP);
  EXPECT_EQ(code_of([&] { learn_params(t, 401, 4, 0.5, 0); }), ErrorCode::IndivisibleSteps);
  EXPECT_EQ(code_of([&] { learn_params(t, 4, 4, 0.5, 0); }), ErrorCode::IndivisibleSteps);
  EXPECT_EQ(t.step(), 0);
}

TEST(Aioli, SymmetricStaysNearUniform) {
  const TrainerFactory f(linear(m2(3e-4, 1e-4, 1e-4, 3e-4), v2(5, 5)));
  const auto r = run_aioli(f.final_run(), 5000, {});
  for (const auto& p : r.schedule->all()) EXPECT_NEAR(p[0], 0.5, 0.05);
  EXPECT_EQ(r.schedule->rounds(), 20u);
}

TEST(Aioli, AsymmetricDriftsAndBeatsStratified) {
  const std::int64_t S = 5000;
  const TrainerFactory f(linear(m2(0.002, 0, 0, 0.0005), v2(20, 20)));
  const auto r = run_aioli(f.final_run(), S, {});
  const auto& s = *r.schedule;
  EXPECT_GT(s[s.rounds() - 1][0], 0.5);
  for (std::size_t i = 1; i < s.rounds(); ++i) EXPECT_GE(s[i][0], s[i - 1][0]);
  EXPECT_LT(r.average_test_loss, run_stratified(f, S).average_test_loss);
  EXPECT_EQ(r.extra_steps(), 0);
  EXPECT_EQ(r.final_steps, S);
  expect_result_invariants(r);
}

TEST(Aioli, InitPhaseAndValidation) {
  const TrainerFactory f(linear(m2(0.002, 0, 0, 0.0005), v2(20, 20)));
  AioliParams hp;
  hp.init_steps = 1000;
  hp.init_proportions = MixtureProportions::validate(std::vector<double>{0.9, 0.1});
  const auto r = run_aioli(f.final_run(), 5000, hp);
  EXPECT_EQ(r.final_steps, 5000);
  EXPECT_EQ(r.trace.front().step, 1000);

  AioliParams bad;
  bad.delta = 0.0;
  EXPECT_EQ(code_of([&] { run_aioli(f.final_run(), 5000, bad); }), ErrorCode::InvalidArgument);
  bad = {};
  bad.init_steps = 10;
  EXPECT_EQ(code_of([&] { run_aioli(f.final_run(), 5000, bad); }), ErrorCode::InvalidArgument);
  bad = {};
  bad.gamma = 1.0;
  EXPECT_EQ(code_of([&] { run_aioli(f.final_run(), 5000, bad); }), ErrorCode::GammaOutOfRange);
  bad = {};
  bad.epsilon = 1.5;
  EXPECT_EQ(code_of([&] { run_aioli(f.final_run(), 5000, bad); }), ErrorCode::EpsilonOutOfRange);
}

namespace {

TrainerConfig with_ood(Eigen::RowVector2d row) {
  auto c = linear(Eigen::Matrix2d::Identity() * 1e-4, v2(3, 3));
  c.ood = OodChannel{4.0, 4.0, {{0, row}}};
  return c;
}

}  // namespace

TEST(AioliOod, NoiselessRecovery) {
  const Eigen::RowVector2d a(2e-4, 7e-4);
  auto t = new_trainer(with_ood(a));
  const auto est = learn_params_ood(t, 400, 4, 0.75, 3);
  ASSERT_EQ(est.entries.rows(), 1);
  EXPECT_LT((est.entries - 50.0 * Eigen::MatrixXd(a)).cwiseAbs().maxCoeff(), 1e-9);
  auto plain = new_trainer(linear(Eigen::Matrix2d::Identity() * 1e-4, v2(3, 3)));
  EXPECT_EQ(code_of([&] { learn_params_ood(plain, 400, 4, 0.75, 3); }), ErrorCode::InvalidConfig);
}

TEST(AioliOod, UniformRowStaysUniform) {
  const auto r = run_aioli_ood(new_trainer(with_ood({3e-4, 3e-4})), 5000, {});
  for (const auto& p : r.schedule->all()) EXPECT_NEAR(p[0], 0.5, 1e-12);
}

TEST(AioliOod, DominantGroupGainsEveryRound) {
  const auto r = run_aioli_ood(new_trainer(with_ood({1e-4, 5e-4})), 5000, {});
  const auto& s = *r.schedule;
  EXPECT_GT(s[0][1], 0.5);
  for (std::size_t i = 1; i < s.rounds(); ++i) EXPECT_GT(s[i][1], s[i - 1][1]);
  expect_egd_replay(r);
}

TEST(ExtractParameters, MissingRound) {
  const TrainerFactory f(linear(m2(5e-4, 0, 0, 1e-4), v2(3, 3)));
  const auto r = run_aioli(f.final_run(), 5000, {});
  EXPECT_NO_THROW(extract_parameters(r, 20));
  EXPECT_EQ(code_of([&] { extract_parameters(r, 0); }), ErrorCode::RoundNotTraced);
  EXPECT_EQ(code_of([&] { extract_parameters(r, 21); }), ErrorCode::RoundNotTraced);
  EXPECT_EQ(code_of([&] { extract_parameters(run_stratified(f, 10), 1); }), ErrorCode::RoundNotTraced);
}
