#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lmo/mixing_laws.hpp"
#include "lmo/serialization.hpp"
#include "test_util.hpp"

using namespace lmo;

namespace {

Eigen::MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) A(r, c++) = v;
    ++r;
  }
  return A;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

MixtureProportions mix(std::initializer_list<double> v) { return MixtureProportions::validate(std::vector<double>(v)); }

StaticLawParams reference_law() {
  return {mat({{2.0, 0.5}, {0.3, 1.5}}), vec({3.0, 2.5}), vec({1.0, 1.5})};
}

std::vector<StaticSample> grid_samples(const StaticLawParams& law, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<StaticSample> out;
  for (int s = 1; s <= 9; ++s) {
    const auto p = mix({s / 10.0, 1.0 - s / 10.0});
    Eigen::VectorXd l = eval_static(law, p);
    if (sigma > 0.0)
      for (Eigen::Index i = 0; i < l.size(); ++i) l[i] += noise(rng);
    out.push_back({p, l});
  }
  return out;
}

std::vector<LossTriple> triples_from(const Eigen::MatrixXd& A, const std::vector<MixtureProportions>& ps) {
  std::vector<LossTriple> out;
  Eigen::VectorXd L = Eigen::VectorXd::LinSpaced(A.rows(), 3.0, 4.0);
  for (const auto& p : ps) out.push_back({L, p, L - A * p.vector()});
  return out;
}

}  // namespace

TEST(EvalStatic, Examples) {
  const StaticLawParams zero(Eigen::MatrixXd::Zero(2, 2), vec({1, 1}), vec({1, 1}));
  EXPECT_EQ(eval_static(zero, mix({0.3, 0.7})), vec({2.0, 2.0}));

  const double ln2 = std::log(2.0);
  const StaticLawParams half(mat({{ln2, ln2}, {0, 0}}), vec({1, 1}), vec({0, 0}));
  const auto l = eval_static(half, mix({0.5, 0.5}));
  EXPECT_NEAR(l[0], 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(l[1], 1.0);
}

TEST(StaticLawParams, RejectsNonPositiveB) {
  EXPECT_EQ(code_of([] { StaticLawParams(Eigen::MatrixXd::Zero(2, 2), vec({1, 0}), vec({0, 0})); }),
            ErrorCode::InvalidParams);
  EXPECT_EQ(code_of([] { StaticLawParams(Eigen::MatrixXd::Zero(2, 3), vec({1, 1}), vec({0, 0})); }),
            ErrorCode::DimensionMismatch);
}

TEST(EvalDynamic, Examples) {
  const InteractionMatrix A{mat({{0.1, 0}, {0, 0.2}}), 1};
  const auto l = eval_dynamic(A, vec({2, 3}), mix({1, 0}));
  EXPECT_DOUBLE_EQ(l[0], 1.9);
  EXPECT_DOUBLE_EQ(l[1], 3.0);
  EXPECT_EQ(eval_dynamic({Eigen::MatrixXd::Zero(2, 2), 1}, vec({2, 3}), mix({0.2, 0.8})), vec({2, 3}));
  const auto e = eval_dynamic({Eigen::MatrixXd::Constant(2, 2, 0.2), 1}, vec({1, 1}), mix({0.5, 0.5}));
  EXPECT_NEAR(e[0], 0.8, 1e-15);
  EXPECT_NEAR(e[1], 0.8, 1e-15);
  EXPECT_EQ(code_of([&] { eval_dynamic(A, vec({1, 1, 1}), mix({0.5, 0.5})); }), ErrorCode::DimensionMismatch);
}

TEST(EvalDynamic, AffineInP) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const InteractionMatrix A{Eigen::MatrixXd::Random(3, 3), 1};
    const Eigen::VectorXd L = Eigen::VectorXd::Random(3);
    const auto p = MixtureProportions::validate(sample_dirichlet(3, 1.0, rng));
    const auto q = MixtureProportions::validate(sample_dirichlet(3, 1.0, rng));
    const double a = u(rng);
    Eigen::VectorXd blend = a * p.vector() + (1 - a) * q.vector();
    blend /= blend.sum();
    const Eigen::VectorXd lhs = eval_dynamic(A, L, MixtureProportions::validate(blend));
    const Eigen::VectorXd rhs = a * eval_dynamic(A, L, p) + (1 - a) * eval_dynamic(A, L, q);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Goodness, Definitions) {
  const Eigen::MatrixXd obs = mat({{1, 2, 3}, {4, 5, 6}});
  const auto same = goodness(obs, obs);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_EQ(same.r_squared, 1.0);

  const auto mean = goodness(Eigen::MatrixXd::Constant(2, 3, obs.mean()), obs);
  EXPECT_NEAR(mean.r_squared, 0.0, 1e-15);

  // predicted [1,2,3] vs observed [1,2,4]: ss_res = 1, mean 7/3, ss_tot = 42/9.
  const auto hand = goodness(mat({{1, 2, 3}}), mat({{1, 2, 4}}));
  EXPECT_NEAR(hand.mse, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(hand.r_squared, 33.0 / 42.0, 1e-15);
  EXPECT_EQ(hand.residuals, mat({{0, 0, -1}}));

  EXPECT_EQ(code_of([] { goodness(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(3, 2)); }),
            ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { goodness(Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Zero(2, 1)); }),
            ErrorCode::ShapeMismatch);
}

TEST(Goodness, InvariantToSampleOrder) {
  const Eigen::MatrixXd pred = Eigen::MatrixXd::Random(3, 8);
  const Eigen::MatrixXd obs = pred + 0.1 * Eigen::MatrixXd::Random(3, 8);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(8);
  perm.setIdentity();
  std::mt19937 rng(1);
  std::shuffle(perm.indices().data(), perm.indices().data() + 8, rng);
  const auto a = goodness(pred, obs);
  const auto b = goodness(pred * perm, obs * perm);
  EXPECT_NEAR(a.r_squared, b.r_squared, 1e-14);
  EXPECT_NEAR(a.mse, b.mse, 1e-16);
  EXPECT_LE(a.r_squared, 1.0);
}

TEST(FitStatic, NoiselessRoundTrip) {
  const auto fit = fit_static(grid_samples(reference_law(), 0.0, 0));
  EXPECT_GE(fit.report.r_squared, 0.999);
  EXPECT_LT(fit.report.mse, 1e-8);
  EXPECT_EQ(fit.report.restarts_used, 32);
}

TEST(FitStatic, NoisyRoundTrip) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fit = fit_static(grid_samples(reference_law(), 0.01, seed));
    EXPECT_GE(fit.report.r_squared, 0.95) << "seed " << seed;
    EXPECT_GE(fit.report.mse, 0.0);
  }
}

TEST(FitStatic, InsufficientSamples) {
  auto s = grid_samples(reference_law(), 0.0, 0);
  s.erase(s.begin() + 2, s.end());
  EXPECT_EQ(code_of([&] { fit_static(s); }), ErrorCode::InsufficientSamples);
}

TEST(FitDynamic, ExactRecoveryM2) {
  const Eigen::MatrixXd A = mat({{0.12, -0.03}, {0.05, 0.09}});
  const auto fit = fit_dynamic(triples_from(A, {mix({0.9, 0.1}), mix({0.1, 0.9})}), 100);
  EXPECT_LT((fit.A.entries - A).cwiseAbs().maxCoeff() / A.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(fit.A.horizon_steps, 100);
  EXPECT_LT(fit.report.mse, 1e-24);
}

TEST(FitDynamic, ExactRecoveryM3) {
  const Eigen::MatrixXd A = mat({{0.3, 0.1, 0.0}, {0.05, 0.2, -0.02}, {0.0, 0.04, 0.25}});
  const auto fit =
      fit_dynamic(triples_from(A, {mix({0.8, 0.1, 0.1}), mix({0.1, 0.8, 0.1}), mix({0.2, 0.2, 0.6})}));
  EXPECT_LT((fit.A.entries - A).cwiseAbs().maxCoeff(), 1e-9 * A.cwiseAbs().maxCoeff());
}

TEST(FitDynamic, SingularDesign) {
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_EQ(code_of([&] { fit_dynamic(triples_from(A, {mix({0.3, 0.7}), mix({0.3, 0.7}), mix({0.3, 0.7})})); }),
            ErrorCode::SingularDesign);
}

TEST(FitScalarB, ClosedFormRatio) {
  const Eigen::MatrixXd A = mat({{0.12, -0.03}, {0.05, 0.09}});
  const auto triples = triples_from(A, {mix({0.9, 0.1}), mix({0.1, 0.9}), mix({0.5, 0.5})});
  EXPECT_NEAR(fit_scalar_b({2.0 * A, 0}, triples), 0.5, 1e-9);
  EXPECT_NEAR(fit_scalar_b({A, 0}, triples), 1.0, 1e-9);
  for (double kappa : {-3.0, -0.25, 0.1, 7.0}) EXPECT_NEAR(fit_scalar_b({kappa * A, 0}, triples), 1.0 / kappa, 1e-9);
  EXPECT_EQ(code_of([&] { fit_scalar_b({Eigen::MatrixXd::Zero(2, 2), 0}, triples); }), ErrorCode::DegenerateScale);
}

TEST(Serialization, LawRoundTripAndResiduals) {
  const auto law = reference_law();
  const auto back = static_law_from_json(json::parse(to_json(law).dump()));
  EXPECT_EQ(back.A(), law.A());
  EXPECT_EQ(back.b(), law.b());
  EXPECT_EQ(back.c(), law.c());

  const InteractionMatrix A{mat({{0.1, 0.2}, {0.3, 0.4}}), 50};
  const auto j = to_json(A);
  EXPECT_EQ(j["A"][0][1].get<double>(), 0.2);  // row-major
  const auto A2 = interaction_from_json(j);
  EXPECT_EQ(A2.entries, A.entries);
  EXPECT_EQ(A2.horizon_steps, 50);

  std::ostringstream os;
  write_residuals_csv(os, goodness(mat({{1, 2}}), mat({{1, 3}})));
  EXPECT_EQ(os.str(), "sample,group,residual\n0,0,0\n1,0,-1\n");
}
