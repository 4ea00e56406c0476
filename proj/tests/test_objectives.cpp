#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "dualavg/instance_io.hpp"
#include "dualavg/objectives.hpp"

using namespace dualavg;

namespace {

double dense_top_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  return es.eigenvalues().maxCoeff();
}

std::vector<ObjectiveSplit> families() {
  return {pca_instance(4, 6, 12, 1), pca_instance(3, 10, 50, 2), quadratic_instance(4, 8, 3, true),
          quadratic_instance(4, 8, 4, false)};
}

}  // namespace

TEST(Pca, UnitRowClosedForm) {
  Matrix m = Matrix::Zero(1, 4);
  m(0, 0) = 1.0;
  const auto f = LocalObjective::pca(m);
  Vector x(4);
  x << 0.3, -1.0, 2.0, 0.5;
  Vector expect = Vector::Zero(4);
  expect[0] = -2.0 * 0.3;
  EXPECT_TRUE(f.gradient(x).isApprox(expect));
  EXPECT_NEAR(f.lipschitz(), 2.0, 1e-12);
  EXPECT_NEAR(f.value(x), -0.09, 1e-15);
}

TEST(Pca, RowNormsAndShape) {
  const auto split = pca_instance(5, 7, 20, 9);
  ASSERT_EQ(split.size(), 5u);
  EXPECT_EQ(split.dimension(), 20);
  for (const auto& f : split.locals()) {
    const auto& m = std::get<PcaForm>(f.form()).m;
    EXPECT_EQ(m.rows(), 7);
    for (Eigen::Index r = 0; r < m.rows(); ++r) EXPECT_LE(m.row(r).norm(), 1.0 + 1e-15);
  }
}

TEST(Pca, PaperScaleShape) {
  const auto split = pca_instance(50, 30, 500, 1);
  EXPECT_EQ(split.size(), 50u);
  EXPECT_EQ(split.dimension(), 500);
  EXPECT_EQ(std::get<PcaForm>(split.local(49).form()).m.rows(), 30);
}

TEST(Pca, NonpositiveAndZeroAtOrigin) {
  const auto split = pca_instance(4, 5, 10, 3);
  EXPECT_EQ(split.value(Vector::Zero(10)), 0.0);
  Rng rng = make_rng(4);
  for (int k = 0; k < 100; ++k) EXPECT_LE(split.value(standard_normal(10, rng)), 0.0);
}

TEST(Pca, Deterministic) {
  const auto a = pca_instance(3, 4, 6, 77), b = pca_instance(3, 4, 6, 77), c = pca_instance(3, 4, 6, 78);
  EXPECT_EQ(std::get<PcaForm>(a.local(2).form()).m, std::get<PcaForm>(b.local(2).form()).m);
  EXPECT_NE(std::get<PcaForm>(a.local(2).form()).m, std::get<PcaForm>(c.local(2).form()).m);
}

TEST(Split, AveragesValueAndGradient) {
  const auto split = quadratic_instance(3, 5, 8, true);
  Rng rng = make_rng(5);
  const Vector x = standard_normal(5, rng);
  double v = 0;
  Vector g = Vector::Zero(5);
  for (const auto& f : split.locals()) {
    v += f.value(x);
    g += f.gradient(x);
  }
  EXPECT_NEAR(split.value(x), v / 3.0, 1e-14);
  EXPECT_TRUE(split.gradient(x).isApprox(g / 3.0, 1e-14));
  double lmax = 0;
  for (const auto& f : split.locals()) lmax = std::max(lmax, f.lipschitz());
  EXPECT_EQ(split.lipschitz(), lmax);
}

TEST(Quadratic, IdentityMinimizer) {
  const auto f = LocalObjective::quadratic(Matrix::Identity(3, 3), Vector::Zero(3));
  const ObjectiveSplit split({f});
  const auto set = FeasibleSet::ball(3, 1.0);
  Vector start(3);
  start << 0.5, -0.5, 0.5;
  const auto oracle = projected_gradient_oracle(split, set, start);
  EXPECT_TRUE(oracle.converged);
  EXPECT_LE(oracle.x.norm(), 1e-9);
  EXPECT_NEAR(oracle.value, 0.0, 1e-18);
}

TEST(Quadratic, ConvexFlagGivesPsd) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto convex = quadratic_instance(3, 6, seed, true), nonconvex = quadratic_instance(3, 6, seed, false);
    for (const auto& f : convex.locals()) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(std::get<QuadraticForm>(f.form()).a);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
    for (const auto& f : nonconvex.locals()) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(std::get<QuadraticForm>(f.form()).a);
      EXPECT_LT(es.eigenvalues().minCoeff(), -0.19);
    }
  }
}

TEST(Quadratic, OracleSatisfiesFixedPoint) {
  const auto split = quadratic_instance(4, 8, 12, true);
  const auto set = FeasibleSet::ball(8, 1.0);
  const auto oracle = projected_gradient_oracle(split, set, Vector::Zero(8));
  ASSERT_TRUE(oracle.converged);
  // first-order optimality via the projection fixed point at an unrelated step
  const Vector again = project(set, oracle.x - 0.1 * split.gradient(oracle.x));
  EXPECT_LE((again - oracle.x).norm(), 1e-8);
  Rng rng = make_rng(13);
  for (int k = 0; k < 200; ++k) EXPECT_GE(split.value(sample_point(set, rng)), oracle.value - 1e-12);
}

TEST(Lipschitz, DiagonalQuadratic) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 3.0;
  a(1, 1) = 1.0;
  const auto f = LocalObjective::quadratic(a, Vector::Zero(2));
  const auto est = lipschitz_estimate(f, FeasibleSet::ball(2, 1.0));
  EXPECT_NEAR(est.value, 3.0, 1e-9);
  EXPECT_TRUE(est.exact);
  EXPECT_TRUE(est.converged);
}

TEST(Lipschitz, PcaMatchesDenseEigensolver) {
  const auto split = pca_instance(6, 10, 50, 21);
  for (const auto& f : split.locals()) {
    const auto& m = std::get<PcaForm>(f.form()).m;
    const double dense = 2.0 * dense_top_eigenvalue(m.transpose() * m);
    EXPECT_NEAR(f.lipschitz(), dense, 1e-8);
  }
}

TEST(Lipschitz, QuadraticMatchesDenseEigensolver) {
  const auto split = quadratic_instance(4, 9, 30, false);
  for (const auto& f : split.locals()) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(std::get<QuadraticForm>(f.form()).a);
    EXPECT_NEAR(f.lipschitz(), es.eigenvalues().cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Lipschitz, BlackBoxSampledWithSafety) {
  // g(x) = sin(x_0) e_0: Lipschitz constant 1, sampled estimate below 1.1
  const auto f = LocalObjective::black_box(
      2, [](const Vector& x) { return -std::cos(x[0]); },
      [](const Vector& x) {
        Vector g = Vector::Zero(2);
        g[0] = std::sin(x[0]);
        return g;
      },
      1.0);
  const auto est = lipschitz_estimate(f, FeasibleSet::ball(2, 1.0), 3);
  EXPECT_FALSE(est.exact);
  EXPECT_LE(est.value, 1.1 + 1e-12);
  EXPECT_GT(est.value, 0.9);
}

TEST(Objectives, GradientMatchesFiniteDifferences) {
  Rng rng = make_rng(31);
  for (const auto& split : families()) {
    const auto set = FeasibleSet::ball(split.dimension(), 1.0);
    for (int k = 0; k < 100; ++k) {
      const Vector x = sample_point(set, rng);
      for (const auto& f : split.locals()) EXPECT_LE(gradient_check(f, x), 1e-6);
      EXPECT_LE(gradient_check(split, x), 1e-6);
    }
  }
}

TEST(Objectives, GradientLipschitzOnSamples) {
  Rng rng = make_rng(32);
  for (const auto& split : families()) {
    const auto set = FeasibleSet::ball(split.dimension(), 1.0);
    for (int k = 0; k < 200; ++k) {
      const Vector x = sample_point(set, rng), y = sample_point(set, rng);
      for (const auto& f : split.locals())
        EXPECT_LE((f.gradient(x) - f.gradient(y)).norm(), f.lipschitz() * (x - y).norm() * (1 + 1e-9) + 1e-14);
    }
  }
}

TEST(Objectives, DescentInequality) {
  Rng rng = make_rng(33);
  for (const auto& split : families()) {
    const auto set = FeasibleSet::ball(split.dimension(), 1.0);
    for (int k = 0; k < 1000; ++k) {
      const Vector x = sample_point(set, rng), y = sample_point(set, rng);
      for (const auto& f : split.locals()) {
        const double rhs = f.value(x) + f.gradient(x).dot(y - x) + 0.5 * f.lipschitz() * (y - x).squaredNorm();
        EXPECT_LE(f.value(y), rhs + 1e-12);
      }
    }
  }
}

TEST(Objectives, LowerBoundIsSound) {
  Rng rng = make_rng(34);
  for (const auto& split : families()) {
    const auto set = FeasibleSet::ball(split.dimension(), 1.0);
    const double lb = objective_lower_bound(split, set);
    for (int k = 0; k < 500; ++k) EXPECT_GE(split.value(sample_point(set, rng)), lb);
  }
  // one PCA agent: its top unit eigenvector attains the bound
  const auto pca = pca_instance(1, 4, 6, 5);
  const auto set = FeasibleSet::ball(6, 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(std::get<PcaForm>(pca.local(0).form()).m.transpose() *
                                           std::get<PcaForm>(pca.local(0).form()).m);
  const Vector top = es.eigenvectors().col(5);
  EXPECT_NEAR(pca.value(top), objective_lower_bound(pca, set), 1e-10);
}

TEST(InstanceIo, RoundTripWithEntries) {
  for (const auto& split : {pca_instance(2, 3, 4, 5), quadratic_instance(2, 3, 6, false)}) {
    const auto j = instance_to_json(split, true);
    const auto back = instance_from_json(nlohmann::json::parse(j.dump()));
    ASSERT_EQ(back.size(), split.size());
    Rng rng = make_rng(1);
    const Vector x = standard_normal(split.dimension(), rng);
    EXPECT_DOUBLE_EQ(back.value(x), split.value(x));
    EXPECT_EQ(back.spec(), split.spec());
  }
}

TEST(InstanceIo, RegeneratesFromSeed) {
  const auto split = pca_instance(3, 4, 5, 42);
  const auto back = instance_from_json(instance_to_json(split, false));
  EXPECT_EQ(std::get<PcaForm>(back.local(1).form()).m, std::get<PcaForm>(split.local(1).form()).m);
  EXPECT_EQ(instance_to_json(split, false).at("row_rule"), kPcaRowRule);
}

TEST(InstanceIo, RejectsBadInput) {
  EXPECT_THROW(instance_from_json(nlohmann::json::parse(R"({"family":"pca","n":1,"rows":1,"dim":2,"seed":1,"bogus":0})")),
               ConfigError);
  EXPECT_THROW(instance_from_json(nlohmann::json::parse(R"({"family":"cubic","n":1,"dim":2,"seed":1})")), ConfigError);
  EXPECT_THROW(instance_from_json(nlohmann::json::parse(
                   R"({"family":"pca","n":1,"rows":1,"dim":2,"seed":1,"entries":[{"M":[[1,2,3]]}]})")),
               ConfigError);
  EXPECT_THROW(instance_from_json(nlohmann::json::parse(R"({"family":"pca","n":1,"dim":2,"seed":1})")), ConfigError);
}
