#include <gtest/gtest.h>

#include "dualavg/dda.hpp"

using namespace dualavg;

namespace {

LocalObjective scalar_quadratic(double q, double b) {
  return LocalObjective::quadratic(Matrix::Constant(1, 1, q), Vector::Constant(1, b));
}

struct DeskSetup {
  ObjectiveSplit obj;
  FeasibleSet set;
  ProximalSetup prox;
};

DeskSetup small_pca(int n, std::uint64_t seed, double a_scale = 1.0) {
  auto obj = pca_instance(n, 5, 8, seed);
  auto set = FeasibleSet::ball(8, 1.0);
  Vector x0 = random_initial_point(set, seed);
  const double a = a_scale / obj.lipschitz();
  return {std::move(obj), set, ProximalSetup(x0, a)};
}

}  // namespace

TEST(DdaInit, SingleAgent) {
  const auto d = small_pca(1, 3);
  const auto s = dda_init(d.obj, d.prox, d.set);
  EXPECT_EQ(s.agents(), 1);
  EXPECT_EQ(s.s.col(0), d.obj.local(0).gradient(d.prox.center()));
  EXPECT_EQ(s.z.col(0), Vector::Zero(8));
  EXPECT_EQ(s.y, d.prox.center());
  EXPECT_FALSE(s.projected_start);
}

TEST(DdaInit, TrackerMatchesGradientMean) {
  const auto d = small_pca(6, 4);
  const auto s = dda_init(d.obj, d.prox, d.set);
  EXPECT_LE((s.s_bar() - s.g_bar()).norm(), 1e-15);
  EXPECT_LE(s.metrics.consensus_err_sq, 1e-28);  // mean of identical columns, up to rounding
  EXPECT_LE(s.metrics.deviation_sq, 1e-28);
  const auto a = s.agent(2);
  EXPECT_EQ(a.x, d.prox.center());
  EXPECT_EQ(a.g_prev, d.obj.local(2).gradient(a.x));
}

TEST(DdaInit, RejectsWholeSpace) {
  const auto d = small_pca(2, 1);
  EXPECT_THROW(dda_init(d.obj, d.prox, FeasibleSet::whole_space(8)), std::invalid_argument);
}

TEST(DdaInit, ProjectsInfeasibleCenter) {
  const auto d = small_pca(2, 1);
  const ProximalSetup outside(Vector::Constant(8, 3.0), d.prox.a());
  const auto s = dda_init(d.obj, outside, d.set);
  EXPECT_TRUE(s.projected_start);
  EXPECT_TRUE(contains(d.set, s.x.col(0)));
}

TEST(PiSquared, DirectEvaluation) {
  const ObjectiveSplit obj({scalar_quadratic(1.0, 0.0), scalar_quadratic(3.0, -1.0)});
  // gradients at 1: 1 and 2, mean 1.5
  EXPECT_DOUBLE_EQ(pi_squared(obj, Vector::Ones(1)), 0.5);
  const auto d = small_pca(5, 2);
  const Vector x0 = d.prox.center();
  Vector mean = Vector::Zero(8);
  for (std::size_t i = 0; i < 5; ++i) mean += d.obj.local(i).gradient(x0) / 5.0;
  double want = 0;
  for (std::size_t i = 0; i < 5; ++i) want += (d.obj.local(i).gradient(x0) - mean).squaredNorm();
  EXPECT_NEAR(pi_squared(d.obj, x0), want, 1e-14);
}

TEST(DdaRound, TwoAgentHandComputation) {
  // f1 = x^2/2, f2 = 3x^2/2 - x, x0 = 0.5, a = 0.1, P = 11^T/2:
  // g(x0) = (0.5, 0.5); z^1 = 0.5; x^1 = 0.5 - 0.1 * 0.5 = 0.45
  // s1^1 = 0.5 + (0.45 - 0.5) = 0.45; s2^1 = 0.5 + (0.35 - 0.5) = 0.35
  const ObjectiveSplit obj({scalar_quadratic(1.0, 0.0), scalar_quadratic(3.0, -1.0)});
  const auto set = FeasibleSet::ball(1, 10.0);
  const ProximalSetup prox(Vector::Constant(1, 0.5), 0.1);
  const auto s0 = dda_init(obj, prox, set);
  const auto s1 = dda_round(s0, Matrix::Constant(2, 2, 0.5), obj, prox, set);
  EXPECT_EQ(s1.t, 1);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(s1.z(0, i), 0.5, 1e-12);
    EXPECT_NEAR(s1.x(0, i), 0.45, 1e-12);
  }
  EXPECT_NEAR(s1.s(0, 0), 0.45, 1e-12);
  EXPECT_NEAR(s1.s(0, 1), 0.35, 1e-12);
  EXPECT_NEAR(s1.y[0], 0.45, 1e-12);
}

TEST(DdaRound, IdentityMixingIsLocalStep) {
  const auto d = small_pca(4, 5);
  auto s = dda_init(d.obj, d.prox, d.set);
  s = dda_round(s, Matrix::Constant(4, 4, 0.25), d.obj, d.prox, d.set);  // spread the agents a little
  const auto next = dda_round(s, Matrix::Identity(4, 4), d.obj, d.prox, d.set);
  EXPECT_EQ(next.z, s.z + s.s);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(next.x.col(i), mirror_map(d.prox, d.set, -next.z.col(i)));
}

TEST(DdaRound, RejectsBadMatrix) {
  const auto d = small_pca(2, 5);
  const auto s = dda_init(d.obj, d.prox, d.set);
  Matrix row_only(2, 2);
  row_only << 1.0, 0.0, 0.5, 0.5;
  EXPECT_THROW(dda_round(s, row_only, d.obj, d.prox, d.set), std::invalid_argument);
  EXPECT_THROW(dda_round(s, Matrix::Identity(3, 3), d.obj, d.prox, d.set), DimensionError);
}

TEST(DdaRound, SnapshotSemanticsIndependentOfAgentOrder) {
  // permuting agents (and the mixing matrix) permutes the next state
  const auto d = small_pca(3, 8);
  const ObjectiveSplit swapped({d.obj.local(2), d.obj.local(0), d.obj.local(1)});
  Matrix p(3, 3);
  p << 0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5;
  Eigen::PermutationMatrix<Eigen::Dynamic> pi(3);
  pi.indices() << 1, 2, 0;  // agent k of the original is agent pi(k) of the swapped run
  auto a = dda_init(d.obj, d.prox, d.set);
  auto b = dda_init(swapped, d.prox, d.set);
  const Matrix q = pi * p * pi.transpose();
  for (int t = 0; t < 20; ++t) {
    a = dda_round(a, p, d.obj, d.prox, d.set);
    b = dda_round(b, q, swapped, d.prox, d.set);
  }
  EXPECT_LE((a.x * pi.transpose() - b.x).norm(), 1e-12);
  EXPECT_LE((a.y - b.y).norm(), 1e-12);
}

TEST(RunDda, PerfectAveragingMatchesCda) {
  const auto d = small_pca(5, 9);
  DdaOptions o;
  o.rounds = 200;
  const auto tr = run_dda(d.obj, d.prox, d.set, MixingModel::perfect(5), o);
  auto c = cda_init(d.obj, d.prox, d.set);
  double worst = (tr.records.size() == 201u) ? 0.0 : 1.0;
  auto s = dda_init(d.obj, d.prox, d.set);
  Rng rng = make_rng(0);
  for (int t = 0; t <= 200; ++t) {
    worst = std::max(worst, (s.y - c.x).norm());
    for (int i = 0; i < 5; ++i) worst = std::max(worst, (s.x.col(i) - c.x).norm());
    if (t < 200) {
      s = dda_round(s, sample_matrix(MixingModel::perfect(5), rng), d.obj, d.prox, d.set);
      c = cda_step(c, d.obj, d.prox, d.set);
    }
  }
  EXPECT_LE(worst, 1e-9);
  for (const auto& r : tr.records) EXPECT_LE(r.m.consensus_err_sq, 1e-20);
  EXPECT_EQ(tr.beta, 0.0);
}

TEST(RunDda, SingleAgentMatchesCda) {
  const auto d = small_pca(1, 10);
  auto s = dda_init(d.obj, d.prox, d.set);
  auto c = cda_init(d.obj, d.prox, d.set);
  for (int t = 0; t < 300; ++t) {
    s = dda_round(s, Matrix::Ones(1, 1), d.obj, d.prox, d.set);
    c = cda_step(c, d.obj, d.prox, d.set);
    ASSERT_LE((s.x.col(0) - c.x).norm(), 1e-12) << t;
    ASSERT_LE((s.y - c.x).norm(), 1e-12) << t;
  }
}

TEST(RunDda, MonitorsHoldOnRandomNetworks) {
  const auto d = small_pca(6, 11);
  for (const auto& model : {MixingModel::bernoulli(Supergraph::complete(6), 0.3),
                            MixingModel::gossip(Supergraph::complete(6))}) {
    Rng rng = make_rng(1);
    const double beta = beta_estimate(model, 20'000, rng).beta;
    const auto cert = certify_stepsize_dda(d.obj.lipschitz(), beta);
    ASSERT_TRUE(cert.feasible);
    const ProximalSetup prox(d.prox.center(), cert.a_max);
    DdaOptions o;
    o.rounds = 500;
    o.beta = beta;
    o.network_seed = 4;
    o.f_lower = objective_lower_bound(d.obj, d.set);
    const auto tr = run_dda(d.obj, prox, d.set, model, o);
    EXPECT_TRUE(tr.stepsize_certified);
    EXPECT_TRUE(std::isfinite(tr.C));
    EXPECT_EQ(tr.monitors.size(), 6u);
    for (const auto& m : tr.monitors) EXPECT_TRUE(m.ok()) << model.name() << " " << m.name << " " << m.worst_excess;
    for (std::size_t k = 1; k < tr.records.size(); ++k) {
      EXPECT_LE(tr.records[k].min_residual, tr.records[k - 1].min_residual);
      EXPECT_NEAR(tr.records[k].m.residual,
                  6 * tr.records[k].m.grad_map_sq + tr.records[k].m.deviation_sq, 1e-12);
      EXPECT_GE(tr.records[k].m.change_plus_consensus, 0.0);
    }
  }
}

TEST(RunDda, Deterministic) {
  const auto d = small_pca(5, 12);
  const auto model = MixingModel::bernoulli(Supergraph::complete(5), 0.2);
  DdaOptions o;
  o.rounds = 150;
  o.network_seed = 99;
  const auto t1 = run_dda(d.obj, d.prox, d.set, model, o).table();
  const auto t2 = run_dda(d.obj, d.prox, d.set, model, o).table();
  std::ostringstream a, b;
  write_csv(a, t1);
  write_csv(b, t2);
  EXPECT_EQ(a.str(), b.str());
  o.network_seed = 100;
  std::ostringstream c;
  write_csv(c, run_dda(d.obj, d.prox, d.set, model, o).table());
  EXPECT_NE(a.str(), c.str());
}

TEST(RunDda, TableLayout) {
  const auto d = small_pca(3, 13);
  DdaOptions o;
  o.rounds = 5;
  const auto tab = run_dda(d.obj, d.prox, d.set, MixingModel::perfect(3), o).table();
  EXPECT_EQ(tab.columns, DdaTrace::columns());
  EXPECT_EQ(tab.rows.size(), 6u);
  EXPECT_TRUE(std::isnan(tab.rows[0][tab.column_index("C_over_t")]));  // no f_lower given
}

TEST(RunDda, StationaryStartTriggersProxy) {
  auto obj = pca_instance(4, 5, 8, 1);
  const auto set = FeasibleSet::ball(8, 1.0);
  const ProximalSetup prox(Vector::Zero(8), 0.01);
  DdaOptions o;
  o.rounds = 30;
  const auto tr = run_dda(obj, prox, set, MixingModel::bernoulli(Supergraph::complete(4), 0.5), o);
  ASSERT_TRUE(tr.stationary_at.has_value());
  EXPECT_EQ(*tr.stationary_at, kStationaryWindow - 1);
  EXPECT_EQ(tr.stationary_spread, 0.0);
  EXPECT_TRUE(find_monitor(tr.monitors, "consensual_stationarity")->ok());
  EXPECT_EQ(find_monitor(tr.monitors, "consensual_stationarity")->checks, 1);
}

TEST(RunDda, NonFiniteAbortsKeepingGoodRounds) {
  // gradient turns NaN once the iterate leaves a small neighborhood of its start
  auto bad = LocalObjective::black_box(
      1, [](const Vector& x) { return -x[0]; },
      [](const Vector& x) {
        return Vector::Constant(1, x[0] > 0.3 ? std::numeric_limits<double>::quiet_NaN() : -1.0);
      },
      1.0);
  const ObjectiveSplit obj({bad, bad});
  const auto set = FeasibleSet::ball(1, 1.0);
  const ProximalSetup prox(Vector::Zero(1), 0.1);
  DdaOptions o;
  o.rounds = 50;
  o.beta = 0.0;
  const auto tr = run_dda(obj, prox, set, MixingModel::perfect(2), o);
  EXPECT_TRUE(tr.aborted);
  EXPECT_FALSE(tr.abort_reason.empty());
  EXPECT_LT(tr.records.size(), 51u);
  EXPECT_GT(tr.records.size(), 1u);
  for (const auto& r : tr.records) EXPECT_TRUE(std::isfinite(r.m.cost));
}

TEST(RateConstant, ZeroWhenOptimalAndConsensual) {
  EXPECT_EQ(theorem2_C(2.0, 0.5, 0.01, 0.0, -1.0, -1.0, 10), 0.0);
}

TEST(RateConstant, InfeasibleStepThrows) {
  EXPECT_THROW(theorem2_C(2.0, 0.5, 0.9, 1.0, 0.0, -1.0, 4), InfeasibleError);
  EXPECT_THROW(theorem2_C(2.0, 0.999, 0.5, 1.0, 0.0, -1.0, 4), InfeasibleError);
}

TEST(RateConstant, DirectFormula) {
  const double L = 3.0, beta = 0.4, a = 0.01, pi2 = 2.5, fy0 = -0.2, flo = -1.5;
  const int n = 7;
  const double rho = rho_M(a, L, beta);
  const double m = std::min(3 * L * (1 - rho) / 8, a - a * a * L / 2 - 4 * a * a * L / (3 * (1 - rho)));
  const double want = (2 * pi2 / (3 * L * (1 - rho)) + n * (fy0 - flo)) / m;
  EXPECT_NEAR(theorem2_C(L, beta, a, pi2, fy0, flo, n), want, 1e-12 * want);
}

TEST(RateConstant, NonDecreasingInBeta) {
  const double L = 2.0;
  const double a = certify_stepsize_dda(L, 0.9).a_max;  // admissible across the whole grid
  double prev = 0.0;
  for (double beta = 0.0; beta <= 0.9; beta += 0.05) {
    const double c = theorem2_C(L, beta, a, 1.3, 0.0, -2.0, 5);
    EXPECT_GE(c, prev * (1 - 1e-12));
    prev = c;
  }
}

TEST(Dpga, ZeroStepIsPureConsensus) {
  const auto d = small_pca(5, 14);
  Rng rng = make_rng(2);
  Matrix start(8, 5);
  for (int i = 0; i < 5; ++i) start.col(i) = sample_point(d.set, rng);
  const Vector avg = start.rowwise().mean();
  DpgaOptions o;
  o.rounds = 400;
  o.eta = 0.0;
  o.initial = start;
  const auto tr = dpga_baseline(d.obj, d.set, d.prox.center(), MixingModel::bernoulli(Supergraph::complete(5), 0.4), o);
  EXPECT_NEAR(tr.records.back().cost, d.obj.value(avg), 1e-10);
  EXPECT_LE(tr.records.back().consensus_err_sq, 1e-20);
  for (int i = 0; i < 5; ++i) EXPECT_LE((tr.final_x.col(i) - avg).norm(), 1e-9);
  EXPECT_FALSE(tr.diverged);
}

TEST(Dpga, PerfectAveragingApproachesOptimum) {
  const auto obj = quadratic_instance(4, 6, 15, true);
  const auto set = FeasibleSet::ball(6, 1.0);
  const Vector x0 = random_initial_point(set, 3);
  const auto oracle = projected_gradient_oracle(obj, set, x0);
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double eta : {1e-1, 1e-2}) {
    DpgaOptions o;
    o.rounds = 20'000;
    o.eta = eta;
    const auto tr = dpga_baseline(obj, set, x0, MixingModel::perfect(4), o);
    const double gap = (tr.final_x.rowwise().mean() - oracle.x).norm();
    EXPECT_LT(gap, prev_gap);  // the bias shrinks with the step
    prev_gap = gap;
  }
  EXPECT_LE(prev_gap, 1e-2);
}

TEST(Dpga, DivergenceFlaggedTraceKept) {
  // wrong-signed gradient drives the cost up to the boundary
  auto uphill = LocalObjective::black_box(
      2, [](const Vector& x) { return 50.0 * x.squaredNorm(); }, [](const Vector& x) { return Vector(-100.0 * x); },
      100.0);
  const ObjectiveSplit obj({uphill, uphill});
  const auto set = FeasibleSet::ball(2, 1.0);
  DpgaOptions o;
  o.rounds = 100;
  o.eta = 0.05;
  const auto tr = dpga_baseline(obj, set, Vector::Constant(2, 0.01), MixingModel::perfect(2), o);
  EXPECT_TRUE(tr.diverged);
  EXPECT_EQ(tr.records.size(), 101u);
}

TEST(Dpga, RejectsNegativeStep) {
  const auto d = small_pca(2, 1);
  DpgaOptions o;
  o.eta = -1.0;
  EXPECT_THROW(dpga_baseline(d.obj, d.set, d.prox.center(), MixingModel::perfect(2), o), std::invalid_argument);
}
