#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "sl4slam/factor_graph.hpp"
#include "test_utils.hpp"

using namespace sl4slam;
using sl4slam::testing::random_sim3;
using sl4slam::testing::random_tangent;
using sl4slam::testing::random_tangent_with_norm;

namespace {

template <class G>
typename LieGroupTraits<G>::Tangent random_vec(std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  typename LieGroupTraits<G>::Tangent v;
  for (int k = 0; k < LieGroupTraits<G>::kDof; ++k) v(k) = u(rng);
  return v;
}

// Central differences of the residual under right perturbation of one endpoint.
template <class G>
typename LieGroupTraits<G>::Jacobian numeric_jacobian(const BetweenFactor<G>& f,
                                                      const GraphValues<G>& v, VariableId which) {
  using T = LieGroupTraits<G>;
  const double eps = 1e-6;
  typename T::Jacobian j;
  for (int k = 0; k < T::kDof; ++k) {
    const typename T::Tangent d = T::Tangent::Unit(k) * eps;
    GraphValues<G> plus = v, minus = v;
    plus[which] = T::compose(v.at(which), T::exp(d));
    minus[which] = T::compose(v.at(which), T::exp(-d));
    j.col(k) = (residual(f, plus) - residual(f, minus)) / (2 * eps);
  }
  return j;
}

template <class G>
double max_jacobian_error(std::mt19937_64& rng, int trials) {
  using T = LieGroupTraits<G>;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    GraphValues<G> v;
    v[0] = T::exp(random_vec<G>(rng, 0.3));
    v[1] = T::exp(random_vec<G>(rng, 0.3));
    const G measured =
        T::compose(T::compose(T::inverse(v[0]), v[1]), T::exp(random_vec<G>(rng, 0.2)));
    const BetweenFactor<G> f{0, 1, measured};
    const auto lin = linearize(f, v);
    worst = std::max(worst, (numeric_jacobian(f, v, 0) - lin.j_i).cwiseAbs().maxCoeff());
    worst = std::max(worst, (numeric_jacobian(f, v, 1) - lin.j_j).cwiseAbs().maxCoeff());
  }
  return worst;
}

// Consistent chain: truth[0] = I, truth[k] = truth[k-1] * M_k.
std::vector<Homography> make_chain(std::mt19937_64& rng, int n, double step,
                                   FactorGraph<Homography>& graph) {
  std::vector<Homography> truth{Homography()};
  for (int k = 1; k < n; ++k) {
    const Homography m = exp_sl4(random_tangent_with_norm(rng, step));
    truth.push_back(truth.back() * m);
    graph.add_between(k - 1, k, m);
  }
  graph.add_prior(0, Homography());
  return truth;
}

GraphValues<Homography> identity_values(int n) {
  GraphValues<Homography> v;
  for (int k = 0; k < n; ++k) v[k] = Homography();
  return v;
}

}  // namespace

TEST(Residual, TrivialCases) {
  std::mt19937_64 rng(1);
  GraphValues<Homography> v{{0, Homography()}, {1, Homography()}};
  EXPECT_LT(residual(BetweenFactor<Homography>{0, 1, Homography()}, v).norm(), 1e-15);
  const Homography h = exp_sl4(random_tangent(rng, 0.3));
  v[1] = h;
  EXPECT_LT(residual(BetweenFactor<Homography>{0, 1, h}, v).norm(), 1e-12);
}

TEST(Residual, FirstOrderTransportOfPerturbation) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const Homography hi = exp_sl4(random_tangent(rng, 0.3));
    const Homography hj = exp_sl4(random_tangent(rng, 0.3));
    const Homography m = hi.inverse() * hj;
    const SL4Tangent delta = random_tangent_with_norm(rng, 1e-5);
    GraphValues<Homography> v{{0, hi}, {1, hj * exp_sl4(delta)}};
    const SL4Tangent e = residual(BetweenFactor<Homography>{0, 1, m}, v);
    EXPECT_LT((e - adjoint(m) * delta).norm(), 1e-8);
  }
}

TEST(Linearize, IdentityConfiguration) {
  GraphValues<Homography> v{{0, Homography()}, {1, Homography()}};
  const auto lin = linearize(BetweenFactor<Homography>{0, 1, Homography()}, v);
  EXPECT_LT((lin.j_i + SL4Adjoint::Identity()).norm(), 1e-14);
  EXPECT_LT((lin.j_j - SL4Adjoint::Identity()).norm(), 1e-14);
}

TEST(Linearize, ConsistentConfigurationClosedForm) {
  // At e = 0 the exact Jacobians are -I and Ad(H_i^-1 H_j); the second is the
  // identity only when H_i^-1 H_j is.
  std::mt19937_64 rng(3);
  const Homography hi = exp_sl4(random_tangent(rng, 0.3));
  const Homography hj = exp_sl4(random_tangent(rng, 0.3));
  GraphValues<Homography> v{{0, hi}, {1, hj}};
  const auto lin = linearize(BetweenFactor<Homography>{0, 1, hi.inverse() * hj}, v);
  EXPECT_LT((lin.j_i + SL4Adjoint::Identity()).norm(), 1e-9);
  EXPECT_LT((lin.j_j - adjoint(hi.inverse() * hj)).norm(), 1e-9);
}

TEST(Linearize, MatchesCentralDifferencesSL4) {
  std::mt19937_64 rng(4);
  EXPECT_LT(max_jacobian_error<Homography>(rng, 100), 1e-5);
}

TEST(Linearize, MatchesCentralDifferencesSim3) {
  std::mt19937_64 rng(5);
  EXPECT_LT(max_jacobian_error<Sim3Transform>(rng, 100), 1e-5);
}

TEST(TotalCost, ConsistentAndSingleFactor) {
  std::mt19937_64 rng(6);
  FactorGraph<Homography> graph;
  const auto truth = make_chain(rng, 5, 0.4, graph);
  GraphValues<Homography> v;
  for (size_t k = 0; k < truth.size(); ++k) v[k] = truth[k];
  EXPECT_LT(total_cost(graph, v), 1e-18);

  FactorGraph<Homography> single;
  const SL4Tangent xi = random_tangent(rng, 0.2);
  single.add_between(0, 1, exp_sl4(xi));
  GraphValues<Homography> id = identity_values(2);
  const SL4Tangent e = residual(single.between()[0], id);
  EXPECT_NEAR(total_cost(single, id), e.squaredNorm(), 1e-15);
  EXPECT_LT((e + xi).norm(), 1e-9);
}

TEST(OptimizeLm, ThreeNodeChainAtTruth) {
  std::mt19937_64 rng(7);
  FactorGraph<Homography> graph;
  const auto truth = make_chain(rng, 3, 0.5, graph);
  GraphValues<Homography> v;
  for (size_t k = 0; k < truth.size(); ++k) v[k] = truth[k];
  const auto res = optimize_lm(graph, v);
  EXPECT_LE(res.report.iterations, 1);
  EXPECT_LT(res.report.final_cost, 1e-18);
  EXPECT_EQ(res.report.status, LmStatus::Converged);
}

TEST(OptimizeLm, TenNodeChainFromIdentity) {
  std::mt19937_64 rng(8);
  FactorGraph<Homography> graph;
  const auto truth = make_chain(rng, 10, 0.3, graph);
  const auto res = optimize_lm(graph, identity_values(10));
  EXPECT_LE(res.report.iterations, 25);
  EXPECT_EQ(res.report.status, LmStatus::Converged);
  for (int k = 0; k < 10; ++k)
    EXPECT_LT((res.values.at(k).matrix() - truth[k].matrix()).cwiseAbs().maxCoeff(), 1e-6) << k;
}

TEST(OptimizeLm, InconsistentLoopDistributesDefect) {
  std::mt19937_64 rng(9);
  FactorGraph<Homography> graph;
  const auto truth = make_chain(rng, 4, 0.3, graph);
  // Closing measurement 3 -> 0 carries a small defect.
  const Homography defect = exp_sl4(random_tangent_with_norm(rng, 0.05));
  graph.add_between(3, 0, truth[3].inverse() * defect);

  GraphValues<Homography> chained;  // odometry-only initialization
  for (int k = 0; k < 4; ++k) chained[k] = truth[k];
  const double odom_cost = total_cost(graph, chained);
  const auto res = optimize_lm(graph, chained);
  EXPECT_LT(res.report.final_cost, odom_cost);
  // Every edge absorbs part of the defect instead of the closing edge alone.
  for (const auto& f : graph.between()) {
    const double r = residual(f, res.values).norm();
    EXPECT_GT(r, 0.05 / 16);
    EXPECT_LT(r, 0.05);
  }
}

TEST(OptimizeLm, AcceptedCostsMonotoneAndDeterminantPreserved) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    FactorGraph<Homography> graph;
    const auto truth = make_chain(rng, 6, 0.3, graph);
    for (int k = 0; k + 2 < 6; ++k)
      graph.add_between(k, k + 2,
                        truth[k].inverse() * truth[k + 2] * exp_sl4(random_tangent_with_norm(rng, 0.02)));
    LmConfig cfg;
    cfg.max_iters = 1;
    GraphValues<Homography> v = identity_values(6);
    double last = total_cost(graph, v);
    // Step one iteration at a time to inspect every intermediate state.
    for (int it = 0; it < 40; ++it) {
      const auto res = optimize_lm(graph, v, cfg);
      for (const auto& [id, h] : res.values) EXPECT_NEAR(h.matrix().determinant(), 1.0, 1e-8);
      EXPECT_LE(res.report.final_cost, last * (1 + 1e-12));
      last = res.report.final_cost;
      v = res.values;
    }
  }
}

TEST(OptimizeLm, HistoryOfAcceptedCostsIsNonIncreasing) {
  std::mt19937_64 rng(11);
  FactorGraph<Homography> graph;
  const auto truth = make_chain(rng, 8, 0.3, graph);
  graph.add_between(0, 7, truth[7] * exp_sl4(random_tangent_with_norm(rng, 0.1)));
  const auto res = optimize_lm(graph, identity_values(8));
  double last = res.report.initial_cost;
  for (const auto& step : res.report.history) {
    if (!step.accepted) continue;
    EXPECT_LE(step.cost, last);
    last = step.cost;
  }
}

TEST(OptimizeLm, Sim3SubgroupAgreesWithDedicatedSolve) {
  std::mt19937_64 rng(12);
  const int n = 6;
  std::vector<Sim3Transform> truth{Sim3Transform::identity()};
  FactorGraph<Sim3Transform> g_sim;
  FactorGraph<Homography> g_sl4;
  for (int k = 1; k < n; ++k) {
    const Sim3Transform m = random_sim3(rng, 0.5);
    truth.push_back(truth.back() * m);
  }
  auto add = [&](int i, int j) {
    const Sim3Transform m = truth[i].inverse() * truth[j];
    g_sim.add_between(i, j, m);
    g_sl4.add_between(i, j, m.to_homography());
  };
  for (int k = 1; k < n; ++k) add(k - 1, k);
  add(0, n - 1);
  add(1, 4);
  g_sim.add_prior(0, Sim3Transform::identity());
  g_sl4.add_prior(0, Homography());

  GraphValues<Sim3Transform> v_sim;
  for (int k = 0; k < n; ++k) v_sim[k] = Sim3Transform::identity();
  const auto r_sim = optimize_lm(g_sim, v_sim);
  const auto r_sl4 = optimize_lm(g_sl4, identity_values(n));
  for (int k = 0; k < n; ++k) {
    const Vec3 c_sim = r_sim.values.at(k).translation();
    const Vec3 c_sl4 = r_sl4.values.at(k).apply(Vec3::Zero());
    EXPECT_LT((c_sim - c_sl4).norm(), 1e-5) << k;
  }
}

TEST(OptimizeLm, GaugeAndInputErrors) {
  FactorGraph<Homography> no_prior;
  no_prior.add_between(0, 1, Homography());
  EXPECT_THROW(optimize_lm(no_prior, identity_values(2)), SingularNormalEquations);

  FactorGraph<Homography> split;  // {0,1} anchored, {2,3} floating
  split.add_between(0, 1, exp_sl4(SL4Tangent::Constant(0.01)));
  split.add_between(2, 3, exp_sl4(SL4Tangent::Constant(0.01)));
  split.add_prior(0, Homography());
  EXPECT_THROW(optimize_lm(split, identity_values(4)), SingularNormalEquations);

  FactorGraph<Homography> missing;
  missing.add_between(0, 5, Homography());
  missing.add_prior(0, Homography());
  EXPECT_THROW(optimize_lm(missing, identity_values(2)), MissingValue);

  FactorGraph<Homography> bad;
  EXPECT_THROW(bad.add_between(1, 1, Homography()), InvalidFactor);
  SL4Adjoint asym = SL4Adjoint::Identity();
  asym(0, 1) = 1.0;
  EXPECT_THROW(bad.add_between(0, 1, Homography(), asym), InvalidFactor);
}

TEST(GraphDump, OneLinePerNodeAndFactor) {
  std::mt19937_64 rng(13);
  FactorGraph<Homography> graph;
  make_chain(rng, 3, 0.2, graph);
  std::ostringstream os;
  write_graph_dump(os, graph, identity_values(3));
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 3 + 2 + 1);
  EXPECT_NE(s.find("between 0 1 residual_norm"), std::string::npos);
}
