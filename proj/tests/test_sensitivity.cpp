#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace gridcap;
using gridcap::testing::fixture_problem;
using gridcap::testing::rel_diff;

namespace {

SensitivityRecord rec(int bus, double q, double v) {
  SensitivityRecord r;
  r.bus = BusId{bus};
  r.os_q = q;
  r.os_v = v;
  return r;
}

std::vector<int> order(const std::vector<SensitivityRecord>& ranked) {
  std::vector<int> out;
  for (const auto& r : ranked) out.push_back(to_int(r.bus));
  return out;
}

const SensitivityRecord& find(const std::vector<SensitivityRecord>& v, int bus) {
  for (const auto& r : v)
    if (to_int(r.bus) == bus) return r;
  throw std::runtime_error("bus not found");
}

std::vector<SensitivityRecord> random_records(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> mag(0.0, 50.0);
  std::bernoulli_distribution neg(0.5);
  std::vector<SensitivityRecord> out;
  for (int k = 1; k <= n; ++k)
    out.push_back(rec(k, neg(rng) ? -mag(rng) : mag(rng), -mag(rng)));
  return out;
}

}  // namespace

TEST(CompositeScore, ArithmeticExample) {
  const auto ranked = composite_score({rec(1, 2.0, 0.0), rec(2, 1.0, 4.0)}, {0.5, 0.5});
  EXPECT_EQ(order(ranked), (std::vector<int>{2, 1}));
  EXPECT_DOUBLE_EQ(find(ranked, 1).s_score, 1.0);
  EXPECT_DOUBLE_EQ(find(ranked, 2).s_score, 2.5);
  EXPECT_EQ(ranked[0].rank, 1);
  EXPECT_EQ(ranked[1].rank, 2);
}

TEST(CompositeScore, TieBreaksByBusId) {
  const auto ranked = composite_score({rec(7, 1.0, 1.0), rec(3, 1.0, 1.0), rec(5, 0.0, 0.0)}, {0.5, 0.5});
  EXPECT_EQ(order(ranked), (std::vector<int>{3, 7, 5}));
}

TEST(CompositeScore, ReactiveOnlyWeights) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto recs = random_records(rng, 9);
    const auto ranked = composite_score(recs, {1.0, 0.0});
    std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return std::abs(a.os_q) > std::abs(b.os_q); });
    EXPECT_EQ(order(ranked), order(recs));
  }
}

TEST(CompositeScore, RejectsBadWeights) {
  EXPECT_THROW(composite_score({rec(1, 1, 1)}, {-0.1, 1.1}), ModelError);
  EXPECT_THROW(composite_score({rec(1, 1, 1)}, {0.5, 0.6}), ModelError);
  EXPECT_NO_THROW(composite_score({rec(1, 1, 1)}, {0.3, 0.7}));
}

TEST(CompositeScore, RanksArePermutation) {
  std::mt19937_64 rng(11);
  const auto ranked = composite_score(random_records(rng, 25), {0.4, 0.6});
  std::vector<int> ranks;
  for (const auto& r : ranked) ranks.push_back(r.rank);
  std::sort(ranks.begin(), ranks.end());
  for (int k = 0; k < 25; ++k) EXPECT_EQ(ranks[static_cast<std::size_t>(k)], k + 1);
  for (const auto& r : ranked) EXPECT_EQ(r.s_score, 0.4 * std::abs(r.os_q) + 0.6 * std::abs(r.os_v));
}

TEST(CompositeScore, WeightConvexity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto recs = random_records(rng, 8);
    const double a = u(rng), b = u(rng), t = u(rng);
    const ScoreWeights w1{a, 1.0 - a}, w2{b, 1.0 - b}, wt{t * a + (1 - t) * b, 1.0 - (t * a + (1 - t) * b)};
    const auto s1 = composite_score(recs, w1), s2 = composite_score(recs, w2), st = composite_score(recs, wt);
    for (const auto& r : recs) {
      const int bus = to_int(r.bus);
      const double mixed = t * find(s1, bus).s_score + (1 - t) * find(s2, bus).s_score;
      EXPECT_NEAR(find(st, bus).s_score, mixed, 1e-12 * std::max(1.0, mixed));
    }
  }
}

TEST(CompositeScore, CostScalingKeepsOrder) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto recs = random_records(rng, 10);
    const double a = alpha(rng);
    const auto base = composite_score(recs, {0.5, 0.5});
    for (auto& r : recs) {
      r.os_q *= a;
      r.os_v *= a;
    }
    const auto scaled = composite_score(recs, {0.5, 0.5});
    EXPECT_EQ(order(base), order(scaled));
    for (std::size_t k = 0; k < base.size(); ++k)
      EXPECT_NEAR(scaled[k].s_score, a * base[k].s_score, 1e-12 * scaled[k].s_score);
  }
}

TEST(Extract, RequiresMultipliers) {
  OpfSolution empty;
  EXPECT_THROW(extract(empty), ModelError);
}

TEST(Extract, NonOptimalRecordsTagged) {
  auto p = fixture_problem("microgrid9", 12);
  p.solver.max_iter = 3;
  const auto sol = solve(p);
  ASSERT_NE(sol.status, OpfStatus::Optimal);
  for (const auto& r : extract(sol)) EXPECT_FALSE(r.reliable);
}

TEST(Extract, NonbindingVoltageBoundsGiveZeroOsV) {
  for (const auto& name : gridcap::testing::fixtures()) {
    auto p = fixture_problem(name, 1);
    const auto sol = solve(p);
    ASSERT_EQ(sol.status, OpfStatus::Optimal);
    const AcopfNlp nlp(p);
    const auto recs = extract(sol);
    std::size_t checked = 0;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(p.network->index_of(recs[k].bus));
      const double slack = p.v_max(i) - sol.v(static_cast<Eigen::Index>(k));
      if (slack < 1e-3) {
        EXPECT_LE(recs[k].os_v, 0.0) << name << " bus " << to_int(recs[k].bus);
        continue;
      }
      ++checked;
      EXPECT_LE(nlp.objective_scale() * std::abs(recs[k].os_v) * slack, p.solver.comp_tol) << name;
      // Negligible next to the energy price, both in $ per p.u.
      EXPECT_LE(std::abs(recs[k].os_v), 1e-6 * sol.lambda_p.cwiseAbs().maxCoeff()) << name << " bus "
                                                                                    << to_int(recs[k].bus);
    }
    EXPECT_GT(checked, 0u) << name;
  }
}

TEST(Extract, MatchesFiniteDifferenceOnTwoBus) {
  auto p = fixture_problem("two_bus", 0);
  const auto sol = solve(p);
  const auto recs = extract(sol);
  const auto fq = fd_oracle(p, BusId{2}, SensitivityQuantity::Qd);
  ASSERT_TRUE(fq.reliable()) << fq.note;
  EXPECT_LE(std::abs(find(recs, 2).os_q - *fq.value) / std::max(std::abs(*fq.value), 1e-6), 0.01);
  // The slack voltage binds at v_max.
  const auto fv = fd_oracle(p, BusId{1}, SensitivityQuantity::Vmax);
  ASSERT_TRUE(fv.reliable()) << fv.note;
  EXPECT_LT(find(recs, 1).os_v, 0.0);
  EXPECT_LE(std::abs(find(recs, 1).os_v - *fv.value) / std::max(std::abs(*fv.value), 1e-6), 0.01);
}

TEST(Extract, ScaleEquivariance) {
  auto base = fixture_problem("microgrid9", 12);
  NetworkData d = base.network->data();
  const double alpha = 4.0;
  for (auto& g : d.generators) {
    g.cost.c2 *= alpha;
    g.cost.c1 *= alpha;
    g.cost.c0 *= alpha;
  }
  OpfProblem scaled = base;
  scaled.network = std::make_shared<const Network>(d);
  const auto r0 = composite_score(extract(solve(base)), {0.5, 0.5});
  const auto r1 = composite_score(extract(solve(scaled)), {0.5, 0.5});
  EXPECT_EQ(order(r0), order(r1));
  for (const auto& a : r0) {
    const auto& b = find(r1, to_int(a.bus));
    if (std::abs(a.os_q) > 1e-4) { EXPECT_LE(rel_diff(b.os_q, alpha * a.os_q), 1e-5); }
    if (std::abs(a.os_v) > 1e-4) { EXPECT_LE(rel_diff(b.os_v, alpha * a.os_v), 1e-5); }
    EXPECT_LE(std::abs(b.s_score - alpha * a.s_score), 1e-5 * std::max(1.0, b.s_score));
  }
}

TEST(FdOracle, RichardsonStability) {
  const auto p = fixture_problem("microgrid9", 12);
  const auto a = fd_oracle(p, BusId{5}, SensitivityQuantity::Qd, 1e-3);
  const auto b = fd_oracle(p, BusId{5}, SensitivityQuantity::Qd, 5e-4);
  ASSERT_TRUE(a.reliable() && b.reliable());
  EXPECT_LT(rel_diff(*a.value, *b.value), 1e-3);
}

TEST(FdOracle, ActiveSetCrossingFlagged) {
  const auto p = fixture_problem("two_bus", 0);
  const auto sol = solve(p);
  const double slack = p.v_max(1) - sol.v(1);
  ASSERT_GT(slack, 0.01);
  // Pulling bus 2's ceiling below its operating voltage makes the bound bind.
  const auto r = fd_oracle(p, BusId{2}, SensitivityQuantity::Vmax, slack + 0.01);
  EXPECT_TRUE(r.active_set_changed);
  EXPECT_FALSE(r.reliable());
}

TEST(FdOracle, UnavailableWhenSolvesFail) {
  auto p = fixture_problem("two_bus", 0);
  p.v_min.setConstant(1.0);
  p.v_max.setConstant(1.0);
  const auto r = fd_oracle(p, BusId{2}, SensitivityQuantity::Qd);
  EXPECT_FALSE(r.available());
  EXPECT_FALSE(r.note.empty());
  EXPECT_THROW(fd_oracle(fixture_problem("two_bus", 0), BusId{2}, SensitivityQuantity::Qd, 0.0), ModelError);
}

TEST(FdOracle, ReactiveOnlyLoadPaysMarginalLoss) {
  auto net = gridcap::testing::load_network("two_bus");
  auto p = OpfProblem::for_network(net);
  p.set_demand(BusId{2}, 0.0, 0.5);
  const auto fd = fd_oracle(p, BusId{2}, SensitivityQuantity::Qd);
  ASSERT_TRUE(fd.reliable()) << fd.note;
  EXPECT_GT(*fd.value, 0.0);

  // Independent oracle: slack held at 1.05, P_G equals the I^2 r loss of the
  // reactive flow, priced at the generator's marginal cost.
  auto loss_pu = [](double q) {
    const double r = 0.01, x = 0.1, v1 = 1.05;
    const double b = 2.0 * x * q - v1 * v1;
    const double v2sq = (-b + std::sqrt(b * b - 4.0 * (r * r + x * x) * q * q)) / 2.0;
    return r * q * q / v2sq;
  };
  const double q0 = 0.05, h = 1e-4;
  const double dloss = (loss_pu(q0 + h) - loss_pu(q0 - h)) / (2 * h);
  const double marginal = net->generators()[0].cost.marginal(loss_pu(q0) * 10.0);
  EXPECT_LE(rel_diff(*fd.value, marginal * dloss), 0.01);

  const auto sol = solve(p);
  EXPECT_LE(rel_diff(find(extract(sol), 2).os_q, *fd.value), 0.01);
}

TEST(Aggregate, MeanAndMaxSkipUnreliableHours) {
  std::vector<std::vector<SensitivityRecord>> hourly{{rec(1, 1.0, 0.0), rec(2, 0.0, 3.0)},
                                                     {rec(1, 3.0, 0.0), rec(2, 0.0, 1.0)},
                                                     {rec(1, 100.0, 0.0), rec(2, 0.0, 0.0)}};
  hourly[2][0].reliable = false;
  const auto [mean, used] = aggregate_hours(hourly, {0.5, 0.5}, Aggregation::Mean);
  EXPECT_EQ(used, 2u);
  EXPECT_DOUBLE_EQ(find(mean, 1).os_q, 2.0);
  EXPECT_DOUBLE_EQ(find(mean, 2).os_v, 2.0);
  EXPECT_EQ(order(mean), (std::vector<int>{1, 2}));
  const auto [mx, used2] = aggregate_hours(hourly, {0.5, 0.5}, Aggregation::Max);
  EXPECT_EQ(used2, 2u);
  EXPECT_DOUBLE_EQ(find(mx, 1).os_q, 3.0);
  EXPECT_DOUBLE_EQ(find(mx, 2).os_v, 3.0);
  EXPECT_EQ(order(mx), (std::vector<int>{1, 2}));
}

TEST(CrossCase, IdenticalRankingsAllHighConfidence) {
  const auto r = composite_score({rec(1, 3, 0), rec(2, 2, 0), rec(3, 1, 0)}, {0.5, 0.5});
  const auto t = cross_case_rank_table({{"a", r}, {"b", r}, {"c", r}});
  EXPECT_TRUE(std::all_of(t.high_confidence.begin(), t.high_confidence.end(), [](bool b) { return b; }));
  EXPECT_EQ(t.stable_top.size(), 3u);
}

TEST(CrossCase, PublishedTopBusPattern) {
  // Cases 1, 2 and 4 rank 508, 364, 675; Case 3 swaps 783 into third place.
  const auto usual = composite_score({rec(508, 4, 0), rec(364, 3, 0), rec(675, 2, 0), rec(783, 1, 0)}, {0.5, 0.5});
  const auto old = composite_score({rec(508, 4, 0), rec(364, 3, 0), rec(675, 1, 0), rec(783, 2, 0)}, {0.5, 0.5});
  const auto t = cross_case_rank_table({{"case1", usual}, {"case2", usual}, {"case3", old}, {"case4", usual}});
  std::vector<int> confident;
  for (std::size_t k = 0; k < t.buses.size(); ++k)
    if (t.high_confidence[k]) confident.push_back(to_int(t.buses[k]));
  std::sort(confident.begin(), confident.end());
  EXPECT_EQ(confident, (std::vector<int>{364, 508}));
  ASSERT_EQ(t.stable_top.size(), 2u);
  EXPECT_EQ(t.stable_top[0], BusId{508});
  EXPECT_EQ(t.stable_top[1], BusId{364});
  EXPECT_EQ(t.ranks[*t.row_of(BusId{783})], (std::vector<int>{4, 4, 3, 4}));
}

TEST(CrossCase, Rejections) {
  const auto r = composite_score({rec(1, 3, 0), rec(2, 2, 0)}, {0.5, 0.5});
  EXPECT_THROW(cross_case_rank_table({{"only", r}}), ModelError);
  const auto other = composite_score({rec(1, 3, 0), rec(9, 2, 0)}, {0.5, 0.5});
  EXPECT_THROW(cross_case_rank_table({{"a", r}, {"b", other}}), ModelError);
}
