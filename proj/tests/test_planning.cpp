#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "gridcap/planning.hpp"
#include "support.hpp"

using namespace gridcap;

namespace {

CaseResult synthetic_old(const std::vector<std::vector<double>>& shed_by_hour, std::vector<int> buses) {
  CaseResult r;
  r.case_id = CaseId::OLD;
  r.objective = Objective::OptimalLoadDelivery;
  for (int b : buses) r.buses.push_back(BusId{b});
  for (const auto& row : shed_by_hour) {
    HourResult h;
    h.shed_by_bus_mw = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    r.hours.push_back(h);
  }
  return r;
}

std::pair<double, std::vector<bool>> brute_force(const std::vector<PlanningCandidate>& c) {
  const std::size_t n = c.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> arg;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    double total = 0.0;
    std::vector<bool> x(n);
    for (std::size_t k = 0; k < n; ++k) {
      x[k] = (mask >> k) & 1u;
      total += x[k] ? c[k].c_cap : c[k].c_voll;
    }
    // Strict improvement keeps the fewest-installs subset among exact ties.
    if (total < best || (total == best && std::count(x.begin(), x.end(), true) < std::count(arg.begin(), arg.end(), true))) {
      best = total;
      arg = x;
    }
  }
  return {best, arg};
}

}  // namespace

TEST(VollCost, ZeroShed) {
  const auto r = synthetic_old({{0, 0}, {0, 0}}, {1, 2});
  for (const auto& [bus, c] : voll_cost(r, 1000.0, 1.0)) EXPECT_EQ(c, 0.0) << to_int(bus);
}

TEST(VollCost, TwoMegawattsForThreeHours) {
  const auto r = synthetic_old({{0, 2}, {0, 2}, {0, 2}}, {1, 2});
  const auto c = voll_cost(r, 1000.0, 1.0);
  EXPECT_DOUBLE_EQ(c.at(BusId{2}), 6000.0);
  EXPECT_DOUBLE_EQ(c.at(BusId{1}), 0.0);
}

TEST(VollCost, Rejections) {
  auto r = synthetic_old({{1}}, {1});
  EXPECT_THROW(voll_cost(r, 0.0, 1.0), ModelError);
  EXPECT_THROW(voll_cost(r, 1000.0, 0.0), ModelError);
  r.objective = Objective::Economic;
  EXPECT_THROW(voll_cost(r, 1000.0, 1.0), ModelError);
}

TEST(VollCost, MatchesRecomputationFromHourlyCsv) {
  using namespace gridcap::testing;
  const auto st = run_four_case_study(*load_network("microgrid9"), load_demand("microgrid9"), {});
  const auto& c3 = st.at(CaseId::OLD);
  ASSERT_GT(c3.load_shed, 0.0);
  const std::string csv = io::render_table(io::hourly_table(c3));

  // Independent pass over the emitted text: sum every shed_mw_<bus> column.
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  for (std::stringstream hs(line); std::getline(hs, line, ',');) header.push_back(line);
  std::map<int, double> expected;
  std::string row;
  while (std::getline(in, row)) {
    std::vector<std::string> cells;
    std::stringstream rs(row);
    for (std::string cell; std::getline(rs, cell, ',');) cells.push_back(cell);
    for (std::size_t k = 0; k < header.size() && k < cells.size(); ++k) {
      if (header[k].rfind("shed_mw_", 0) == 0 && !cells[k].empty())
        expected[std::stoi(header[k].substr(8))] += std::stod(cells[k]) * 1000.0 * 1.0;
    }
  }
  const auto got = voll_cost(c3, 1000.0);
  ASSERT_EQ(got.size(), expected.size());
  double total = 0.0;
  for (const auto& [bus, c] : got) {
    EXPECT_NEAR(c, expected.at(to_int(bus)), 1e-6 * std::max(1.0, c)) << to_int(bus);
    total += c;
  }
  EXPECT_NEAR(total, c3.load_shed * 1000.0, 1e-6 * total);
}

TEST(Plan, AllCapacitorsTooExpensive) {
  const auto d = plan({{BusId{1}, 500, 100}, {BusId{2}, 700, 200}});
  EXPECT_TRUE(d.installed().empty());
  EXPECT_DOUBLE_EQ(d.objective, 300.0);
}

TEST(Plan, ThresholdArithmetic) {
  const auto d = plan({{BusId{1}, 100, 50}, {BusId{2}, 100, 200}});
  EXPECT_FALSE(d.rows[0].install);
  EXPECT_TRUE(d.rows[1].install);
  EXPECT_DOUBLE_EQ(d.objective, 150.0);
}

TEST(Plan, TiesStayUninstalled) {
  const auto d = plan({{BusId{1}, 100, 100}, {BusId{2}, 100, 100 + 1e-10}, {BusId{3}, 100, 100 + 1e-6}});
  EXPECT_FALSE(d.rows[0].install);
  EXPECT_FALSE(d.rows[1].install);
  EXPECT_TRUE(d.rows[2].install);
}

TEST(Plan, Rejections) {
  EXPECT_THROW(plan(std::vector<PlanningCandidate>{}), ModelError);
  EXPECT_THROW(plan({{BusId{1}, -1, 5}}), ModelError);
  EXPECT_THROW(plan({{BusId{1}, 1, std::numeric_limits<double>::infinity()}}), ModelError);
  const auto r = synthetic_old({{0, 2}}, {1, 2});
  EXPECT_THROW(plan(r, {{BusId{9}, 10.0}}, 1000.0), ModelError);
}

TEST(Plan, MatchesBruteForce) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_real_distribution<double> cost(0.0, 1000.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PlanningCandidate> c;
    const int n = size(rng);
    for (int k = 0; k < n; ++k) c.push_back({BusId{k + 1}, cost(rng), cost(rng)});
    const auto d = plan(c);
    const auto [best, x] = brute_force(c);
    EXPECT_EQ(d.objective, best);
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(d.rows[k].install, x[k]);
  }
}

TEST(Plan, MonotoneInVollRate) {
  const auto r = synthetic_old({{0.5, 2.0, 0.0}, {0.1, 1.0, 3.0}}, {4, 5, 6});
  const std::map<BusId, double> caps{{BusId{4}, 900}, {BusId{5}, 2500}, {BusId{6}, 4000}};
  std::vector<bool> prev(3, false);
  for (double rate : {100.0, 500.0, 1000.0, 1500.0, 3000.0, 10000.0}) {
    const auto d = plan(r, caps, rate);
    for (std::size_t k = 0; k < 3; ++k) {
      if (prev[k]) { EXPECT_TRUE(d.rows[k].install) << "rate " << rate; }
      prev[k] = d.rows[k].install;
    }
  }
  EXPECT_TRUE(prev[0] && prev[1] && prev[2]);
}

TEST(Plan, ObjectiveDominance) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> cost(0.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PlanningCandidate> c;
    double all_cap = 0.0, none = 0.0;
    for (int k = 0; k < 6; ++k) {
      c.push_back({BusId{k + 1}, cost(rng), cost(rng)});
      all_cap += c.back().c_cap;
      none += c.back().c_voll;
    }
    const auto d = plan(c);
    EXPECT_LE(d.objective, all_cap);
    EXPECT_LE(d.objective, none);
  }
}

TEST(EconomicComparison, PublishedCaseValues) {
  const auto c = economic_comparison(7045.99, 8605.34, 71.74, 87.81);
  EXPECT_NEAR(c.delta_cost, 1559.35, 1e-9);
  EXPECT_NEAR(c.recovered_mw, 16.07, 1e-9);
  ASSERT_TRUE(c.price.has_value());
  // 97.0348 prints as 97.03.
  EXPECT_NEAR(*c.price, 1559.35 / 16.07, 1e-9);
  EXPECT_NEAR(*c.price, 97.0, 1.0);
  EXPECT_FALSE(c.anomalous);
  EXPECT_NE(c.narrative().find("$97.03 per MW of recovered demand"), std::string::npos);
  EXPECT_NE(c.narrative().find("if the site-specific VoLL exceeds $97.03/MW, capacitor installation is cost-justified"),
            std::string::npos)
      << c.narrative();
}

TEST(EconomicComparison, IdenticalResults) {
  const auto c = economic_comparison(100.0, 100.0, 50.0, 50.0);
  EXPECT_EQ(c.delta_cost, 0.0);
  EXPECT_EQ(c.recovered_mw, 0.0);
  EXPECT_FALSE(c.price.has_value());
  EXPECT_FALSE(c.anomalous);
  EXPECT_NE(c.narrative().find("no recovery needed"), std::string::npos);
}

TEST(EconomicComparison, RoundoffIsNotRecovery) {
  const auto c = economic_comparison(136.10, 136.10 + 1e-9, 12.0, 12.0 + 1e-11);
  EXPECT_FALSE(c.price.has_value());
  EXPECT_FALSE(c.anomalous);
  EXPECT_NE(c.narrative().find("no recovery needed"), std::string::npos);
  EXPECT_FALSE(economic_comparison(136.10, 136.10, 12.0, 12.0 - 1e-11).anomalous);
}

TEST(EconomicComparison, CaseFourServingLessIsAnomalous) {
  const auto c = economic_comparison(100.0, 90.0, 50.0, 45.0);
  EXPECT_LT(c.recovered_mw, 0.0);
  EXPECT_TRUE(c.anomalous);
  EXPECT_FALSE(c.price.has_value());
}

TEST(EconomicComparison, PriceTimesRecoveredIsDelta) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 1e4);
  for (int trial = 0; trial < 500; ++trial) {
    const double s3 = u(rng), s4 = s3 + u(rng);
    const auto c = economic_comparison(u(rng), u(rng), s3, s4);
    ASSERT_TRUE(c.price.has_value());
    EXPECT_LE(std::abs(*c.price * c.recovered_mw - c.delta_cost), 1e-9 * std::max(1.0, std::abs(c.delta_cost)));
  }
}

TEST(EconomicComparison, HorizonMismatchRejected) {
  CaseResult a, b;
  a.hours.resize(3);
  b.hours.resize(4);
  EXPECT_THROW(economic_comparison(a, b), ModelError);
}
