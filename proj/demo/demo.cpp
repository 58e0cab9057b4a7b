// Solves one hour of the bundled microgrid and prints dispatch, voltages and
// the capacitor-placement ranking for that hour.

#include <cstdlib>
#include <map>
#include <memory>

#include <fmt/format.h>

#include "gridcap/io.hpp"
#include "gridcap/sensitivity.hpp"
#include "gridcap/study.hpp"

using namespace gridcap;

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : GRIDCAP_DATA_DIR;
  const int hour = argc > 2 ? std::atoi(argv[2]) : 12;
  auto net = std::make_shared<const Network>(
      parse_network(io::read_file(dir + "/microgrid9.net"), "microgrid9.net"));
  const DemandSeries demand = parse_demand_csv(io::read_file(dir + "/microgrid9_demand.csv"), 1.0, "demand");

  Scenario sc;  // Economic, nominal power factor
  const OpfProblem prob = hour_problem(net, demand, static_cast<std::size_t>(hour), sc);
  const OpfSolution sol = solve(prob);
  fmt::print("hour {}: {} after {} iterations, cost ${:.2f}\n", hour, to_string(sol.status), sol.iterations,
             sol.generation_cost);
  for (Eigen::Index g = 0; g < sol.p_g.size(); ++g)
    fmt::print("  gen {}: {:.3f} MW, {:.3f} Mvar\n", g + 1, sol.p_g(g), sol.q_g(g));

  fmt::print("  bus      V     OS_Q($/Mvar)  OS_V($/pu)   S_k  rank\n");
  const auto records = extract(sol);
  std::map<BusId, SensitivityRecord> ranked;
  for (const auto& r : composite_score(records, ScoreWeights{})) ranked[r.bus] = r;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = ranked.at(records[k].bus);
    fmt::print("  {:>3}  {:.4f}  {:>12.4f}  {:>10.4f}  {:>6.3f}  {:>3}\n", to_int(r.bus),
               sol.v(static_cast<Eigen::Index>(k)), r.os_q, r.os_v, r.s_score, r.rank);
  }
  const KktReport kkt = kkt_report(sol, prob);
  fmt::print("KKT: stationarity {:.1e}, mismatch {:.1e} p.u., complementarity {:.1e}\n", kkt.stationarity,
             kkt.feasibility, kkt.complementarity);
  return sol.status == OpfStatus::Optimal ? 0 : 2;
}
