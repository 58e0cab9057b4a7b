#pragma once

// Capacitor investment versus value of lost load, and the cost of the
// demand a capacitor-enhanced dispatch recovers.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "gridcap/acopf.hpp"
#include "gridcap/errors.hpp"
#include "gridcap/grid_model.hpp"
#include "gridcap/study.hpp"

namespace gridcap {

/// Expected lost-load cost per bus: sum over hours of shed MW * rate * dt.
inline std::map<BusId, double> voll_cost(const CaseResult& case3, double voll_rate, double dt) {
  if (case3.objective != Objective::OptimalLoadDelivery)
    throw ModelError("lost-load cost needs an optimal-load-delivery result");
  if (!(voll_rate > 0.0)) throw ModelError("VoLL rate must be positive");
  if (!(dt > 0.0)) throw ModelError("timestep must be positive");
  std::map<BusId, double> out;
  for (BusId b : case3.buses) out[b] = 0.0;
  for (const auto& h : case3.hours) {
    if (!h.valid) continue;
    for (std::size_t k = 0; k < case3.buses.size(); ++k)
      out[case3.buses[k]] += h.shed_by_bus_mw(static_cast<Eigen::Index>(k)) * voll_rate * dt;
  }
  return out;
}

inline std::map<BusId, double> voll_cost(const CaseResult& case3, double voll_rate) {
  return voll_cost(case3, voll_rate, case3.dt);
}

struct PlanningCandidate {
  BusId bus{};
  double c_cap = 0.0;   // $, annualized by the caller
  double c_voll = 0.0;  // $
};

struct PlanningDecision {
  struct Row {
    BusId bus{};
    double c_cap = 0.0;
    double c_voll = 0.0;
    bool install = false;
  };
  std::vector<Row> rows;
  double objective = 0.0;

  std::vector<BusId> installed() const {
    std::vector<BusId> out;
    for (const auto& r : rows)
      if (r.install) out.push_back(r.bus);
    return out;
  }
};

inline constexpr double kPlanTieTolerance = 1e-9;

/// The investment problem is separable per bus: install iff c_cap < c_voll,
/// with near-ties left uninstalled.
inline PlanningDecision plan(const std::vector<PlanningCandidate>& candidates) {
  if (candidates.empty()) throw ModelError("planning needs at least one candidate bus");
  PlanningDecision d;
  for (const auto& c : candidates) {
    if (!(c.c_cap >= 0.0) || !std::isfinite(c.c_cap))
      throw ModelError(fmt::format("capacitor cost at bus {} must be finite and >= 0", to_int(c.bus)));
    if (!(c.c_voll >= 0.0) || !std::isfinite(c.c_voll))
      throw ModelError(fmt::format("lost-load cost at bus {} must be finite and >= 0", to_int(c.bus)));
    const bool install = c.c_cap < c.c_voll && std::abs(c.c_cap - c.c_voll) > kPlanTieTolerance;
    d.rows.push_back({c.bus, c.c_cap, c.c_voll, install});
    d.objective += install ? c.c_cap : c.c_voll;
  }
  return d;
}

/// Candidates are the buses with a capacitor cost; each must appear in case3.
inline PlanningDecision plan(const CaseResult& case3, const std::map<BusId, double>& c_cap, double voll_rate) {
  const auto voll = voll_cost(case3, voll_rate);
  std::vector<PlanningCandidate> cands;
  for (const auto& [bus, cost] : c_cap) {
    auto it = voll.find(bus);
    if (it == voll.end()) throw ModelError(fmt::format("candidate bus {} is not in the OLD result", to_int(bus)));
    cands.push_back({bus, cost, it->second});
  }
  return plan(cands);
}

struct EconomicComparison {
  double delta_cost = 0.0;         // $
  double recovered_mw = 0.0;       // MW summed over hours
  std::optional<double> price;     // $/MW; empty when nothing was recovered
  bool anomalous = false;          // Case 4 served less than Case 3

  std::string narrative() const {
    if (anomalous)
      return fmt::format(
          "Capacitor-enhanced dispatch served {:.2f} MW less than load delivery; no price per MW of recovered demand.",
          -recovered_mw);
    if (!price)
      return "Load delivery shed nothing, so no recovery needed: the cost per MW of recovered demand is not applicable.";
    return fmt::format(
        "Capacitors recover {:.2f} MW at an added operating cost of ${:.2f}, i.e. ${:.2f} per MW of recovered demand; "
        "if the site-specific VoLL exceeds ${:.2f}/MW, capacitor installation is cost-justified.",
        recovered_mw, delta_cost, *price, *price);
  }
};

inline EconomicComparison economic_comparison(double cost3, double cost4, double served3, double served4) {
  EconomicComparison c;
  c.delta_cost = cost4 - cost3;
  c.recovered_mw = served4 - served3;
  // Differences at solver precision are not recovery.
  const double tol = 1e-6 * std::max(1.0, std::abs(served3));
  if (std::abs(c.recovered_mw) <= tol) return c;
  if (c.recovered_mw < 0.0) c.anomalous = true;
  else c.price = c.delta_cost / c.recovered_mw;
  return c;
}

inline EconomicComparison economic_comparison(const CaseResult& case3, const CaseResult& case4) {
  if (case3.hours.size() != case4.hours.size())
    throw ModelError("cases cover different horizons");
  return economic_comparison(case3.total_cost, case4.total_cost, case3.load_served, case4.load_served);
}

}  // namespace gridcap
