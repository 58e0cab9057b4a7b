#pragma once

// Four comparative cases over a demand horizon: economic baseline, PV
// power-factor stress, optimal load delivery, and capacitor-enhanced
// economic dispatch with sensitivity-ranked capacitor sites.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "gridcap/acopf.hpp"
#include "gridcap/errors.hpp"
#include "gridcap/grid_model.hpp"
#include "gridcap/sensitivity.hpp"

namespace gridcap {

enum class CaseId { Economic = 1, VoltageStress = 2, OLD = 3, CapEnhanced = 4 };

inline const char* case_label(CaseId c) {
  switch (c) {
    case CaseId::Economic: return "Economic";
    case CaseId::VoltageStress: return "Voltage Stress";
    case CaseId::OLD: return "OLD";
    case CaseId::CapEnhanced: return "Cap Enhanced";
  }
  return "?";
}

/// PV injection (MW, Mvar) at one timestep. Leading power factor injects Q,
/// lagging absorbs it.
inline std::pair<double, double> pv_injection(const PvUnit& pv, std::size_t hour,
                                              const std::optional<PowerFactor>& pf_override = std::nullopt) {
  const PowerFactor pf = pf_override.value_or(pv.pf_nominal);
  if (!(pf.value > 0.0 && pf.value <= 1.0))
    throw ModelError(fmt::format("power factor {} outside (0, 1]", pf.value));
  if (hour >= pv.p_profile.size())
    throw ModelError(fmt::format("PV profile at bus {} has no step {}", to_int(pv.bus), hour));
  const double p = pv.p_profile[hour];
  if (pf.value == 1.0 || p == 0.0) return {p, 0.0};
  const double q = p * std::tan(std::acos(pf.value));
  return {p, pf.sign == PfSign::Leading ? q : -q};
}

struct Scenario {
  CaseId case_id = CaseId::Economic;
  /// One optional override per PV unit (network order); empty means nominal.
  std::vector<std::optional<PowerFactor>> pf_overrides;
  std::vector<ShuntCapacitor> capacitors;  // CapEnhanced only
  ObjectiveOptions objective_options;
  SolverOptions solver;
  ScoreWeights weights;
  Aggregation aggregation = Aggregation::Mean;
  bool warm_start = true;

  static std::vector<std::optional<PowerFactor>> uniform_pf(const Network& net, PowerFactor pf) {
    return std::vector<std::optional<PowerFactor>>(net.pv_units().size(), pf);
  }

  Objective objective() const {
    return case_id == CaseId::OLD ? Objective::OptimalLoadDelivery : Objective::Economic;
  }

  void check(const Network& net) const {
    weights.check();
    if (!pf_overrides.empty() && pf_overrides.size() != net.pv_units().size())
      throw ModelError(fmt::format("{} PV overrides for {} PV units", pf_overrides.size(), net.pv_units().size()));
    for (const auto& o : pf_overrides) {
      if (o && !(o->value > 0.0 && o->value <= 1.0))
        throw ModelError(fmt::format("power factor override {} outside (0, 1]", o->value));
    }
    if (case_id == CaseId::CapEnhanced && capacitors.empty())
      throw ModelError("capacitor-enhanced scenario needs at least one capacitor");
    if (case_id == CaseId::VoltageStress &&
        std::none_of(pf_overrides.begin(), pf_overrides.end(), [](const auto& o) { return o.has_value(); }))
      throw ModelError("voltage-stress scenario needs at least one power-factor override");
    for (const auto& c : capacitors) {
      if (!net.has_bus(c.bus)) throw ModelError(fmt::format("capacitor at undeclared bus {}", to_int(c.bus)));
      if (!(c.b_cap > 0.0)) throw ModelError("capacitor b_cap must be > 0");
    }
  }
};

struct HourResult {
  int hour = 0;  // label from the demand file
  bool valid = true;
  OpfSolution solution;
  std::vector<SensitivityRecord> sensitivity;  // ranked; empty for invalid hours
  double load_mw = 0.0;
  double load_mvar = 0.0;
  double served_mw = 0.0;
  double shed_mw = 0.0;
  double pv_p_mw = 0.0;
  double pv_q_mvar = 0.0;
  double loss_mw = 0.0;
  Eigen::VectorXd shed_by_bus_mw;  // per energized bus

  bool optimal() const { return valid && solution.status == OpfStatus::Optimal; }
};

struct CaseResult {
  CaseId case_id = CaseId::Economic;
  Objective objective = Objective::Economic;
  double dt = 1.0;
  std::vector<BusId> buses;  // energized buses
  std::vector<HourResult> hours;

  double total_cost = 0.0;     // $ generation cost over Optimal hours
  double load_served = 0.0;    // MW summed over hours
  double load_shed = 0.0;      // MW summed over hours (OLD only)
  double total_demand = 0.0;   // MW summed over valid hours
  double avg_mismatch = 0.0;   // p.u., mean over valid hours and buses
  double avg_vmin = 0.0;
  double avg_vmax = 0.0;
  std::size_t valid_hours = 0;
  std::size_t non_optimal_hours = 0;
  std::size_t sensitivity_hours = 0;  // hours entering the ranking
  std::vector<SensitivityRecord> ranking;

  double served_mwh() const { return load_served * dt; }

  std::vector<BusId> top_buses(std::size_t m) const {
    std::vector<BusId> out;
    for (std::size_t k = 0; k < std::min(m, ranking.size()); ++k) out.push_back(ranking[k].bus);
    return out;
  }
};

/// Builds the OPF for one hour of a scenario on `net`.
inline OpfProblem hour_problem(const std::shared_ptr<const Network>& net, const DemandSeries& demand,
                               std::size_t hour, const Scenario& sc) {
  OpfProblem p = OpfProblem::for_network(net);
  const double sb = net->s_base();
  for (std::size_t k = 0; k < demand.buses().size(); ++k) {
    const auto i = static_cast<Eigen::Index>(net->index_of(demand.buses()[k]));
    p.p_d(i) = demand.p_mw()(static_cast<Eigen::Index>(hour), static_cast<Eigen::Index>(k)) / sb;
    p.q_d(i) = demand.q_mvar()(static_cast<Eigen::Index>(hour), static_cast<Eigen::Index>(k)) / sb;
  }
  for (std::size_t u = 0; u < net->pv_units().size(); ++u) {
    const PvUnit& pv = net->pv_units()[u];
    std::optional<PowerFactor> ov;
    if (!sc.pf_overrides.empty()) ov = sc.pf_overrides[u];
    const auto [pmw, qmvar] = pv_injection(pv, hour, ov);
    const auto i = static_cast<Eigen::Index>(net->index_of(pv.bus));
    p.p_inj(i) += pmw / sb;
    p.q_inj(i) += qmvar / sb;
  }
  p.dt = demand.dt();
  p.objective = sc.objective();
  p.objective_options = sc.objective_options;
  p.solver = sc.solver;
  return p;
}

inline void summarize(CaseResult& r, const ScoreWeights& weights, Aggregation mode) {
  r.total_cost = r.load_served = r.load_shed = r.total_demand = 0.0;
  r.valid_hours = r.non_optimal_hours = 0;
  double mism = 0.0, vmin = 0.0, vmax = 0.0;
  std::vector<std::vector<SensitivityRecord>> hourly;
  for (const auto& h : r.hours) {
    if (!h.valid) continue;
    ++r.valid_hours;
    r.total_demand += h.load_mw;
    mism += h.solution.mean_mismatch();
    vmin += h.solution.v.minCoeff();
    vmax += h.solution.v.maxCoeff();
    r.load_served += h.served_mw;
    r.load_shed += h.shed_mw;
    if (h.optimal()) r.total_cost += h.solution.generation_cost;
    else ++r.non_optimal_hours;
    hourly.push_back(h.sensitivity);
  }
  if (r.valid_hours > 0) {
    const double n = static_cast<double>(r.valid_hours);
    r.avg_mismatch = mism / n;
    r.avg_vmin = vmin / n;
    r.avg_vmax = vmax / n;
  }
  auto [ranking, used] = aggregate_hours(hourly, weights, mode);
  r.ranking = std::move(ranking);
  r.sensitivity_hours = used;
}

/// Runs one scenario over every valid hour, warm-starting each hour from the
/// previous Optimal hour. A failed warm-started solve is retried from a flat start.
inline CaseResult run_case(const Scenario& sc, const Network& network, const DemandSeries& demand) {
  sc.check(network);
  auto net = std::make_shared<const Network>(sc.case_id == CaseId::CapEnhanced ? network.with_shunts(sc.capacitors)
                                                                                : network);
  check_demand(*net, demand);
  CaseResult r;
  r.case_id = sc.case_id;
  r.objective = sc.objective();
  r.dt = demand.dt();
  for (auto i : net->energized()) r.buses.push_back(net->buses()[i].id);

  std::optional<OpfSolution> previous;
  for (std::size_t t = 0; t < demand.horizon(); ++t) {
    HourResult h;
    h.hour = demand.hour_label(t);
    h.valid = demand.is_valid(t);
    if (!h.valid) {
      r.hours.push_back(std::move(h));
      continue;
    }
    const OpfProblem prob = hour_problem(net, demand, t, sc);
    const OpfSolution* warm = sc.warm_start && previous ? &*previous : nullptr;
    OpfSolution sol = solve(prob, warm);
    if (warm && sol.status != OpfStatus::Optimal) {
      OpfSolution cold = solve(prob);
      if (cold.status == OpfStatus::Optimal || cold.max_mismatch() < sol.max_mismatch()) sol = std::move(cold);
    }
    const auto& energized = net->energized();
    h.shed_by_bus_mw = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(energized.size()));
    for (std::size_t k = 0; k < energized.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(energized[k]);
      const double pd = prob.p_d(i) * net->s_base();
      h.load_mw += pd;
      h.load_mvar += prob.q_d(i) * net->s_base();
      h.shed_by_bus_mw(static_cast<Eigen::Index>(k)) = sol.shed(static_cast<Eigen::Index>(k)) * pd;
      h.pv_p_mw += prob.p_inj(i) * net->s_base();
      h.pv_q_mvar += prob.q_inj(i) * net->s_base();
    }
    const double physical_served = h.load_mw - h.shed_by_bus_mw.sum();
    // A non-Optimal hour serves nothing; under OLD its whole demand counts as shed.
    if (sol.status != OpfStatus::Optimal) {
      for (std::size_t k = 0; k < energized.size(); ++k)
        h.shed_by_bus_mw(static_cast<Eigen::Index>(k)) =
            r.objective == Objective::OptimalLoadDelivery
                ? prob.p_d(static_cast<Eigen::Index>(energized[k])) * net->s_base()
                : 0.0;
    }
    h.shed_mw = h.shed_by_bus_mw.sum();
    h.served_mw = sol.status == OpfStatus::Optimal ? h.load_mw - h.shed_mw : 0.0;
    h.loss_mw = sol.p_g.sum() + h.pv_p_mw - physical_served;
    h.sensitivity = composite_score(extract(sol), sc.weights);
    if (sol.status == OpfStatus::Optimal) previous = sol;
    else previous.reset();
    h.solution = std::move(sol);
    r.hours.push_back(std::move(h));
  }
  summarize(r, sc.weights, sc.aggregation);
  return r;
}

// ---------------------------------------------------------------------------
// Four-case study
// ---------------------------------------------------------------------------

struct StudyOptions {
  PowerFactor stress_pf{0.8, PfSign::Lagging};
  ScoreWeights weights;
  std::size_t top_m = 3;
  double cap_mvar = 0.5;          // rated size per selected bus at 1.0 p.u.
  bool case4_stressed = false;    // rerun Case 4 under the stressed power factors
  Aggregation aggregation = Aggregation::Mean;
  bool warm_start = true;
  ObjectiveOptions objective_options;
  SolverOptions solver;

  void check() const {
    weights.check();
    if (top_m == 0) throw ModelError("top-m must be at least 1");
    if (!(stress_pf.value > 0.0 && stress_pf.value <= 1.0))
      throw ModelError(fmt::format("stress power factor {} outside (0, 1]", stress_pf.value));
    if (!(cap_mvar > 0.0)) throw ModelError("capacitor size must be positive");
  }
};

struct CrossCaseRow {
  CaseId case_id;
  double total_cost;
  double load_served;
  double load_shed;
  double avg_mismatch;
  double avg_vmin;
  double avg_vmax;
  std::vector<BusId> top_cap_buses;
};

struct StudyResult {
  std::array<CaseResult, 4> cases;
  std::vector<BusId> capacitor_buses;  // Case 4 sites
  std::vector<SensitivityRecord> pooled_ranking;  // Cases 1-3 combined
  RankTable rank_table;
  std::vector<CrossCaseRow> table;
  std::vector<std::string> warnings;
  bool capacitors_insufficient = false;

  const CaseResult& at(CaseId c) const { return cases[static_cast<std::size_t>(c) - 1]; }
};

/// Mean of per-case aggregated scores; cases without reliable hours are skipped.
inline std::vector<SensitivityRecord> pool_rankings(std::span<const CaseResult* const> results,
                                                    const ScoreWeights& weights) {
  std::map<BusId, std::pair<double, double>> sum;
  std::size_t used = 0;
  for (const CaseResult* r : results) {
    if (r->sensitivity_hours == 0) continue;
    ++used;
    for (const auto& rec : r->ranking) {
      auto& s = sum[rec.bus];
      s.first += std::abs(rec.os_q);
      s.second += std::abs(rec.os_v);
    }
  }
  std::vector<SensitivityRecord> out;
  for (const auto& [bus, s] : sum) {
    SensitivityRecord rec;
    rec.bus = bus;
    rec.os_q = s.first / static_cast<double>(used);
    rec.os_v = s.second / static_cast<double>(used);
    out.push_back(rec);
  }
  return composite_score(std::move(out), weights);
}

inline StudyResult run_four_case_study(const Network& network, const DemandSeries& demand, const StudyOptions& opt) {
  opt.check();
  StudyResult out;
  auto scenario = [&](CaseId id) {
    Scenario sc;
    sc.case_id = id;
    sc.objective_options = opt.objective_options;
    sc.solver = opt.solver;
    sc.weights = opt.weights;
    sc.aggregation = opt.aggregation;
    sc.warm_start = opt.warm_start;
    return sc;
  };
  const auto stressed = Scenario::uniform_pf(network, opt.stress_pf);

  Scenario c1 = scenario(CaseId::Economic);
  Scenario c2 = scenario(CaseId::VoltageStress);
  c2.pf_overrides = stressed;
  Scenario c3 = scenario(CaseId::OLD);
  c3.pf_overrides = stressed;
  out.cases[0] = run_case(c1, network, demand);
  out.cases[1] = network.pv_units().empty() ? run_case(c1, network, demand) : run_case(c2, network, demand);
  out.cases[1].case_id = CaseId::VoltageStress;
  out.cases[2] = run_case(c3, network, demand);

  const std::array<const CaseResult*, 3> first_three{&out.cases[0], &out.cases[1], &out.cases[2]};
  out.pooled_ranking = pool_rankings(first_three, opt.weights);
  std::size_t m = opt.top_m;
  if (m > out.pooled_ranking.size()) {
    out.warnings.push_back(
        fmt::format("top-m {} exceeds the {} candidate buses; clamped", m, out.pooled_ranking.size()));
    m = out.pooled_ranking.size();
  }
  Scenario c4 = scenario(CaseId::CapEnhanced);
  if (opt.case4_stressed) c4.pf_overrides = stressed;
  const double b_cap = opt.cap_mvar / network.s_base();
  for (std::size_t k = 0; k < m; ++k) {
    out.capacitor_buses.push_back(out.pooled_ranking[k].bus);
    c4.capacitors.push_back({out.pooled_ranking[k].bus, b_cap});
  }
  out.cases[3] = run_case(c4, network, demand);

  const CaseResult& r4 = out.cases[3];
  if (r4.non_optimal_hours > 0 || r4.load_shed > 0.0) {
    out.capacitors_insufficient = true;
    out.warnings.push_back(fmt::format("capacitors insufficient: Case 4 left {} of {} valid hours unsolved",
                                       r4.non_optimal_hours, r4.valid_hours));
  }

  std::vector<std::pair<std::string, std::vector<SensitivityRecord>>> rankings;
  for (const auto& r : out.cases) rankings.emplace_back(fmt::format("case{}", static_cast<int>(r.case_id)), r.ranking);
  out.rank_table = cross_case_rank_table(rankings);
  for (const auto& r : out.cases) {
    out.table.push_back({r.case_id, r.total_cost, r.load_served, r.load_shed, r.avg_mismatch, r.avg_vmin, r.avg_vmax,
                         r.top_buses(m)});
  }
  return out;
}

}  // namespace gridcap
