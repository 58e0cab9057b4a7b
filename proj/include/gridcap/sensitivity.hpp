#pragma once

// Per-bus optimization sensitivities from OPF multipliers, the composite
// placement score, and a finite-difference oracle used to validate them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "gridcap/acopf.hpp"
#include "gridcap/errors.hpp"
#include "gridcap/grid_model.hpp"

namespace gridcap {

struct ScoreWeights {
  double w_q = 0.5;
  double w_v = 0.5;

  void check() const {
    if (!(w_q >= 0.0) || !(w_v >= 0.0))
      throw ModelError(fmt::format("score weights must be nonnegative, got ({}, {})", w_q, w_v));
    if (std::abs(w_q + w_v - 1.0) > 1e-9)
      throw ModelError(fmt::format("score weights must sum to 1, got {}", w_q + w_v));
  }
};

struct SensitivityRecord {
  BusId bus{};
  double os_q = 0.0;     // $/Mvar, dL/dQ_D
  double os_v = 0.0;     // $/p.u., dL/dV_max
  double s_score = 0.0;  // w_q |os_q| + w_v |os_v|
  int rank = 0;          // 1-based after composite_score
  bool reliable = true;  // false when taken from a non-Optimal solve
};

/// os_q = -lambda_q (1 - s) / s_base and os_v = -mu_vmax for every energized bus.
inline std::vector<SensitivityRecord> extract(const OpfSolution& sol) {
  if (!sol.has_multipliers || sol.lambda_q.size() != static_cast<Eigen::Index>(sol.buses.size()) ||
      sol.mu_vmax.size() != static_cast<Eigen::Index>(sol.buses.size()))
    throw ModelError("solution carries no interior-point multipliers");
  std::vector<SensitivityRecord> out;
  out.reserve(sol.buses.size());
  const bool ok = sol.status == OpfStatus::Optimal;
  for (std::size_t k = 0; k < sol.buses.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double served = sol.shed.size() == sol.lambda_q.size() ? 1.0 - sol.shed(i) : 1.0;
    SensitivityRecord r;
    r.bus = sol.buses[k];
    r.os_q = -sol.lambda_q(i) * served / sol.s_base;
    r.os_v = -sol.mu_vmax(i);
    r.reliable = ok;
    out.push_back(r);
  }
  return out;
}

/// Scores and ranks records: descending score, ties by ascending bus id.
inline std::vector<SensitivityRecord> composite_score(std::vector<SensitivityRecord> records,
                                                      const ScoreWeights& weights) {
  weights.check();
  for (auto& r : records) r.s_score = weights.w_q * std::abs(r.os_q) + weights.w_v * std::abs(r.os_v);
  std::stable_sort(records.begin(), records.end(), [](const SensitivityRecord& a, const SensitivityRecord& b) {
    if (a.s_score != b.s_score) return a.s_score > b.s_score;
    return to_int(a.bus) < to_int(b.bus);
  });
  for (std::size_t k = 0; k < records.size(); ++k) records[k].rank = static_cast<int>(k) + 1;
  return records;
}

enum class Aggregation { Mean, Max };

/// Combines hourly records over the hours flagged reliable. Mean mode
/// averages magnitudes (so s_score stays the weighted sum of the stored
/// os_q, os_v); Max mode keeps each bus's highest-scoring hour. Buses seen
/// only in unreliable hours get a zero score. Returns the ranked list and the
/// number of hours used.
inline std::pair<std::vector<SensitivityRecord>, std::size_t> aggregate_hours(
    const std::vector<std::vector<SensitivityRecord>>& hourly, const ScoreWeights& weights,
    Aggregation mode = Aggregation::Mean) {
  weights.check();
  struct Acc {
    double q = 0.0, v = 0.0;
    double best = -1.0, best_q = 0.0, best_v = 0.0;
  };
  std::map<BusId, Acc> acc;
  std::size_t used = 0;
  for (const auto& hour : hourly) {
    if (hour.empty()) continue;
    const bool reliable = std::all_of(hour.begin(), hour.end(), [](const auto& r) { return r.reliable; });
    for (const auto& r : hour) acc.try_emplace(r.bus);
    if (!reliable) continue;
    ++used;
    for (const auto& r : hour) {
      Acc& a = acc[r.bus];
      a.q += std::abs(r.os_q);
      a.v += std::abs(r.os_v);
      const double s = weights.w_q * std::abs(r.os_q) + weights.w_v * std::abs(r.os_v);
      if (s > a.best) {
        a.best = s;
        a.best_q = std::abs(r.os_q);
        a.best_v = std::abs(r.os_v);
      }
    }
  }
  std::vector<SensitivityRecord> out;
  for (const auto& [bus, a] : acc) {
    SensitivityRecord r;
    r.bus = bus;
    if (used > 0) {
      if (mode == Aggregation::Mean) {
        r.os_q = a.q / static_cast<double>(used);
        r.os_v = a.v / static_cast<double>(used);
      } else {
        r.os_q = a.best_q;
        r.os_v = a.best_v;
      }
    }
    r.reliable = used > 0;
    out.push_back(r);
  }
  return {composite_score(std::move(out), weights), used};
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

enum class SensitivityQuantity { Qd, Vmax };

struct FdResult {
  std::optional<double> value;  // same units as extract(): $/Mvar or $/p.u.
  bool active_set_changed = false;
  std::string note;

  bool available() const { return value.has_value(); }
  bool reliable() const { return value.has_value() && !active_set_changed; }
};

namespace detail {

/// Bound-activity signature over V, Pg, Qg and shed bounds.
inline std::vector<int> active_set(const OpfSolution& s, const OpfProblem& p) {
  const Network& net = *p.network;
  const double tol = 1e-6;
  std::vector<int> sig;
  const auto& energized = net.energized();
  for (std::size_t k = 0; k < energized.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(energized[k]);
    const double v = s.v(static_cast<Eigen::Index>(k));
    sig.push_back((v - p.v_min(i) < tol ? 1 : 0) | (p.v_max(i) - v < tol ? 2 : 0));
    const double sh = s.shed(static_cast<Eigen::Index>(k));
    sig.push_back((sh < tol ? 1 : 0) | (1.0 - sh < tol ? 2 : 0));
  }
  for (std::size_t g = 0; g < net.generators().size(); ++g) {
    const auto& gen = net.generators()[g];
    const auto gi = static_cast<Eigen::Index>(g);
    const double sb = net.s_base();
    sig.push_back(((s.p_g(gi) - gen.p_min) / sb < tol ? 1 : 0) | ((gen.p_max - s.p_g(gi)) / sb < tol ? 2 : 0));
    sig.push_back(((s.q_g(gi) - gen.q_min) / sb < tol ? 1 : 0) | ((gen.q_max - s.q_g(gi)) / sb < tol ? 2 : 0));
  }
  return sig;
}

}  // namespace detail

/// Central difference of the optimal (minimized) objective with respect to
/// the bus reactive demand (eps in p.u.) or the bus voltage upper bound.
inline FdResult fd_oracle(const OpfProblem& problem, BusId bus, SensitivityQuantity quantity, double eps = 1e-3) {
  if (!(eps > 0.0)) throw ModelError("finite-difference step must be positive");
  OpfProblem base = problem;
  base.solver.feas_tol = std::min(base.solver.feas_tol, 1e-8);
  base.solver.kkt_tol = std::min(base.solver.kkt_tol, 1e-8);
  base.solver.comp_tol = std::min(base.solver.comp_tol, 1e-8);
  const auto i = static_cast<Eigen::Index>(base.network->index_of(bus));
  FdResult out;
  const OpfSolution s0 = solve(base);
  if (s0.status != OpfStatus::Optimal) {
    out.note = "base solve not Optimal";
    return out;
  }
  auto perturbed = [&](double sign) {
    OpfProblem p = base;
    if (quantity == SensitivityQuantity::Qd) p.q_d(i) += sign * eps;
    else p.v_max(i) += sign * eps;
    return std::pair{solve(p), p};
  };
  const auto [plus, pp] = perturbed(+1.0);
  const auto [minus, pm] = perturbed(-1.0);
  if (plus.status != OpfStatus::Optimal || minus.status != OpfStatus::Optimal) {
    out.note = "perturbed solve not Optimal";
    return out;
  }
  double d = (plus.augmented_objective - minus.augmented_objective) / (2.0 * eps);
  if (quantity == SensitivityQuantity::Qd) d /= base.network->s_base();
  out.value = d;
  const auto a0 = detail::active_set(s0, base);
  out.active_set_changed = a0 != detail::active_set(plus, pp) || a0 != detail::active_set(minus, pm);
  if (out.active_set_changed) out.note = "active set changed across the perturbation";
  return out;
}

// ---------------------------------------------------------------------------
// Cross-case agreement
// ---------------------------------------------------------------------------

struct RankTable {
  std::vector<std::string> cases;
  std::vector<BusId> buses;                 // ascending id
  std::vector<std::vector<int>> ranks;      // ranks[bus][case]
  std::vector<bool> high_confidence;        // identical rank in every case
  std::vector<BusId> stable_top;            // longest common ranking prefix

  std::optional<std::size_t> row_of(BusId bus) const {
    auto it = std::find(buses.begin(), buses.end(), bus);
    if (it == buses.end()) return std::nullopt;
    return static_cast<std::size_t>(it - buses.begin());
  }
};

inline RankTable cross_case_rank_table(
    const std::vector<std::pair<std::string, std::vector<SensitivityRecord>>>& per_case) {
  if (per_case.size() < 2) throw ModelError("cross-case comparison needs at least two rankings");
  std::set<BusId> ref;
  for (const auto& r : per_case.front().second) ref.insert(r.bus);
  for (const auto& [name, recs] : per_case) {
    std::set<BusId> s;
    for (const auto& r : recs) s.insert(r.bus);
    if (s != ref || s.size() != recs.size())
      throw ModelError(fmt::format("case '{}' ranks a different bus set", name));
  }
  RankTable t;
  t.buses.assign(ref.begin(), ref.end());
  for (const auto& [name, recs] : per_case) t.cases.push_back(name);
  t.ranks.assign(t.buses.size(), std::vector<int>(per_case.size(), 0));
  std::vector<std::vector<BusId>> order(per_case.size());
  for (std::size_t c = 0; c < per_case.size(); ++c) {
    auto recs = per_case[c].second;
    std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
    for (const auto& r : recs) {
      t.ranks[*t.row_of(r.bus)][c] = r.rank;
      order[c].push_back(r.bus);
    }
  }
  for (const auto& row : t.ranks)
    t.high_confidence.push_back(std::all_of(row.begin(), row.end(), [&](int r) { return r == row.front(); }));
  for (std::size_t k = 0; k < order.front().size(); ++k) {
    const BusId b = order.front()[k];
    if (!std::all_of(order.begin(), order.end(), [&](const auto& o) { return o[k] == b; })) break;
    t.stable_top.push_back(b);
  }
  return t;
}

}  // namespace gridcap
