// gridcap: time-series AC OPF studies on islanded microgrids.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gridcap/detail/text.hpp"
#include "gridcap/io.hpp"
#include "gridcap/planning.hpp"
#include "gridcap/study.hpp"

namespace fs = std::filesystem;
using namespace gridcap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNonOptimal = 2;

struct RunConfig {
  std::string network;
  std::string demand;
  std::string out;
  double dt = 1.0;
  SolverOptions solver;
  ObjectiveOptions objective;
  double stress_pf = 0.8;
  std::string stress_sign = "lag";
  std::string weights = "0.5,0.5";
  int top_m = 3;
  double cap_mvar = 0.5;
  bool case4_stressed = false;
  std::string aggregation = "mean";
  bool no_warm_start = false;
  unsigned seed = 0;  // reserved; every computation is deterministic
};

std::string version_text() {
  const SolverOptions s;
  const ObjectiveOptions o;
  return fmt::format(
      "gridcap {}\nsolver defaults: feas_tol={} kkt_tol={} comp_tol={} max_iter={} internal_tol={}\n"
      "objective defaults: voll_rate={} $/MWh eps_pg={} eps_loss={}",
      GRIDCAP_VERSION, s.feas_tol, s.kkt_tol, s.comp_tol, s.max_iter, s.internal_tol(), o.voll_rate, o.eps_pg,
      o.eps_loss);
}

Network load_network(const std::string& path) {
  return parse_network(io::read_file(path), path);
}

DemandSeries load_demand(const std::string& path, double dt) {
  return parse_demand_csv(io::read_file(path), dt, path);
}

PowerFactor stress_power_factor(const RunConfig& cfg) {
  const std::string s = detail::upper(cfg.stress_sign);
  if (s != "LAG" && s != "LEAD") throw ModelError(fmt::format("stress sign must be lag or lead, got '{}'", cfg.stress_sign));
  return {cfg.stress_pf, s == "LEAD" ? PfSign::Leading : PfSign::Lagging};
}

ScoreWeights parse_weights(const std::string& text) {
  const auto parts = detail::split(text, ',');
  if (parts.size() != 2) throw ModelError(fmt::format("weights must be 'w_q,w_v', got '{}'", text));
  const auto wq = detail::to_double(detail::trim(parts[0]));
  const auto wv = detail::to_double(detail::trim(parts[1]));
  if (!wq || !wv) throw ModelError(fmt::format("weights must be numbers, got '{}'", text));
  ScoreWeights w{*wq, *wv};
  w.check();
  return w;
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "max") return Aggregation::Max;
  throw ModelError(fmt::format("aggregation must be mean or max, got '{}'", s));
}

/// "3=1200,7=800" -> {bus: value}
std::map<BusId, double> parse_bus_values(const std::string& text, const char* what) {
  std::map<BusId, double> out;
  for (auto item : detail::split(text, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ModelError(fmt::format("{} entry '{}' is not bus=value", what, item));
    const auto bus = detail::to_int(detail::trim(item.substr(0, eq)));
    const auto val = detail::to_double(detail::trim(item.substr(eq + 1)));
    if (!bus || !val) throw ModelError(fmt::format("{} entry '{}' is not bus=value", what, item));
    if (!out.emplace(BusId{static_cast<int>(*bus)}, *val).second)
      throw ModelError(fmt::format("{} lists bus {} twice", what, *bus));
  }
  if (out.empty()) throw ModelError(fmt::format("{} is empty", what));
  return out;
}

int cmd_validate(const RunConfig& cfg) {
  const Network net = load_network(cfg.network);
  std::size_t de_energized = net.bus_count() - net.energized().size();
  fmt::print("{}: {} buses ({} energized), {} branches ({} open), {} generators, {} PV units, {} shunts\n",
             cfg.network, net.bus_count(), net.energized().size(), net.branches().size(), net.open_branch_count(),
             net.generators().size(), net.pv_units().size(), net.shunts().size());
  if (de_energized > 0) fmt::print("note: {} bus(es) not reachable from the slack are left out of the OPF\n", de_energized);
  if (!cfg.demand.empty()) {
    const DemandSeries d = load_demand(cfg.demand, cfg.dt);
    check_demand(net, d);
    fmt::print("{}: {} steps ({} valid), {} demand buses\n", cfg.demand, d.horizon(), d.valid_count(),
               d.buses().size());
  }
  fmt::print("ok\n");
  return kExitOk;
}

int cmd_solve(const RunConfig& cfg, const std::string& case_name, const std::string& caps) {
  const Network net = load_network(cfg.network);
  const DemandSeries d = load_demand(cfg.demand, cfg.dt);
  Scenario sc;
  sc.solver = cfg.solver;
  sc.objective_options = cfg.objective;
  sc.weights = parse_weights(cfg.weights);
  sc.aggregation = parse_aggregation(cfg.aggregation);
  sc.warm_start = !cfg.no_warm_start;
  if (case_name == "economic") {
    sc.case_id = CaseId::Economic;
  } else if (case_name == "stress") {
    sc.case_id = CaseId::VoltageStress;
    sc.pf_overrides = Scenario::uniform_pf(net, stress_power_factor(cfg));
  } else if (case_name == "old") {
    sc.case_id = CaseId::OLD;
    sc.pf_overrides = Scenario::uniform_pf(net, stress_power_factor(cfg));
  } else if (case_name == "cap") {
    sc.case_id = CaseId::CapEnhanced;
    for (const auto& [bus, mvar] : parse_bus_values(caps, "--caps")) sc.capacitors.push_back({bus, mvar / net.s_base()});
    if (cfg.case4_stressed) sc.pf_overrides = Scenario::uniform_pf(net, stress_power_factor(cfg));
  } else {
    throw ModelError(fmt::format("unknown case '{}'", case_name));
  }
  const CaseResult r = run_case(sc, net, d);
  const std::string csv = io::render_table(io::hourly_table(r));
  if (cfg.out.empty() || cfg.out == "-") {
    std::fputs(csv.c_str(), stdout);
  } else {
    io::write_file(cfg.out, csv);
  }
  std::fprintf(stderr, "%zu of %zu valid hours Optimal; cost $%.2f; served %.3f MW; shed %.3f MW\n",
               r.valid_hours - r.non_optimal_hours, r.valid_hours, r.total_cost, r.load_served, r.load_shed);
  return r.non_optimal_hours == 0 ? kExitOk : kExitNonOptimal;
}

int cmd_study(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ModelError("study needs --out <dir>");
  if (cfg.top_m < 1) throw ModelError("--top-m must be at least 1");
  const Network net = load_network(cfg.network);
  const DemandSeries d = load_demand(cfg.demand, cfg.dt);
  StudyOptions opt;
  opt.stress_pf = stress_power_factor(cfg);
  opt.weights = parse_weights(cfg.weights);
  opt.top_m = static_cast<std::size_t>(cfg.top_m);
  opt.cap_mvar = cfg.cap_mvar;
  opt.case4_stressed = cfg.case4_stressed;
  opt.aggregation = parse_aggregation(cfg.aggregation);
  opt.warm_start = !cfg.no_warm_start;
  opt.objective_options = cfg.objective;
  opt.solver = cfg.solver;
  const StudyResult st = run_four_case_study(net, d, opt);
  io::write_study(cfg.out, st, net);
  for (const auto& w : st.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& r : st.table) {
    std::fprintf(stderr, "case %d: cost $%.2f, served %.3f MW, shed %.3f MW, avg mismatch %.3e\n",
                 static_cast<int>(r.case_id), r.total_cost, r.load_served, r.load_shed, r.avg_mismatch);
  }
  return kExitOk;
}

int cmd_plan(const std::string& case3_dir, const std::string& cap_costs, double voll, const std::string& out) {
  const fs::path dir(case3_dir);
  const auto hourly = io::read_hourly(dir / "case3_hourly.csv");
  const auto voll_by_bus = io::voll_cost_from_hourly(hourly, voll);
  std::map<BusId, double> scores;
  if (fs::exists(dir / "case3_sensitivity.csv")) scores = io::mean_scores(io::read_sensitivity(dir / "case3_sensitivity.csv"));
  std::vector<PlanningCandidate> cands;
  for (const auto& [bus, cost] : parse_bus_values(cap_costs, "--cap-cost")) {
    auto it = voll_by_bus.find(bus);
    if (it == voll_by_bus.end())
      throw ModelError(fmt::format("bus {} has no shed column in case3_hourly.csv", to_int(bus)));
    cands.push_back({bus, cost, it->second});
  }
  const PlanningDecision d = plan(cands);
  io::Table t;
  t.header = {"bus_id", "c_cap", "c_voll", "install", "s_score"};
  for (const auto& r : d.rows) {
    auto s = scores.find(r.bus);
    t.rows.push_back({std::to_string(to_int(r.bus)), detail::fmt_num(r.c_cap), detail::fmt_num(r.c_voll),
                      r.install ? "1" : "0", detail::fmt_num(s == scores.end() ? 0.0 : s->second)});
  }
  const std::string csv = io::render_table(t);
  if (out.empty() || out == "-") std::fputs(csv.c_str(), stdout);
  else io::write_file(out, csv);
  std::fprintf(stderr, "planning objective $%.2f; install at %zu of %zu candidate buses\n", d.objective,
               d.installed().size(), d.rows.size());
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  std::fputs(io::report(dir).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-series AC optimal power flow studies for islanded microgrids"};
  app.set_version_flag("--version", version_text());
  app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  app.add_option("--feas-tol,--feas_tol", cfg.solver.feas_tol, "Power-balance tolerance, p.u.")->capture_default_str();
  app.add_option("--kkt-tol,--kkt_tol", cfg.solver.kkt_tol, "Stationarity tolerance (scaled)")->capture_default_str();
  app.add_option("--comp-tol,--comp_tol", cfg.solver.comp_tol, "Complementarity tolerance (scaled)")->capture_default_str();
  app.add_option("--max-iter,--max_iter", cfg.solver.max_iter, "Interior-point iteration cap per hour")->capture_default_str();
  app.add_option("--voll-rate,--voll_rate", cfg.objective.voll_rate, "Value of lost load in the OLD objective, $/MWh")
      ->capture_default_str();
  app.add_option("--eps-pg,--eps_pg", cfg.objective.eps_pg, "Generation regularization weight")->capture_default_str();
  app.add_option("--eps-loss,--eps_loss", cfg.objective.eps_loss, "Loss regularization weight")->capture_default_str();
  app.add_option("--dt", cfg.dt, "Timestep length, hours")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Reserved; results do not depend on it");
  app.add_flag("--verbose", cfg.solver.verbose, "Print interior-point iterations to stderr");

  auto add_inputs = [&](CLI::App* sub, bool demand_required) {
    sub->add_option("--network", cfg.network, "Network file")->required();
    auto* d = sub->add_option("--demand", cfg.demand, "Demand CSV (hour,bus_id,p_mw,q_mvar)");
    if (demand_required) d->required();
  };
  auto add_study_opts = [&](CLI::App* sub) {
    sub->add_option("--stress-pf", cfg.stress_pf, "PV power factor for the stressed cases")->capture_default_str();
    sub->add_option("--stress-sign", cfg.stress_sign, "lag (absorbs Q) or lead (injects Q)")->capture_default_str();
    sub->add_option("--weights", cfg.weights, "Score weights w_q,w_v")->capture_default_str();
    sub->add_option("--aggregation", cfg.aggregation, "Hourly score aggregation: mean or max")->capture_default_str();
    sub->add_flag("--no-warm-start", cfg.no_warm_start, "Solve every hour from a flat start");
    sub->add_flag("--case4-stressed", cfg.case4_stressed, "Run the capacitor case under the stressed power factor");
  };

  auto* validate = app.add_subcommand("validate", "Parse inputs and check model invariants");
  add_inputs(validate, false);

  std::string case_name = "economic", caps;
  auto* solve_cmd = app.add_subcommand("solve", "Solve one case over the horizon and write hourly results");
  add_inputs(solve_cmd, true);
  add_study_opts(solve_cmd);
  solve_cmd->add_option("--case", case_name, "economic, stress, old or cap")->capture_default_str();
  solve_cmd->add_option("--caps", caps, "Capacitors for --case cap: bus=mvar,...");
  solve_cmd->add_option("--out", cfg.out, "Hourly CSV path (stdout if omitted)");

  auto* study = app.add_subcommand("study", "Run the four-case study and write its artifacts");
  add_inputs(study, true);
  add_study_opts(study);
  study->add_option("--top-m", cfg.top_m, "Capacitor sites taken from the score ranking")->capture_default_str();
  study->add_option("--cap-mvar", cfg.cap_mvar, "Rated capacitor size at 1.0 p.u., Mvar")->capture_default_str();
  study->add_option("--out", cfg.out, "Output directory")->required();

  std::string case3_dir, cap_costs, plan_out;
  double voll = 0.0;
  auto* plan_cmd = app.add_subcommand("plan", "Choose capacitor sites against Case 3 lost-load cost");
  plan_cmd->add_option("--case3", case3_dir, "Study directory holding case3_hourly.csv")->required();
  plan_cmd->add_option("--cap-cost", cap_costs, "Capacitor cost per bus: bus=usd,...")->required();
  plan_cmd->add_option("--voll", voll, "Value of lost load, $/MWh")->required();
  plan_cmd->add_option("--out", plan_out, "plan.csv path (stdout if omitted)");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Summarize a study directory");
  report_cmd->add_option("dir", report_dir, "Study directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*validate) return cmd_validate(cfg);
    if (*solve_cmd) return cmd_solve(cfg, case_name, caps);
    if (*study) return cmd_study(cfg);
    if (*plan_cmd) return cmd_plan(case3_dir, cap_costs, voll, plan_out);
    if (*report_cmd) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}
