#pragma once

// Network data model, line-oriented network file format, demand CSV,
// per-unit conversion and bus admittance matrix.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "gridcap/detail/text.hpp"
#include "gridcap/errors.hpp"

namespace gridcap {

enum class BusId : int {};

inline constexpr int to_int(BusId id) noexcept { return static_cast<int>(id); }

enum class BusKind { Slack, PV, PQ };
enum class BranchStatus { Closed, Open };
enum class PfSign { Leading, Lagging };

struct Bus {
  BusId id{};
  BusKind kind = BusKind::PQ;
  double v_min = 0.95;
  double v_max = 1.05;
  double base_kv = 12.47;

  bool operator==(const Bus&) const = default;
};

/// Series RX with total line charging split half per end.
struct Branch {
  BusId from{};
  BusId to{};
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;
  BranchStatus status = BranchStatus::Closed;

  bool operator==(const Branch&) const = default;
};

/// C(p) = c2 p^2 + c1 p + c0 with p in MW, result in $/h.
struct QuadraticCost {
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;

  double operator()(double p_mw) const noexcept { return (c2 * p_mw + c1) * p_mw + c0; }
  double marginal(double p_mw) const noexcept { return 2.0 * c2 * p_mw + c1; }

  bool operator==(const QuadraticCost&) const = default;
};

struct Generator {
  BusId bus{};
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  QuadraticCost cost;

  bool operator==(const Generator&) const = default;
};

struct PowerFactor {
  double value = 1.0;
  PfSign sign = PfSign::Lagging;

  bool operator==(const PowerFactor&) const = default;
};

/// Grid-following PV inverter, modeled as a negative PQ load.
struct PvUnit {
  BusId bus{};
  std::vector<double> p_profile;  // MW per timestep
  PowerFactor pf_nominal;

  bool operator==(const PvUnit&) const = default;
};

/// Q injected = b_cap * V^2 (p.u. on the system base).
struct ShuntCapacitor {
  BusId bus{};
  double b_cap = 0.0;

  bool operator==(const ShuntCapacitor&) const = default;
};

/// Raw, unvalidated network description.
struct NetworkData {
  std::string name;
  double s_base = 10.0;  // MVA
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<PvUnit> pv_units;
  std::vector<ShuntCapacitor> shunts;

  bool operator==(const NetworkData&) const = default;
};

namespace detail {

inline std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

inline std::optional<std::size_t> bus_position(const NetworkData& d, BusId id) {
  for (std::size_t i = 0; i < d.buses.size(); ++i) {
    if (d.buses[i].id == id) return i;
  }
  return std::nullopt;
}

}  // namespace detail

/// Number of connected components of the Closed-branch graph over all buses.
/// Branches that reference unknown buses are ignored.
inline std::size_t closed_components(const NetworkData& d) {
  std::vector<std::size_t> parent(d.buses.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::size_t components = d.buses.size();
  for (const auto& br : d.branches) {
    if (br.status != BranchStatus::Closed) continue;
    auto a = detail::bus_position(d, br.from);
    auto b = detail::bus_position(d, br.to);
    if (!a || !b) continue;
    auto ra = detail::find_root(parent, *a);
    auto rb = detail::find_root(parent, *b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components;
}

/// Validated, immutable network. Buses unreachable from the slack through
/// Closed branches are allowed only when they carry no closed branch and no
/// device; they are reported as de-energized and excluded from the OPF.
class Network {
 public:
  explicit Network(NetworkData data) : data_(std::move(data)) { validate(); }

  const NetworkData& data() const noexcept { return data_; }
  const std::string& name() const noexcept { return data_.name; }
  double s_base() const noexcept { return data_.s_base; }
  std::span<const Bus> buses() const noexcept { return data_.buses; }
  std::span<const Branch> branches() const noexcept { return data_.branches; }
  std::span<const Generator> generators() const noexcept { return data_.generators; }
  std::span<const PvUnit> pv_units() const noexcept { return data_.pv_units; }
  std::span<const ShuntCapacitor> shunts() const noexcept { return data_.shunts; }

  std::size_t bus_count() const noexcept { return data_.buses.size(); }
  std::size_t slack_index() const noexcept { return slack_; }

  bool has_bus(BusId id) const { return index_.contains(id); }

  std::size_t index_of(BusId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ModelError(fmt::format("unknown bus {}", to_int(id)));
    return it->second;
  }

  /// Bus indices (into buses()) reachable from the slack, in file order.
  const std::vector<std::size_t>& energized() const noexcept { return energized_; }
  bool is_energized(std::size_t bus_index) const { return energized_mask_.at(bus_index); }

  std::size_t open_branch_count() const {
    return static_cast<std::size_t>(std::count_if(
        data_.branches.begin(), data_.branches.end(),
        [](const Branch& b) { return b.status == BranchStatus::Open; }));
  }

  /// Copy with additional shunt capacitors appended.
  Network with_shunts(std::span<const ShuntCapacitor> extra) const {
    NetworkData d = data_;
    d.shunts.insert(d.shunts.end(), extra.begin(), extra.end());
    return Network(std::move(d));
  }

  bool operator==(const Network& other) const { return data_ == other.data_; }

 private:
  void validate();

  NetworkData data_;
  std::map<BusId, std::size_t> index_;
  std::vector<std::size_t> energized_;
  std::vector<bool> energized_mask_;
  std::size_t slack_ = 0;
};

inline void Network::validate() {
  const auto& d = data_;
  if (!(d.s_base > 0.0) || !std::isfinite(d.s_base))
    throw ModelError(fmt::format("s_base must be positive, got {}", d.s_base));
  if (d.buses.empty()) throw ModelError("network has no buses");

  std::size_t slack_count = 0;
  for (std::size_t i = 0; i < d.buses.size(); ++i) {
    const Bus& b = d.buses[i];
    if (to_int(b.id) <= 0) throw ModelError(fmt::format("bus id must be positive, got {}", to_int(b.id)));
    if (!index_.emplace(b.id, i).second)
      throw ModelError(fmt::format("duplicate bus {}", to_int(b.id)));
    if (!(b.v_min > 0.0 && b.v_min < b.v_max) || !std::isfinite(b.v_max))
      throw ModelError(fmt::format("bus {}: require 0 < v_min < v_max, got [{}, {}]", to_int(b.id),
                                   b.v_min, b.v_max));
    if (b.kind == BusKind::Slack) {
      ++slack_count;
      slack_ = i;
    }
  }
  if (slack_count == 0) throw ModelError("no slack bus");
  if (slack_count > 1) throw ModelError(fmt::format("{} slack buses; exactly one required", slack_count));

  auto require_bus = [&](BusId id, std::string_view what) {
    if (!index_.contains(id))
      throw ModelError(fmt::format("{} references undeclared bus {}", what, to_int(id)));
  };

  for (const auto& br : d.branches) {
    require_bus(br.from, "branch");
    require_bus(br.to, "branch");
    if (br.from == br.to) throw ModelError(fmt::format("branch {}-{} is a self loop", to_int(br.from), to_int(br.to)));
    if (!(br.r >= 0.0)) throw ModelError(fmt::format("branch {}-{}: negative resistance", to_int(br.from), to_int(br.to)));
    if (br.x == 0.0 || !std::isfinite(br.x))
      throw ModelError(fmt::format("branch {}-{}: zero reactance", to_int(br.from), to_int(br.to)));
    if (!std::isfinite(br.b_sh)) throw ModelError("branch charging must be finite");
  }
  for (const auto& g : d.generators) {
    require_bus(g.bus, "generator");
    if (!(g.p_min <= g.p_max)) throw ModelError(fmt::format("generator at bus {}: p_min > p_max", to_int(g.bus)));
    if (!(g.q_min <= g.q_max)) throw ModelError(fmt::format("generator at bus {}: q_min > q_max", to_int(g.bus)));
    if (!(g.cost.c2 >= 0.0)) throw ModelError(fmt::format("generator at bus {}: nonconvex cost", to_int(g.bus)));
  }
  for (const auto& pv : d.pv_units) {
    require_bus(pv.bus, "PV unit");
    if (!(pv.pf_nominal.value > 0.0 && pv.pf_nominal.value <= 1.0))
      throw ModelError(fmt::format("PV unit at bus {}: power factor {} outside (0, 1]", to_int(pv.bus),
                                   pv.pf_nominal.value));
    for (double p : pv.p_profile) {
      if (!std::isfinite(p) || p < 0.0)
        throw ModelError(fmt::format("PV unit at bus {}: profile values must be finite and >= 0", to_int(pv.bus)));
    }
  }
  for (const auto& sh : d.shunts) {
    require_bus(sh.bus, "shunt");
    if (!(sh.b_cap > 0.0)) throw ModelError(fmt::format("shunt at bus {}: b_cap must be > 0", to_int(sh.bus)));
  }

  // Reachability from the slack through Closed branches.
  const std::size_t n = d.buses.size();
  std::vector<std::vector<std::size_t>> adj(n);
  std::vector<bool> has_closed(n, false);
  for (const auto& br : d.branches) {
    if (br.status != BranchStatus::Closed) continue;
    auto a = index_.at(br.from);
    auto b = index_.at(br.to);
    adj[a].push_back(b);
    adj[b].push_back(a);
    has_closed[a] = has_closed[b] = true;
  }
  energized_mask_.assign(n, false);
  std::vector<std::size_t> stack{slack_};
  energized_mask_[slack_] = true;
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    for (auto j : adj[i]) {
      if (!energized_mask_[j]) {
        energized_mask_[j] = true;
        stack.push_back(j);
      }
    }
  }
  std::vector<bool> has_device(n, false);
  for (const auto& g : d.generators) has_device[index_.at(g.bus)] = true;
  for (const auto& pv : d.pv_units) has_device[index_.at(pv.bus)] = true;
  for (const auto& sh : d.shunts) has_device[index_.at(sh.bus)] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (energized_mask_[i]) {
      energized_.push_back(i);
    } else if (has_closed[i] || has_device[i]) {
      throw ModelError(fmt::format("bus {} forms a second island; only single-island networks are supported",
                                   to_int(d.buses[i].id)));
    }
  }
  bool any_gen = std::any_of(d.generators.begin(), d.generators.end(),
                             [&](const Generator& g) { return energized_mask_[index_.at(g.bus)]; });
  if (!any_gen) throw ModelError("no dispatchable generator on the energized island");
}

// ---------------------------------------------------------------------------
// Network file
//
//   # comment                          (also allowed after a record)
//   NAME <text>
//   BASE <s_base_mva>
//   BUS
//   <id> <SLACK|PV|PQ> <v_min> <v_max> <base_kv>
//   BRANCH
//   <from> <to> <r> <x> <b_sh> <CLOSED|OPEN>
//   GEN
//   <bus> <p_min> <p_max> <q_min> <q_max> <c2> <c1> <c0>
//   PV
//   <bus> <pf> <LEAD|LAG> <p_1> <p_2> ... <p_T>
//   SHUNT
//   <bus> <b_cap>
// ---------------------------------------------------------------------------

namespace detail {

enum class Section { None, Bus, Branch, Gen, Pv, Shunt };

class LineReader {
 public:
  LineReader(std::string source, std::size_t line) : source_(std::move(source)), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_, what); }

  double number(std::string_view tok, std::string_view field) const {
    auto v = to_double(tok);
    if (!v) fail(fmt::format("expected number for {}, got '{}'", field, tok));
    return *v;
  }

  BusId bus(std::string_view tok) const {
    auto v = to_int(tok);
    if (!v || *v <= 0 || *v > std::numeric_limits<int>::max())
      fail(fmt::format("expected positive bus id, got '{}'", tok));
    return BusId{static_cast<int>(*v)};
  }

  void arity(const std::vector<std::string_view>& toks, std::size_t n, std::string_view rec) const {
    if (toks.size() != n) fail(fmt::format("{} record needs {} fields, got {}", rec, n, toks.size()));
  }

 private:
  std::string source_;
  std::size_t line_;
};

}  // namespace detail

/// Parse without validation; syntax errors carry line numbers.
inline NetworkData parse_network_data(std::string_view text, const std::string& source = "") {
  using detail::Section;
  NetworkData d;
  Section section = Section::None;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) {
      if (eol == text.size()) break;
      continue;
    }
    detail::LineReader rd(source, line_no);
    auto toks = detail::split_ws(line);
    const std::string head = detail::upper(toks[0]);

    if (head == "NAME") {
      d.name = std::string(detail::trim(line.substr(toks[0].size())));
      continue;
    }
    if (head == "BASE") {
      rd.arity(toks, 2, "BASE");
      d.s_base = rd.number(toks[1], "s_base");
      continue;
    }
    if (toks.size() == 1) {
      if (head == "BUS") section = Section::Bus;
      else if (head == "BRANCH") section = Section::Branch;
      else if (head == "GEN") section = Section::Gen;
      else if (head == "PV") section = Section::Pv;
      else if (head == "SHUNT") section = Section::Shunt;
      else rd.fail(fmt::format("unknown section '{}'", toks[0]));
      continue;
    }

    switch (section) {
      case Section::None:
        rd.fail("record before any section header");
      case Section::Bus: {
        rd.arity(toks, 5, "BUS");
        Bus b;
        b.id = rd.bus(toks[0]);
        const std::string kind = detail::upper(toks[1]);
        if (kind == "SLACK") b.kind = BusKind::Slack;
        else if (kind == "PV") b.kind = BusKind::PV;
        else if (kind == "PQ") b.kind = BusKind::PQ;
        else rd.fail(fmt::format("unknown bus kind '{}'", toks[1]));
        b.v_min = rd.number(toks[2], "v_min");
        b.v_max = rd.number(toks[3], "v_max");
        b.base_kv = rd.number(toks[4], "base_kv");
        d.buses.push_back(b);
        break;
      }
      case Section::Branch: {
        rd.arity(toks, 6, "BRANCH");
        Branch br;
        br.from = rd.bus(toks[0]);
        br.to = rd.bus(toks[1]);
        br.r = rd.number(toks[2], "r");
        br.x = rd.number(toks[3], "x");
        br.b_sh = rd.number(toks[4], "b_sh");
        const std::string st = detail::upper(toks[5]);
        if (st == "CLOSED") br.status = BranchStatus::Closed;
        else if (st == "OPEN") br.status = BranchStatus::Open;
        else rd.fail(fmt::format("unknown branch status '{}'", toks[5]));
        d.branches.push_back(br);
        break;
      }
      case Section::Gen: {
        rd.arity(toks, 8, "GEN");
        Generator g;
        g.bus = rd.bus(toks[0]);
        g.p_min = rd.number(toks[1], "p_min");
        g.p_max = rd.number(toks[2], "p_max");
        g.q_min = rd.number(toks[3], "q_min");
        g.q_max = rd.number(toks[4], "q_max");
        g.cost = {rd.number(toks[5], "c2"), rd.number(toks[6], "c1"), rd.number(toks[7], "c0")};
        d.generators.push_back(g);
        break;
      }
      case Section::Pv: {
        if (toks.size() < 3) rd.fail("PV record needs at least bus, pf and sign");
        PvUnit pv;
        pv.bus = rd.bus(toks[0]);
        pv.pf_nominal.value = rd.number(toks[1], "pf");
        const std::string sign = detail::upper(toks[2]);
        if (sign == "LEAD") pv.pf_nominal.sign = PfSign::Leading;
        else if (sign == "LAG") pv.pf_nominal.sign = PfSign::Lagging;
        else rd.fail(fmt::format("PV sign must be LEAD or LAG, got '{}'", toks[2]));
        for (std::size_t k = 3; k < toks.size(); ++k) pv.p_profile.push_back(rd.number(toks[k], "p_profile"));
        d.pv_units.push_back(std::move(pv));
        break;
      }
      case Section::Shunt: {
        rd.arity(toks, 2, "SHUNT");
        d.shunts.push_back({rd.bus(toks[0]), rd.number(toks[1], "b_cap")});
        break;
      }
    }
    if (eol == text.size()) break;
  }
  return d;
}

inline Network parse_network(std::string_view text, const std::string& source = "") {
  return Network(parse_network_data(text, source));
}

inline std::string serialize_network(const NetworkData& d) {
  using detail::fmt_num;
  std::string out;
  if (!d.name.empty()) out += "NAME " + d.name + "\n";
  out += "BASE " + fmt_num(d.s_base) + "\n";
  out += "BUS\n";
  for (const auto& b : d.buses) {
    const char* kind = b.kind == BusKind::Slack ? "SLACK" : b.kind == BusKind::PV ? "PV" : "PQ";
    out += fmt::format("{} {} {} {} {}\n", to_int(b.id), kind, fmt_num(b.v_min), fmt_num(b.v_max),
                       fmt_num(b.base_kv));
  }
  out += "BRANCH\n";
  for (const auto& br : d.branches) {
    out += fmt::format("{} {} {} {} {} {}\n", to_int(br.from), to_int(br.to), fmt_num(br.r), fmt_num(br.x),
                       fmt_num(br.b_sh), br.status == BranchStatus::Closed ? "CLOSED" : "OPEN");
  }
  out += "GEN\n";
  for (const auto& g : d.generators) {
    out += fmt::format("{} {} {} {} {} {} {} {}\n", to_int(g.bus), fmt_num(g.p_min), fmt_num(g.p_max),
                       fmt_num(g.q_min), fmt_num(g.q_max), fmt_num(g.cost.c2), fmt_num(g.cost.c1),
                       fmt_num(g.cost.c0));
  }
  out += "PV\n";
  for (const auto& pv : d.pv_units) {
    out += fmt::format("{} {} {}", to_int(pv.bus), fmt_num(pv.pf_nominal.value),
                       pv.pf_nominal.sign == PfSign::Leading ? "LEAD" : "LAG");
    for (double p : pv.p_profile) out += " " + fmt_num(p);
    out += "\n";
  }
  out += "SHUNT\n";
  for (const auto& sh : d.shunts) out += fmt::format("{} {}\n", to_int(sh.bus), fmt_num(sh.b_cap));
  return out;
}

inline std::string serialize_network(const Network& net) { return serialize_network(net.data()); }

// ---------------------------------------------------------------------------
// Demand series
// ---------------------------------------------------------------------------

/// Per-bus, per-timestep demand in MW / Mvar. Hours holding a non-finite
/// value in the source file are kept but flagged invalid.
class DemandSeries {
 public:
  DemandSeries(std::vector<BusId> buses, Eigen::MatrixXd p_mw, Eigen::MatrixXd q_mvar, double dt_h,
               std::vector<bool> valid, int first_hour = 0)
      : buses_(std::move(buses)),
        p_(std::move(p_mw)),
        q_(std::move(q_mvar)),
        dt_(dt_h),
        valid_(std::move(valid)),
        first_hour_(first_hour) {
    if (p_.rows() < 1) throw ModelError("demand horizon must be at least one step");
    if (p_.rows() != q_.rows() || p_.cols() != q_.cols() ||
        static_cast<std::size_t>(p_.cols()) != buses_.size() ||
        valid_.size() != static_cast<std::size_t>(p_.rows()))
      throw ModelError("demand arrays have inconsistent shapes");
    if (!(dt_ > 0.0)) throw ModelError("demand dt must be positive");
    for (Eigen::Index t = 0; t < p_.rows(); ++t) {
      if (!valid_[static_cast<std::size_t>(t)]) continue;
      for (Eigen::Index k = 0; k < p_.cols(); ++k) {
        if (!std::isfinite(p_(t, k)) || !std::isfinite(q_(t, k)))
          throw ModelError("non-finite demand in an hour flagged valid");
        if (p_(t, k) < 0.0)
          throw ModelError(fmt::format("negative demand at bus {}", to_int(buses_[static_cast<std::size_t>(k)])));
      }
    }
  }

  std::size_t horizon() const noexcept { return static_cast<std::size_t>(p_.rows()); }
  double dt() const noexcept { return dt_; }
  int first_hour() const noexcept { return first_hour_; }
  int hour_label(std::size_t t) const noexcept { return first_hour_ + static_cast<int>(t); }
  const std::vector<BusId>& buses() const noexcept { return buses_; }
  const Eigen::MatrixXd& p_mw() const noexcept { return p_; }
  const Eigen::MatrixXd& q_mvar() const noexcept { return q_; }
  bool is_valid(std::size_t t) const { return valid_.at(t); }
  const std::vector<bool>& valid() const noexcept { return valid_; }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), true));
  }

  double p(std::size_t t, BusId bus) const { return lookup(p_, t, bus); }
  double q(std::size_t t, BusId bus) const { return lookup(q_, t, bus); }

 private:
  double lookup(const Eigen::MatrixXd& m, std::size_t t, BusId bus) const {
    auto it = std::find(buses_.begin(), buses_.end(), bus);
    if (it == buses_.end()) return 0.0;
    return m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(it - buses_.begin()));
  }

  std::vector<BusId> buses_;
  Eigen::MatrixXd p_;
  Eigen::MatrixXd q_;
  double dt_;
  std::vector<bool> valid_;
  int first_hour_;
};

/// CSV with header `hour,bus_id,p_mw,q_mvar`; absent (hour, bus) pairs are 0.
inline DemandSeries parse_demand_csv(std::string_view text, double dt_h = 1.0, const std::string& source = "") {
  struct Row {
    long long hour;
    BusId bus;
    double p, q;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto cols = detail::split(line, ',');
    if (!header_seen) {
      if (cols.size() != 4 || cols[0] != "hour" || cols[1] != "bus_id" || cols[2] != "p_mw" || cols[3] != "q_mvar")
        throw ParseError(source, line_no, "expected header 'hour,bus_id,p_mw,q_mvar'");
      header_seen = true;
      continue;
    }
    if (cols.size() != 4) throw ParseError(source, line_no, fmt::format("expected 4 columns, got {}", cols.size()));
    auto hour = detail::to_int(cols[0]);
    auto bus = detail::to_int(cols[1]);
    auto p = detail::to_double(cols[2]);
    auto q = detail::to_double(cols[3]);
    if (!hour || *hour < 0) throw ParseError(source, line_no, fmt::format("bad hour '{}'", cols[0]));
    if (!bus || *bus <= 0) throw ParseError(source, line_no, fmt::format("bad bus id '{}'", cols[1]));
    if (!p) throw ParseError(source, line_no, fmt::format("bad p_mw '{}'", cols[2]));
    if (!q) throw ParseError(source, line_no, fmt::format("bad q_mvar '{}'", cols[3]));
    if (std::isfinite(*p) && *p < 0.0) throw ParseError(source, line_no, "negative p_mw");
    rows.push_back({*hour, BusId{static_cast<int>(*bus)}, *p, *q, line_no});
  }
  if (!header_seen) throw ParseError(source, 0, "empty demand file");
  if (rows.empty()) throw ParseError(source, 0, "demand file has no records");

  long long h0 = rows.front().hour, h1 = rows.front().hour;
  std::vector<BusId> buses;
  for (const auto& r : rows) {
    h0 = std::min(h0, r.hour);
    h1 = std::max(h1, r.hour);
    if (std::find(buses.begin(), buses.end(), r.bus) == buses.end()) buses.push_back(r.bus);
  }
  std::sort(buses.begin(), buses.end());
  const auto T = static_cast<Eigen::Index>(h1 - h0 + 1);
  const auto N = static_cast<Eigen::Index>(buses.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(T, N);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(T, N);
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(T, N);
  std::vector<bool> valid(static_cast<std::size_t>(T), true);
  for (const auto& r : rows) {
    const auto t = static_cast<Eigen::Index>(r.hour - h0);
    const auto k = static_cast<Eigen::Index>(std::lower_bound(buses.begin(), buses.end(), r.bus) - buses.begin());
    if (seen(t, k)) throw ParseError(source, r.line, fmt::format("duplicate record for hour {} bus {}", r.hour, to_int(r.bus)));
    seen(t, k) = 1;
    p(t, k) = r.p;
    q(t, k) = r.q;
    if (!std::isfinite(r.p) || !std::isfinite(r.q)) valid[static_cast<std::size_t>(t)] = false;
  }
  return DemandSeries(std::move(buses), std::move(p), std::move(q), dt_h, std::move(valid), static_cast<int>(h0));
}

inline std::string write_demand_csv(const DemandSeries& d) {
  std::string out = "hour,bus_id,p_mw,q_mvar\n";
  for (std::size_t t = 0; t < d.horizon(); ++t) {
    for (std::size_t k = 0; k < d.buses().size(); ++k) {
      const auto ti = static_cast<Eigen::Index>(t);
      const auto ki = static_cast<Eigen::Index>(k);
      out += fmt::format("{},{},{},{}\n", d.hour_label(t), to_int(d.buses()[k]), detail::fmt_num(d.p_mw()(ti, ki)),
                         detail::fmt_num(d.q_mvar()(ti, ki)));
    }
  }
  return out;
}

/// Demand must reference known, energized buses and PV profiles must cover the horizon.
inline void check_demand(const Network& net, const DemandSeries& demand) {
  for (std::size_t k = 0; k < demand.buses().size(); ++k) {
    const BusId id = demand.buses()[k];
    if (!net.has_bus(id)) throw ModelError(fmt::format("demand references undeclared bus {}", to_int(id)));
    if (!net.is_energized(net.index_of(id))) {
      const auto col = demand.p_mw().col(static_cast<Eigen::Index>(k));
      const auto qcol = demand.q_mvar().col(static_cast<Eigen::Index>(k));
      for (Eigen::Index t = 0; t < col.size(); ++t) {
        if (std::isfinite(col(t)) && (col(t) != 0.0 || qcol(t) != 0.0))
          throw ModelError(fmt::format("demand at de-energized bus {}", to_int(id)));
      }
    }
  }
  for (const auto& pv : net.pv_units()) {
    if (pv.p_profile.size() < demand.horizon())
      throw ModelError(fmt::format("PV profile at bus {} has {} steps, demand horizon is {}", to_int(pv.bus),
                                   pv.p_profile.size(), demand.horizon()));
  }
}

// ---------------------------------------------------------------------------
// Per-unit conversion
// ---------------------------------------------------------------------------

inline double to_pu(double value, double s_base) {
  if (!(s_base > 0.0)) throw ModelError(fmt::format("s_base must be positive, got {}", s_base));
  return value / s_base;
}

inline double from_pu(double value_pu, double s_base) {
  if (!(s_base > 0.0)) throw ModelError(fmt::format("s_base must be positive, got {}", s_base));
  return value_pu * s_base;
}

/// Demand and PV injection on the system base; rows are timesteps, columns
/// follow the network's bus order.
struct PerUnitSeries {
  double s_base = 1.0;
  double dt = 1.0;
  int first_hour = 0;
  std::vector<BusId> buses;
  std::vector<bool> valid;
  Eigen::MatrixXd p_d;
  Eigen::MatrixXd q_d;
};

inline PerUnitSeries to_per_unit(const Network& net, const DemandSeries& demand) {
  check_demand(net, demand);
  PerUnitSeries out;
  out.s_base = net.s_base();
  out.dt = demand.dt();
  out.first_hour = demand.first_hour();
  out.valid = demand.valid();
  const auto T = static_cast<Eigen::Index>(demand.horizon());
  const auto N = static_cast<Eigen::Index>(net.bus_count());
  out.p_d = Eigen::MatrixXd::Zero(T, N);
  out.q_d = Eigen::MatrixXd::Zero(T, N);
  for (const auto& b : net.buses()) out.buses.push_back(b.id);
  for (std::size_t k = 0; k < demand.buses().size(); ++k) {
    const auto col = static_cast<Eigen::Index>(net.index_of(demand.buses()[k]));
    out.p_d.col(col) = demand.p_mw().col(static_cast<Eigen::Index>(k)) / out.s_base;
    out.q_d.col(col) = demand.q_mvar().col(static_cast<Eigen::Index>(k)) / out.s_base;
  }
  return out;
}

inline DemandSeries from_per_unit(const PerUnitSeries& pu) {
  if (!(pu.s_base > 0.0)) throw ModelError("s_base must be positive");
  return DemandSeries(pu.buses, pu.p_d * pu.s_base, pu.q_d * pu.s_base, pu.dt, pu.valid, pu.first_hour);
}

// ---------------------------------------------------------------------------
// Admittance
// ---------------------------------------------------------------------------

/// Dense complex bus admittance matrix in the network's bus order.
class AdmittanceMatrix {
 public:
  explicit AdmittanceMatrix(Eigen::MatrixXcd y) : y_(std::move(y)) {}

  Eigen::Index size() const noexcept { return y_.rows(); }
  const Eigen::MatrixXcd& matrix() const noexcept { return y_; }
  std::complex<double> operator()(Eigen::Index i, Eigen::Index j) const { return y_(i, j); }
  double g(Eigen::Index i, Eigen::Index j) const { return y_(i, j).real(); }
  double b(Eigen::Index i, Eigen::Index j) const { return y_(i, j).imag(); }
  Eigen::MatrixXd conductance() const { return y_.real(); }
  Eigen::MatrixXd susceptance() const { return y_.imag(); }

 private:
  Eigen::MatrixXcd y_;
};

inline AdmittanceMatrix build_admittance(const Network& net) {
  const auto n = static_cast<Eigen::Index>(net.bus_count());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  const std::complex<double> j(0.0, 1.0);
  for (const auto& br : net.branches()) {
    if (br.status != BranchStatus::Closed) continue;
    const auto f = static_cast<Eigen::Index>(net.index_of(br.from));
    const auto t = static_cast<Eigen::Index>(net.index_of(br.to));
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> ych = j * (br.b_sh / 2.0);
    y(f, f) += ys + ych;
    y(t, t) += ys + ych;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  for (const auto& sh : net.shunts()) {
    const auto k = static_cast<Eigen::Index>(net.index_of(sh.bus));
    y(k, k) += j * sh.b_cap;
  }
  return AdmittanceMatrix(std::move(y));
}

}  // namespace gridcap
