#pragma once

// CSV artifacts of a study run, their readers, and the text report.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "gridcap/detail/text.hpp"
#include "gridcap/errors.hpp"
#include "gridcap/planning.hpp"
#include "gridcap/study.hpp"

namespace gridcap::io {

namespace fs = std::filesystem;
using detail::fmt_num;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ModelError(fmt::format("cannot open '{}'", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError(fmt::format("cannot write '{}'", p.string()));
  out << text;
  if (!out) throw ModelError(fmt::format("write failed for '{}'", p.string()));
}

inline double parse_num(std::string_view s, const std::string& src, std::size_t line, std::string_view field) {
  auto v = detail::to_double(s);
  if (!v) throw ParseError(src, line, fmt::format("{} is not a number: '{}'", field, s));
  return *v;
}

inline long long parse_int(std::string_view s, const std::string& src, std::size_t line, std::string_view field) {
  auto v = detail::to_int(s);
  if (!v) throw ParseError(src, line, fmt::format("{} is not an integer: '{}'", field, s));
  return *v;
}

// ---------------------------------------------------------------------------
// Generic CSV table
// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ModelError(fmt::format("missing column '{}'", name));
    return static_cast<std::size_t>(it - header.begin());
  }
  bool has_column(std::string_view name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

/// Plain comma-separated values; fields never contain commas or quotes.
inline Table parse_table(std::string_view text, const std::string& source) {
  Table t;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    for (auto f : detail::split(line, ',')) fields.emplace_back(detail::trim(f));
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(source, line_no,
                       fmt::format("expected {} fields, found {}", t.header.size(), fields.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw ParseError(source, 1, "empty file");
  return t;
}

inline Table read_table(const fs::path& p) { return parse_table(read_file(p), p.string()); }

inline std::string render_table(const Table& t) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + v[k];
    return s + "\n";
  };
  std::string out = join(t.header);
  for (const auto& r : t.rows) out += join(r);
  return out;
}

// ---------------------------------------------------------------------------
// Hourly results
// ---------------------------------------------------------------------------

inline const char* hour_status(const HourResult& h) {
  return h.valid ? to_string(h.solution.status) : "Skipped";
}

inline Table hourly_table(const CaseResult& r) {
  Table t;
  t.header = {"hour",    "status",  "dt_h",     "load_mw",  "load_mvar",     "served_mw",
              "shed_mw", "pv_p_mw", "pv_q_mvar", "gen_p_mw", "gen_q_mvar",   "loss_mw",
              "gen_cost", "objective", "max_mismatch", "mean_mismatch", "vmin", "vmax",
              "iterations"};
  for (BusId b : r.buses) t.header.push_back(fmt::format("shed_mw_{}", to_int(b)));
  for (const auto& h : r.hours) {
    std::vector<std::string> row{std::to_string(h.hour), hour_status(h), fmt_num(r.dt)};
    if (!h.valid) {
      row.resize(t.header.size());
      t.rows.push_back(std::move(row));
      continue;
    }
    const auto& s = h.solution;
    for (double v : {h.load_mw, h.load_mvar, h.served_mw, h.shed_mw, h.pv_p_mw, h.pv_q_mvar, s.p_g.sum(),
                     s.q_g.sum(), h.loss_mw, s.generation_cost, s.objective_value, s.max_mismatch(),
                     s.mean_mismatch(), s.v.minCoeff(), s.v.maxCoeff()})
      row.push_back(fmt_num(v));
    row.push_back(std::to_string(s.iterations));
    for (Eigen::Index k = 0; k < h.shed_by_bus_mw.size(); ++k) row.push_back(fmt_num(h.shed_by_bus_mw(k)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct HourlyRow {
  int hour = 0;
  std::string status;
  double dt_h = 1.0;
  std::map<std::string, double> values;  // empty for skipped hours
  std::map<BusId, double> shed_by_bus;

  bool skipped() const { return status == "Skipped"; }
  bool optimal() const { return status == "Optimal"; }
  double at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ModelError(fmt::format("hour {} has no '{}'", hour, key));
    return it->second;
  }
};

inline std::vector<HourlyRow> read_hourly(const fs::path& p) {
  const Table t = read_table(p);
  const auto c_hour = t.column("hour"), c_status = t.column("status"), c_dt = t.column("dt_h");
  std::vector<HourlyRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    HourlyRow h;
    const auto line = r + 2;
    h.hour = static_cast<int>(parse_int(row[c_hour], p.string(), line, "hour"));
    h.status = row[c_status];
    h.dt_h = parse_num(row[c_dt], p.string(), line, "dt_h");
    if (!h.skipped()) {
      for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (c == c_hour || c == c_status || c == c_dt) continue;
        const double v = parse_num(row[c], p.string(), line, t.header[c]);
        const std::string& name = t.header[c];
        if (name.starts_with("shed_mw_")) {
          const auto id = parse_int(std::string_view(name).substr(8), p.string(), 1, "bus id");
          h.shed_by_bus[BusId{static_cast<int>(id)}] = v;
        } else {
          h.values[name] = v;
        }
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

/// Lost-load cost per bus recomputed from an OLD case's hourly file.
inline std::map<BusId, double> voll_cost_from_hourly(const std::vector<HourlyRow>& rows, double voll_rate) {
  if (!(voll_rate > 0.0)) throw ModelError("VoLL rate must be positive");
  std::map<BusId, double> out;
  for (const auto& h : rows) {
    for (const auto& [bus, mw] : h.shed_by_bus) out[bus] += mw * voll_rate * h.dt_h;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivities
// ---------------------------------------------------------------------------

inline Table sensitivity_table(const CaseResult& r) {
  Table t;
  t.header = {"hour", "bus_id", "os_q", "os_v", "s_score", "rank", "status"};
  for (const auto& h : r.hours) {
    if (!h.valid) continue;
    std::vector<SensitivityRecord> recs = h.sensitivity;
    std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return to_int(a.bus) < to_int(b.bus); });
    for (const auto& s : recs) {
      t.rows.push_back({std::to_string(h.hour), std::to_string(to_int(s.bus)), fmt_num(s.os_q), fmt_num(s.os_v),
                        fmt_num(s.s_score), std::to_string(s.rank), hour_status(h)});
    }
  }
  return t;
}

struct SensitivityRow {
  int hour = 0;
  SensitivityRecord record;
  std::string status;
};

inline std::vector<SensitivityRow> read_sensitivity(const fs::path& p) {
  const Table t = read_table(p);
  const auto ch = t.column("hour"), cb = t.column("bus_id"), cq = t.column("os_q"), cv = t.column("os_v"),
             cs = t.column("s_score"), cr = t.column("rank"), cst = t.column("status");
  std::vector<SensitivityRow> out;
  const std::string src = p.string();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = r + 2;
    SensitivityRow s;
    s.hour = static_cast<int>(parse_int(row[ch], src, line, "hour"));
    s.record.bus = BusId{static_cast<int>(parse_int(row[cb], src, line, "bus_id"))};
    s.record.os_q = parse_num(row[cq], src, line, "os_q");
    s.record.os_v = parse_num(row[cv], src, line, "os_v");
    s.record.s_score = parse_num(row[cs], src, line, "s_score");
    s.record.rank = static_cast<int>(parse_int(row[cr], src, line, "rank"));
    s.status = row[cst];
    s.record.reliable = s.status == "Optimal";
    out.push_back(s);
  }
  return out;
}

/// Mean S_k per bus over the Optimal rows.
inline std::map<BusId, double> mean_scores(const std::vector<SensitivityRow>& rows) {
  std::map<BusId, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& a = acc[r.record.bus];
    if (r.status != "Optimal") continue;
    a.first += r.record.s_score;
    ++a.second;
  }
  std::map<BusId, double> out;
  for (const auto& [b, a] : acc) out[b] = a.second ? a.first / a.second : 0.0;
  return out;
}

inline Table ranking_table(const StudyResult& st) {
  Table t;
  t.header = {"case", "bus_id", "os_q", "os_v", "s_score", "rank"};
  for (const auto& r : st.cases) {
    for (const auto& s : r.ranking)
      t.rows.push_back({std::to_string(static_cast<int>(r.case_id)), std::to_string(to_int(s.bus)), fmt_num(s.os_q),
                        fmt_num(s.os_v), fmt_num(s.s_score), std::to_string(s.rank)});
  }
  for (const auto& s : st.pooled_ranking)
    t.rows.push_back({"pooled", std::to_string(to_int(s.bus)), fmt_num(s.os_q), fmt_num(s.os_v), fmt_num(s.s_score),
                      std::to_string(s.rank)});
  return t;
}

// ---------------------------------------------------------------------------
// Cross-case table
// ---------------------------------------------------------------------------

inline std::string bus_list(const std::vector<BusId>& buses) {
  std::string s;
  for (std::size_t k = 0; k < buses.size(); ++k) s += (k ? ";" : "") + std::to_string(to_int(buses[k]));
  return s;
}

inline Table cross_case_table(const std::vector<CrossCaseRow>& rows) {
  Table t;
  t.header = {"case", "total_cost", "load_served", "load_shed", "avg_mismatch", "avg_vmin", "avg_vmax", "top_cap_buses"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(static_cast<int>(r.case_id)), fmt_num(r.total_cost), fmt_num(r.load_served),
                      fmt_num(r.load_shed), fmt_num(r.avg_mismatch), fmt_num(r.avg_vmin), fmt_num(r.avg_vmax),
                      bus_list(r.top_cap_buses)});
  }
  return t;
}

inline std::vector<CrossCaseRow> read_cross_case(const fs::path& p) {
  const Table t = read_table(p);
  const std::string src = p.string();
  std::vector<CrossCaseRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = r + 2;
    auto num = [&](const char* col) { return parse_num(row[t.column(col)], src, line, col); };
    CrossCaseRow c{};
    const auto id = parse_int(row[t.column("case")], src, line, "case");
    if (id < 1 || id > 4) throw ParseError(src, line, fmt::format("case must be 1..4, got {}", id));
    c.case_id = static_cast<CaseId>(id);
    c.total_cost = num("total_cost");
    c.load_served = num("load_served");
    c.load_shed = num("load_shed");
    c.avg_mismatch = num("avg_mismatch");
    c.avg_vmin = num("avg_vmin");
    c.avg_vmax = num("avg_vmax");
    for (auto b : detail::split(row[t.column("top_cap_buses")], ';')) {
      if (detail::trim(b).empty()) continue;
      c.top_cap_buses.push_back(BusId{static_cast<int>(parse_int(b, src, line, "top_cap_buses"))});
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch profiles (long format: hour,series,element,value)
// ---------------------------------------------------------------------------

inline Table profile_table(const CaseResult& r, const Network& net) {
  Table t;
  t.header = {"hour", "series", "element", "value"};
  auto add = [&](int hour, const char* series, std::string element, double v) {
    t.rows.push_back({std::to_string(hour), series, std::move(element), fmt_num(v)});
  };
  const auto gens = net.generators();
  for (const auto& h : r.hours) {
    if (!h.optimal()) continue;
    const auto& s = h.solution;
    for (std::size_t g = 0; g < gens.size(); ++g) {
      const auto name = fmt::format("gen{}@{}", g + 1, to_int(gens[g].bus));
      add(h.hour, "p_gen_mw", name, s.p_g(static_cast<Eigen::Index>(g)));
      add(h.hour, "q_gen_mvar", name, s.q_g(static_cast<Eigen::Index>(g)));
    }
    add(h.hour, "pv_p_mw", "total", h.pv_p_mw);
    add(h.hour, "pv_q_mvar", "total", h.pv_q_mvar);
    add(h.hour, "load_mw", "total", h.load_mw);
    add(h.hour, "served_mw", "total", h.served_mw);
    add(h.hour, "loss_mw", "total", h.loss_mw);
    for (std::size_t k = 0; k < r.buses.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      const auto bus = std::to_string(to_int(r.buses[k]));
      add(h.hour, "v_pu", bus, s.v(i));
      add(h.hour, "lmp_usd_per_mwh", bus, s.has_multipliers ? -s.lambda_p(i) / s.s_base / r.dt : 0.0);
      add(h.hour, "shed_mw", bus, h.shed_by_bus_mw(i));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Study directory
// ---------------------------------------------------------------------------

inline std::vector<std::string> required_study_files() {
  std::vector<std::string> f;
  for (int c = 1; c <= 4; ++c) {
    f.push_back(fmt::format("case{}_hourly.csv", c));
    f.push_back(fmt::format("case{}_sensitivity.csv", c));
  }
  f.push_back("cross_case.csv");
  return f;
}

inline void write_study(const fs::path& dir, const StudyResult& st, const Network& net) {
  fs::create_directories(dir);
  for (const auto& r : st.cases) {
    const int c = static_cast<int>(r.case_id);
    write_file(dir / fmt::format("case{}_hourly.csv", c), render_table(hourly_table(r)));
    write_file(dir / fmt::format("case{}_sensitivity.csv", c), render_table(sensitivity_table(r)));
    write_file(dir / fmt::format("case{}_profile.csv", c), render_table(profile_table(r, net)));
  }
  write_file(dir / "cross_case.csv", render_table(cross_case_table(st.table)));
  write_file(dir / "ranking.csv", render_table(ranking_table(st)));
  std::string notes;
  for (const auto& w : st.warnings) notes += w + "\n";
  write_file(dir / "warnings.txt", notes);
}

/// Human-readable summary of a study directory; also writes summary.txt and
/// plot_cross_case.csv there. Throws listing every missing file.
inline std::string report(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const auto& f : required_study_files())
    if (!fs::exists(dir / f)) missing.push_back(f);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ModelError(fmt::format("study directory '{}' is incomplete; missing: {}", dir.string(), list));
  }
  const auto rows = read_cross_case(dir / "cross_case.csv");
  if (rows.size() != 4) throw ModelError(fmt::format("cross_case.csv has {} rows, expected 4", rows.size()));
  auto row = [&](CaseId c) -> const CrossCaseRow& {
    for (const auto& r : rows)
      if (r.case_id == c) return r;
    throw ModelError(fmt::format("cross_case.csv lacks case {}", static_cast<int>(c)));
  };

  std::string out = "Four-case study summary\n\n";
  out += fmt::format("{:<16} {:>12} {:>12} {:>10} {:>13} {:>9} {:>9}  {}\n", "case", "cost ($)", "served (MW)",
                     "shed (MW)", "avg mismatch", "avg vmin", "avg vmax", "top buses");
  Table plot;
  plot.header = {"case", "metric", "value"};
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>12.2f} {:>12.3f} {:>10.3f} {:>13.3e} {:>9.4f} {:>9.4f}  {}\n",
                       fmt::format("{} {}", static_cast<int>(r.case_id), case_label(r.case_id)), r.total_cost,
                       r.load_served, r.load_shed, r.avg_mismatch, r.avg_vmin, r.avg_vmax, bus_list(r.top_cap_buses));
    const auto cs = std::to_string(static_cast<int>(r.case_id));
    for (auto [k, v] : {std::pair{"total_cost", r.total_cost}, {"load_served", r.load_served},
                        {"load_shed", r.load_shed}, {"avg_mismatch", r.avg_mismatch}, {"avg_vmin", r.avg_vmin},
                        {"avg_vmax", r.avg_vmax}})
      plot.rows.push_back({cs, k, fmt_num(v)});
  }

  out += "\n";
  std::map<int, std::vector<HourlyRow>> hourly;
  for (int c = 1; c <= 4; ++c) hourly[c] = read_hourly(dir / fmt::format("case{}_hourly.csv", c));
  for (int c = 1; c <= 4; ++c) {
    std::size_t valid = 0, optimal = 0;
    double dt = 1.0;
    for (const auto& h : hourly[c]) {
      if (h.skipped()) continue;
      ++valid;
      dt = h.dt_h;
      if (h.optimal()) ++optimal;
    }
    out += fmt::format("Case {}: {} of {} valid hours Optimal; served {:.3f} MWh\n", c, optimal, valid,
                       row(static_cast<CaseId>(c)).load_served * dt);
  }

  const auto& c3 = row(CaseId::OLD);
  const auto& c4 = row(CaseId::CapEnhanced);
  out += "\n";
  if (c3.load_shed <= 0.0) {
    out += "Load delivery shed nothing, so no recovery needed: the cost per MW of recovered demand is not applicable.\n";
  } else {
    out += economic_comparison(c3.total_cost, c4.total_cost, c3.load_served, c4.load_served).narrative() + "\n";
  }
  const bool insufficient = c4.load_shed > 0.0 || std::any_of(hourly[4].begin(), hourly[4].end(), [](const auto& h) {
                              return !h.skipped() && !h.optimal();
                            });
  if (insufficient) out += "Warning: capacitors insufficient; Case 4 did not solve every valid hour.\n";

  write_file(dir / "summary.txt", out);
  write_file(dir / "plot_cross_case.csv", render_table(plot));
  return out;
}

}  // namespace gridcap::io
