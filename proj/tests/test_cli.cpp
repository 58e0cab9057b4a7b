#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "gridcap/planning.hpp"
#include "support.hpp"

using namespace gridcap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::string& args, const std::string& tag = "run") {
  const auto dir = fs::temp_directory_path() / "gridcap_cli_capture";
  fs::create_directories(dir);
  const auto out = dir / (tag + ".out"), err = dir / (tag + ".err");
  const std::string cmd = std::string("\"") + GRIDCAP_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

std::string data(const std::string& f) { return (gridcap::testing::data_dir() / f).string(); }

std::string inputs(const std::string& name) {
  return "--network \"" + data(name + ".net") + "\" --demand \"" + data(name + "_demand.csv") + "\"";
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const fs::path& microgrid_study_dir() {
  static const fs::path dir = [] {
    auto d = gridcap::testing::scratch_dir("cli_study_a");
    const auto r = run("study " + inputs("microgrid9") + " --out \"" + d.string() + "\"", "study_a");
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = io::read_file(e.path());
  return out;
}

}  // namespace

TEST(Cli, VersionEmbedsTolerances) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("feas_tol=1e-06"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("max_iter=500"), std::string::npos) << r.out;
}

TEST(Cli, ValidateFixtures) {
  for (const auto& name : gridcap::testing::fixtures()) {
    const auto r = run("validate " + inputs(name));
    EXPECT_EQ(r.code, 0) << name << r.err;
    EXPECT_NE(r.out.find("ok"), std::string::npos);
  }
  auto bad = gridcap::testing::scratch_dir("cli_bad_net") / "bad.net";
  io::write_file(bad, "BUS\n1 SLACK 0.95 1.05 12.47\n2 PQ 0.95 oops 12.47\n");
  const auto r = run("validate --network \"" + bad.string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.net:3"), std::string::npos) << r.err;
}

TEST(Cli, SolveEconomicExitsZero) {
  const auto out = gridcap::testing::scratch_dir("cli_solve") / "hourly.csv";
  const auto r = run("solve " + inputs("microgrid9") + " --case economic --out \"" + out.string() + "\"");
  EXPECT_EQ(r.code, 0) << r.err;
  const auto rows = io::read_hourly(out);
  EXPECT_EQ(rows.size(), 48u);
  EXPECT_EQ(line_count(io::read_file(out)), 49u);
}

TEST(Cli, SolveStressExitsTwo) {
  const auto r = run("solve " + inputs("microgrid9") + " --case stress --stress-pf 0.8");
  EXPECT_EQ(r.code, 2) << r.err;
  // Results are still written.
  EXPECT_EQ(line_count(r.out), 49u);
  EXPECT_NE(r.out.find("Infeasible"), std::string::npos);
}

TEST(Cli, MissingDemandFileExitsOne) {
  const auto r = run("solve --network \"" + data("microgrid9.net") + "\" --demand nope_missing.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope_missing.csv"), std::string::npos) << r.err;
}

TEST(Cli, ConfigFilePrecedence) {
  const auto dir = gridcap::testing::scratch_dir("cli_config");
  io::write_file(dir / "tight.toml", "# solver limits\nmax_iter = 3\nfeas_tol = 1e-6\n");
  io::write_file(dir / "bogus.toml", "bogus_key = 3\n");
  const std::string base = "solve " + inputs("two_bus");
  EXPECT_EQ(run("--config \"" + (dir / "tight.toml").string() + "\" " + base).code, 2);
  EXPECT_EQ(run("--config \"" + (dir / "tight.toml").string() + "\" --max-iter 500 " + base).code, 0);
  EXPECT_EQ(run(base).code, 0);
  const auto bogus = run("--config \"" + (dir / "bogus.toml").string() + "\" " + base);
  EXPECT_EQ(bogus.code, 1);
  EXPECT_NE(bogus.err.find("bogus_key"), std::string::npos) << bogus.err;
}

TEST(Cli, StudyWritesFourRowCrossCase) {
  const auto& dir = microgrid_study_dir();
  for (const auto& f : io::required_study_files()) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto rows = io::read_cross_case(dir / "cross_case.csv");
  EXPECT_EQ(rows.size(), 4u);
  const auto text = io::read_file(dir / "cross_case.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "case,total_cost,load_served,load_shed,avg_mismatch,avg_vmin,avg_vmax,top_cap_buses");
}

TEST(Cli, StudyIsByteIdenticalOnRerun) {
  const auto& a = microgrid_study_dir();
  auto b = gridcap::testing::scratch_dir("cli_study_b");
  const auto r = run("study " + inputs("microgrid9") + " --out \"" + b.string() + "\"", "study_b");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ca = dir_contents(a), cb = dir_contents(b);
  ASSERT_EQ(ca.size(), cb.size());
  for (const auto& [name, text] : ca) {
    ASSERT_TRUE(cb.contains(name)) << name;
    EXPECT_TRUE(text == cb.at(name)) << name;
  }
}

TEST(Cli, TopMZeroRejected) {
  auto dir = gridcap::testing::scratch_dir("cli_topm");
  const auto r = run("study " + inputs("two_bus") + " --top-m 0 --out \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("top-m"), std::string::npos) << r.err;
}

TEST(Cli, EmittedCsvsRoundTrip) {
  const auto& dir = microgrid_study_dir();
  for (int c = 1; c <= 4; ++c) {
    const auto hourly = io::read_hourly(dir / fmt::format("case{}_hourly.csv", c));
    EXPECT_EQ(hourly.size(), 48u);
    EXPECT_TRUE(hourly[30].skipped());
    const auto sens = io::read_sensitivity(dir / fmt::format("case{}_sensitivity.csv", c));
    EXPECT_FALSE(sens.empty());
    const auto sens_text = io::read_file(dir / fmt::format("case{}_sensitivity.csv", c));
    EXPECT_EQ(sens_text.substr(0, sens_text.find('\n')), "hour,bus_id,os_q,os_v,s_score,rank,status");
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    const auto t = io::read_table(e.path());
    EXPECT_FALSE(t.header.empty()) << e.path();
    EXPECT_EQ(io::render_table(t), io::read_file(e.path())) << e.path();
  }
}

TEST(Cli, ReportStatesPricePerRecoveredMw) {
  const auto& dir = microgrid_study_dir();
  const auto r = run("report \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("per MW of recovered demand"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));

  // The sentence agrees with economic_comparison on the emitted table.
  const auto rows = io::read_cross_case(dir / "cross_case.csv");
  const auto cmp = economic_comparison(rows[2].total_cost, rows[3].total_cost, rows[2].load_served, rows[3].load_served);
  ASSERT_TRUE(cmp.price.has_value());
  EXPECT_NE(r.out.find(fmt::format("${:.2f} per MW of recovered demand", *cmp.price)), std::string::npos) << r.out;
}

TEST(Cli, ReportListsMissingFiles) {
  auto dir = gridcap::testing::scratch_dir("cli_incomplete");
  for (const auto& e : fs::directory_iterator(microgrid_study_dir())) fs::copy(e.path(), dir / e.path().filename());
  fs::remove(dir / "case3_hourly.csv");
  const auto r = run("report \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("case3_hourly.csv"), std::string::npos) << r.err;
}

TEST(Cli, ReportWithoutShedNeedsNoRecovery) {
  auto dir = gridcap::testing::scratch_dir("cli_two_bus_study");
  ASSERT_EQ(run("study " + inputs("two_bus") + " --top-m 1 --out \"" + dir.string() + "\"").code, 0);
  const auto r = run("report \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("no recovery needed"), std::string::npos) << r.out;
}

TEST(Cli, PlanWritesDecisionTable) {
  const auto& dir = microgrid_study_dir();
  const auto out = gridcap::testing::scratch_dir("cli_plan") / "plan.csv";
  const auto r = run("plan --case3 \"" + dir.string() + "\" --cap-cost 5=1,2=1e9 --voll 1000 --out \"" +
                     out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = io::read_table(out);
  EXPECT_EQ(t.header, (std::vector<std::string>{"bus_id", "c_cap", "c_voll", "install", "s_score"}));
  ASSERT_EQ(t.rows.size(), 2u);
  const auto hourly = io::read_hourly(dir / "case3_hourly.csv");
  const auto voll = io::voll_cost_from_hourly(hourly, 1000.0);
  for (const auto& row : t.rows) {
    const BusId bus{std::stoi(row[0])};
    EXPECT_NEAR(std::stod(row[2]), voll.at(bus), 1e-6 * std::max(1.0, voll.at(bus)));
    const bool expect_install = std::stod(row[1]) < voll.at(bus);
    EXPECT_EQ(row[3], expect_install ? "1" : "0") << row[0];
  }
  EXPECT_EQ(run("plan --case3 \"" + dir.string() + "\" --cap-cost 5=abc --voll 1000").code, 1);
}
