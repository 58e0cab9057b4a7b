#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gridcap/io.hpp"
#include "gridcap/study.hpp"

namespace gridcap::testing {

inline std::filesystem::path data_dir() { return GRIDCAP_DATA_DIR; }

inline std::shared_ptr<const Network> load_network(const std::string& name) {
  const auto p = data_dir() / (name + ".net");
  return std::make_shared<const Network>(parse_network(io::read_file(p), p.string()));
}

inline DemandSeries load_demand(const std::string& name) {
  const auto p = data_dir() / (name + "_demand.csv");
  return parse_demand_csv(io::read_file(p), 1.0, p.string());
}

inline const std::vector<std::string>& fixtures() {
  static const std::vector<std::string> names{"two_bus", "five_bus", "microgrid9"};
  return names;
}

/// Economic problem for one hour of a bundled fixture, nominal PV factors.
inline OpfProblem fixture_problem(const std::string& name, std::size_t hour, Objective obj = Objective::Economic) {
  Scenario sc;
  if (obj == Objective::OptimalLoadDelivery) sc.case_id = CaseId::OLD;
  return hour_problem(load_network(name), load_demand(name), hour, sc);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("gridcap_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace gridcap::testing
