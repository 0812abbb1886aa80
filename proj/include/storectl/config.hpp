// Run configuration: a JSON document (optionally starting from a named
// preset) describing the store, prices, penalty, solver and simulation.

#pragma once

#include "storectl/models.hpp"
#include "storectl/prices.hpp"
#include "storectl/sim.hpp"
#include "storectl/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace storectl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationConfig {
  ShockProcess shocks;
  BufferingCostRule rule = LossOfLoad{10.0};
  std::vector<std::uint64_t> seeds{1};
  SimOptions options;
  int threads = 0;
};

struct RunConfig {
  nlohmann::json source;  // merged document the fields were read from

  std::optional<int> horizon;  // truncates the price series
  double initial_level = 0.0;
  std::vector<double> capacity{10.0};  // one entry, or one per period
  std::vector<double> lower{0.0};
  RateWindow rates;
  double unit_scale = 1.0;  // store energy unit expressed in price-file units

  std::string cost_model = "market_impact";  // market_impact | price_taker | piecewise_linear
  double eta = 0.85;
  double delta = 0.05;
  std::vector<std::pair<double, double>> breakpoints;  // offsets added to c_t

  PriceSeries prices;
  PenaltyModel penalty = ZeroPenalty{};
  std::optional<double> terminal_target;

  SolverOptions solver;
  std::optional<double> regularization_eps;
  int grid_points = 0;  // 0 selects the default
  SimulationConfig simulation;
};

/// Names accepted by preset().
std::vector<std::string> preset_names();

/// Base document for a named preset; throws ConfigError for unknown names.
nlohmann::json preset(const std::string& name);

/// Applies "a.b.c=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file; a "preset" key selects a base document that the file's
/// other keys are merged onto.
nlohmann::json load_config_file(const std::string& path);

/// Resolves presets, validates keys and reads price and penalty files.
/// Relative paths are taken relative to base_dir.
RunConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");

ProblemInstance build_instance(const RunConfig& cfg);

}  // namespace storectl
