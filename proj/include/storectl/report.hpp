// CSV and JSON emission for solutions, certificates, oracle comparisons and
// simulation runs. Every file carries schema_version = 1.

#pragma once

#include "storectl/models.hpp"
#include "storectl/oracle.hpp"
#include "storectl/sim.hpp"
#include "storectl/solver.hpp"

#include <json.hpp>

#include <iosfwd>
#include <vector>

namespace storectl {

inline constexpr int kSchemaVersion = 1;

/// Rows t = 0..T: t, level, increment, lambda, nu, horizon, at_lower, at_upper.
/// Throws SolverError if a multiplier has the wrong sign for its bound contact.
void write_trajectory_csv(std::ostream& out, const ProblemInstance& inst, const Solution& sol);

nlohmann::json objective_json(const ProblemInstance& inst, const Solution& sol);
nlohmann::json kkt_json(const KktReport& report, double tol);

struct SensitivityAudit {
  int period = 0;
  double d_lower = 0.0;  // finite-difference d objective / d lower_t
  double d_upper = 0.0;  // finite-difference d objective / d upper_t
};

/// Re-solves with each active bound moved by +-h (one-sided when the move
/// would empty the interval) and differences the objectives.
std::vector<SensitivityAudit> audit_sensitivity(const ProblemInstance& inst, const Solution& sol, double h,
                                                const SolverOptions& opts = {});

void write_sensitivity_csv(std::ostream& out, const ProblemInstance& inst, const Solution& sol,
                           const std::vector<SensitivityAudit>* audit = nullptr);

struct OracleComparison {
  int grid_points = 0;
  double spacing = 0.0;
  double objective_solver = 0.0;
  double objective_dp = 0.0;
  double lipschitz = 0.0;
  double gap = 0.0;           // |solver - dp|
  double bound = 0.0;         // lipschitz * spacing
  double relative_gap = 0.0;  // gap / max(|dp|, 1)
  double max_level_diff = 0.0;
  bool passed = false;
};

OracleComparison compare_with_oracle(const ProblemInstance& inst, const Solution& sol, int grid_points);
nlohmann::json oracle_json(const OracleComparison& cmp);

void write_runs_csv(std::ostream& out, const std::vector<SimulationRun>& runs);
nlohmann::json summary_json(const std::vector<SimulationRun>& runs, const Solution& plan, const ProblemInstance& inst);

/// Self-contained matplotlib script that plots trajectory.csv and prices.
std::string plot_script();

}  // namespace storectl
