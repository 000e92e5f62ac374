#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "riskhorizon/ocp.hpp"

// Support for the randomized benchmark study: seeded instance generation,
// per-scenario cost statistics, and the alpha/branching sweeps emitted as CSV
// by the command-line tool.
namespace riskhorizon {

inline constexpr const char* kVersion = "1.0.0";

struct RandomInstanceConfig {
    int modes = 4;
    int nx = 2;
    int nu = 1;
    int horizon = 7;
    int branching_horizon = 7;
    std::uint64_t seed = 1;
    double input_bound = 2.0;  // inputs boxed to [-input_bound, input_bound]
};

// Seeded Markov jump-linear instance. Per mode w: A_w has standard normal
// entries rescaled to spectral radius <= 1.1 when larger, B_w entries are
// uniform on [-1, 1], Q_w = M'M + 0.1 I and R_w likewise for fresh normal M.
// Transition rows are uniform simplex draws. Cost risks default to
// expectation at every stage; callers overwrite them for alpha sweeps.
OcpSpec random_instance(const RandomInstanceConfig& cfg);

// Per-leaf total path cost (stage costs plus terminal) and probability.
struct ScenarioStat {
    double cost;
    double prob;
};
std::vector<ScenarioStat> scenario_statistics(const OcpSpec& spec, const OcpSolution& sol);

// Exact cost distribution of a solved policy.
struct CostCdf {
    std::vector<double> cost;      // ascending
    std::vector<double> cum_prob;  // nondecreasing, ends at 1
    double mean = 0.0;
    double worst = 0.0;
};
CostCdf cost_cdf(std::vector<ScenarioStat> stats);

// Solve the instance once per alpha with AVaR(alpha) cost risks at every
// stage and record the exact cost distribution.
struct CdfSweepPoint {
    double alpha;
    SolveStatus status;
    CostCdf cdf;
};
std::vector<CdfSweepPoint> cdf_experiment(const OcpSpec& base, const std::vector<double>& alphas,
                                          const SolverSettings& settings = {});

// Solve per alpha with stage-wise AVaR(alpha) norm-ball constraints
// |x|^2 <= c at the given stages; report per-stage quantiles of the
// constraint function over scenarios and the exact violation probability.
struct ConstraintStageReport {
    int stage;
    bool constrained;
    double violation_prob;               // exact, tolerance 1e-6 on phi > 0
    std::array<double, 3> phi_quantiles;  // 10% / 50% / 90% (probability-weighted)
};
struct ConstraintSweepPoint {
    double alpha;
    SolveStatus status;
    std::vector<ConstraintStageReport> stages;
};
std::vector<ConstraintSweepPoint> constraint_experiment(const OcpSpec& base,
                                                        const std::vector<double>& alphas,
                                                        double c, const std::vector<int>& stages,
                                                        const SolverSettings& settings = {});

// Build+solve wall time against tree size, one instance per branching
// horizon; solve time is the median over `repeats` runs. When
// `with_constraint` is set, a wide norm-ball risk constraint at the last
// stage exercises the constraint machinery without binding.
struct TimingPoint {
    int branching_horizon;
    int scenarios;
    int nodes;
    int variables;
    int rows;
    double build_ms;
    double solve_ms;
};
std::vector<TimingPoint> timing_experiment(const RandomInstanceConfig& cfg,
                                           const std::vector<int>& branching_horizons,
                                           const RiskFamily& family, ConstraintMode mode,
                                           int repeats, const SolverSettings& settings = {},
                                           bool with_constraint = true);

// "# seed=..., version=..., spec-hash=..." comment line carried by every CSV
std::string csv_metadata_line(std::uint64_t seed, const std::string& spec_json);

// worker cap: RISKHORIZON_THREADS if set, else the OpenMP default
int experiment_thread_count();

}  // namespace riskhorizon
