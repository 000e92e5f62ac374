#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "riskhorizon/cones.hpp"
#include "riskhorizon/conic_solver.hpp"
#include "riskhorizon/scenario_tree.hpp"

namespace riskhorizon {

// Tagged choice of built-in coherent risk measures.
struct RiskFamily {
    enum class Kind { Expectation, Max, AVaR, EVaR, Regularized };
    Kind kind = Kind::Expectation;
    double alpha = 1.0;   // AVaR / EVaR level
    double lambda = 0.0;  // Regularized mixing weight
    std::shared_ptr<RiskFamily> base;  // Regularized base

    static RiskFamily expectation();
    static RiskFamily max();
    static RiskFamily avar(double alpha);
    static RiskFamily evar(double alpha);
    static RiskFamily regularized(const RiskFamily& base, double lambda);

    bool strictly_monotone() const;

    std::string to_json() const;
    static RiskFamily from_json(const std::string& text);
    std::string describe() const;
};

// Ambiguity set of a coherent risk measure in conic form:
// A = { mu | exists nu : E mu + F nu <=_K b }, nominal pi in A.
struct ConicRiskSpec {
    int n = 0;  // sample-space size
    int r = 0;  // auxiliary variable count
    Eigen::MatrixXd E;  // m x n
    Eigen::MatrixXd F;  // m x r
    Eigen::VectorXd b;  // m
    Cone cone;
    Eigen::VectorXd nominal;
    std::optional<RiskFamily> family;  // set when built by make_conic_spec
};

// Default solver settings for risk evaluations (small, dense programs).
SolverSettings risk_solver_settings();

ConicRiskSpec make_conic_spec(const RiskFamily& family, const Eigen::VectorXd& nominal);

// Validation pass for user-supplied specs: nominal feasibility (tol 1e-8),
// a probability-normalizing Zero row present, Slater margin check.
void validate_spec(const ConicRiskSpec& spec);

// rho[Z] = max { mu'Z | E mu + F nu <=_K b } via the conic solver.
double eval_primal(const ConicRiskSpec& spec, const Eigen::VectorXd& Z,
                   const SolverSettings& settings = risk_solver_settings());

struct DualEval {
    double value;
    Eigen::VectorXd y;
};

// rho[Z] = min { y'b | E'y = Z, F'y = 0, y >=_{K*} 0 }.
DualEval eval_dual(const ConicRiskSpec& spec, const Eigen::VectorXd& Z,
                   const SolverSettings& settings = risk_solver_settings());

// Exact AVaR by sorting and scanning the breakpoints t in {Z_i}.
double avar_closed_form(double alpha, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z);

// Closed-form evaluation where one exists (Expectation, Max, AVaR and
// Regularized combinations thereof); nullopt for EVaR-containing families.
std::optional<double> eval_closed_form(const RiskFamily& family,
                                       const Eigen::VectorXd& pi,
                                       const Eigen::VectorXd& Z);

// One risk measure per non-leaf node of stage t, each on child(i).
struct ConditionalRiskMapping {
    int stage = 0;
    std::vector<ConicRiskSpec> specs;  // indexed by nodes(t) order
};

ConditionalRiskMapping make_conditional(
    const ScenarioTree& tree, int stage, const RiskFamily& family,
    const std::map<int, RiskFamily>& node_overrides = {});

// component i = rho^i applied to the slice of Z_next over child(i)
Eigen::VectorXd eval_conditional(const ConditionalRiskMapping& crm,
                                 const Eigen::VectorXd& Z_next,
                                 const SolverSettings& settings = risk_solver_settings());

// Backward recursion of conditional mappings from stage t-1 down to 0.
double eval_nested(const ScenarioTree& tree,
                   const std::vector<RiskFamily>& family_per_stage,
                   const Eigen::VectorXd& Z_t, int t,
                   const SolverSettings& settings = risk_solver_settings());

// Vertices of a polytopic ambiguity set (Zero/Nonneg cone only, n <= 12).
std::vector<Eigen::VectorXd> enumerate_ambiguity_vertices(const ConicRiskSpec& spec);

}  // namespace riskhorizon
