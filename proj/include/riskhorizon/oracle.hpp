#pragma once

#include <Eigen/Dense>
#include <vector>

#include "riskhorizon/ocp.hpp"
#include "riskhorizon/risk.hpp"
#include "riskhorizon/scenario_tree.hpp"

// Brute-force reference implementations used only by tests and `verify`.
// None of them run the operator-splitting iteration; the one exception is
// minimax_epigraph_value, which re-encodes the problem through a different
// (flat, risk-free) route before handing it to the cone solver.
namespace riskhorizon::oracle {

// max over enumerated ambiguity-set vertices of mu'Z (polytopic, n <= 10)
double risk_by_vertices(const ConicRiskSpec& spec, const Eigen::VectorXd& Z);

// 1-D dual formula min_{s>0} s log((1/alpha) sum pi_i e^{Z_i/s})
double evar_scalar_dual(double alpha, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z);

// closed forms only (AVaR scan / scalar EVaR dual); never the cone solver
double scalar_risk(const RiskFamily& family, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z);

// composite risk of a single stage-t cost vector by backward recursion
double nested_by_recursion(const ScenarioTree& tree, const std::vector<RiskFamily>& family_per_stage,
                           const Eigen::VectorXd& values, int t);

// full cost-process recursion V^i = g^i + rho^i[V over children];
// node_g holds per-node edge costs (terminal cost folded into leaves)
double nested_cost_recursion(const ScenarioTree& tree,
                             const std::vector<RiskFamily>& family_per_stage,
                             const Eigen::VectorXd& node_g);

struct GridSearchResult {
    double value;
    std::vector<double> policy;  // one scalar input per node (leaves zero)
    bool feasible;
};

// shrinking joint-grid search over per-node scalar inputs; requires
// n_u = 1, node count <= 15 and a bounded input box
GridSearchResult grid_policy_search(const OcpSpec& spec, double resolution);

struct QpResult {
    bool feasible;
    double value;
    Eigen::VectorXd u;  // stacked inputs, non-leaf nodes in index order
};

// dense scenario-weighted QP over stacked inputs (states eliminated),
// solved by a projected accelerated gradient loop
QpResult deterministic_equivalent_qp(const OcpSpec& spec);

// flat max-over-leaves epigraph encoding (no per-node risk duals)
double minimax_epigraph_value(const OcpSpec& spec);

}  // namespace riskhorizon::oracle
