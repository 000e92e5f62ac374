#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskhorizon/conic_solver.hpp"
#include "riskhorizon/risk.hpp"
#include "riskhorizon/scenario_tree.hpp"

namespace riskhorizon {

// x+ = A_w x + B_w u + c_w, one entry per event mode
struct AffineDynamics {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::VectorXd c;  // may be empty (zero offset)
};

// l(x, u, w) = x'Q_w x + u'R_w u
struct QuadCost {
    Eigen::MatrixXd Q;
    Eigen::MatrixXd R;
};

enum class ConstraintMode { StageWise, Nested };

// Supported constraint functions phi.
struct ConstraintFn {
    enum class Kind { Affine, StateNormBall };
    Kind kind = Kind::Affine;
    // Affine: a'x + d'u + offset  (evaluated at the parent node of the edge)
    Eigen::VectorXd a, d;
    double offset = 0.0;
    // StateNormBall: |x|^2 - bound
    double bound = 0.0;

    static ConstraintFn affine(const Eigen::VectorXd& a, const Eigen::VectorXd& d, double offset);
    static ConstraintFn state_norm_ball(double bound);

    double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
};

struct RiskConstraintSpec {
    std::vector<int> stages;  // constraint stage t: risk over nodes(t+1), or t == N for terminal
    ConstraintFn phi;
    ConstraintMode mode = ConstraintMode::StageWise;
    RiskFamily family;
    std::map<int, RiskFamily> node_overrides;  // Nested mode: per-node families
};

struct OcpSpec {
    ScenarioTree tree;
    std::vector<AffineDynamics> dynamics;  // indexed by event mode
    Eigen::VectorXd initial_state;
    std::vector<QuadCost> stage_cost;      // indexed by event mode
    Eigen::MatrixXd terminal_Q;
    std::vector<RiskFamily> cost_risk;     // one per stage 0..N-1
    std::optional<Eigen::VectorXd> u_lo, u_hi;
    std::vector<RiskConstraintSpec> risk_constraints;

    int nx() const { return static_cast<int>(initial_state.size()); }
    int nu() const { return static_cast<int>(dynamics.at(0).B.cols()); }

    // total cost of one root-to-leaf path under controls u (per node)
    double scenario_cost(int leaf, const std::vector<Eigen::VectorXd>& u_per_node) const;

    std::string to_json() const;
    static OcpSpec from_json(const std::string& text);
};

void validate_ocp_spec(const OcpSpec& spec);

// (node, role) -> column bookkeeping of the assembled program
struct VariableMap {
    int nx = 0, nu = 0;
    std::vector<int> x_col;    // per node
    std::vector<int> u_col;    // per node (-1 for leaves)
    std::vector<int> tau_col;  // per node (-1 for root)
    std::vector<int> s_col;    // per node
    int total = 0;
};

struct BuiltProgram {
    ConicProgram program;
    VariableMap vars;
};

// Assemble the epigraph-decomposed risk-averse problem into one cone program.
BuiltProgram build_program(const OcpSpec& spec);

// Risk of constant values Y on nodes(t) evaluated through the conic epigraph
// system (minimize the root budget over per-node dual blocks). Nested mode
// composes family_per_stage[0..t-1] through intermediate per-node levels;
// stage-wise mode applies family_per_stage[0] to the unconditional
// distribution over nodes(t).
double risk_value_conic(const ScenarioTree& tree,
                        const std::vector<RiskFamily>& family_per_stage,
                        const Eigen::VectorXd& Y, int t, ConstraintMode mode,
                        const SolverSettings& settings = {});

// Conic feasibility of {risk(Y) <= gamma} with constant values Y on nodes(t).
// Decided by comparing risk_value_conic against gamma, which stays reliable
// when gamma sits close to the feasibility threshold (a homogeneous
// self-dual-embedding feasibility solve stalls there); exact ties count as
// feasible. Returns Optimal (feasible) or PrimalInfeasible.
SolveStatus risk_inequality_feasibility(const ScenarioTree& tree,
                                        const std::vector<RiskFamily>& family_per_stage,
                                        const Eigen::VectorXd& Y, int t, double gamma,
                                        ConstraintMode mode,
                                        const SolverSettings& settings = {});

struct OcpSolution {
    Eigen::MatrixXd x;  // nx x num_nodes
    Eigen::MatrixXd u;  // nu x num_nodes (leaf columns zero)
    double value = 0.0;
    Eigen::VectorXd tau, s;  // per node (-inf placeholders where undefined)
    double dynamics_residual = 0.0;

    struct ConstraintReport {
        int constraint_index;
        int stage;
        double risk_value;  // recomputed risk of phi at this stage
    };
    std::vector<ConstraintReport> constraint_reports;
};

OcpSolution extract_solution(const Solution& sol, const BuiltProgram& built, const OcpSpec& spec);

struct OcpSolveResult {
    SolveStatus status;
    std::optional<OcpSolution> solution;
    Solution raw;
};

OcpSolveResult solve_ocp(const OcpSpec& spec, const SolverSettings& settings = {});

// Per-node stage/terminal costs recomputed from trajectories.
Eigen::VectorXd node_costs(const OcpSpec& spec, const Eigen::MatrixXd& x, const Eigen::MatrixXd& u);

}  // namespace riskhorizon
