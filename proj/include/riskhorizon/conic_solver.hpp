#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <optional>
#include <string>
#include <vector>

#include "riskhorizon/cones.hpp"

namespace riskhorizon {

// Standard-form cone program:  minimize c'z  s.t.  A z + s = b, s in K.
struct ConicProgram {
    int num_vars = 0;
    Eigen::VectorXd c;
    Eigen::SparseMatrix<double> A;  // m x num_vars
    Eigen::VectorXd b;
    Cone cone;
    std::vector<std::string> var_names;  // optional diagnostics
    std::vector<std::string> row_names;

    int num_rows() const { return static_cast<int>(b.size()); }
};

enum class SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIters,
    NumericalError,
};

const char* to_string(SolveStatus s);

struct Solution {
    SolveStatus status = SolveStatus::NumericalError;
    Eigen::VectorXd z;  // primal variables
    Eigen::VectorXd y;  // dual variables (in K*)
    Eigen::VectorXd s;  // primal slacks (in K)
    double objective = 0.0;
    double primal_res = 0.0;
    double dual_res = 0.0;
    double gap = 0.0;
    int iterations = 0;
    double solve_time_ms = 0.0;
};

struct SolverSettings {
    double eps = 1e-6;
    int max_iters = 100000;
    bool scaling = true;
    double relax_alpha = 1.5;  // over-relaxation
    int check_interval = 25;
    int anderson_memory = 10;  // 0 disables acceleration
    // Re-weight primal feasibility rows against stationarity when the two
    // residuals drift apart; each adjustment refactors the KKT system.
    bool adaptive_scale = true;
};

Solution solve(const ConicProgram& prog, const SolverSettings& settings = {});

// Presolve: detect contradictory Zero rows, drop empty rows, eliminate
// variables fixed by singleton equality rows. The transform maps reduced
// solutions back onto the original variables.
struct PresolveResult {
    ConicProgram reduced;
    bool infeasible = false;
    // z_original = restore_offset + sum over kept columns of z_reduced
    std::vector<int> kept_cols;          // reduced col -> original col
    Eigen::VectorXd fixed_values;        // original length; valid where fixed
    std::vector<bool> is_fixed;          // original length
    std::vector<int> kept_rows;          // reduced row -> original row
    double objective_offset = 0.0;       // c'z contribution of fixed vars
};

PresolveResult presolve(const ConicProgram& prog);
Eigen::VectorXd restore_variables(const PresolveResult& pr, const Eigen::VectorXd& z_reduced);

// Residuals recomputed from scratch on the original data.
struct Residuals {
    double primal, dual, gap;
};
Residuals compute_residuals(const ConicProgram& prog, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& y, const Eigen::VectorXd& s);

// JSON dump/load for repro cases.
std::string program_to_json(const ConicProgram& prog);
ConicProgram program_from_json(const std::string& text);

}  // namespace riskhorizon
