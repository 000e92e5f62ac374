#include "riskhorizon/ocp.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace riskhorizon {

ConstraintFn ConstraintFn::affine(const Eigen::VectorXd& a, const Eigen::VectorXd& d, double offset) {
    ConstraintFn f;
    f.kind = Kind::Affine;
    f.a = a;
    f.d = d;
    f.offset = offset;
    return f;
}

ConstraintFn ConstraintFn::state_norm_ball(double bound) {
    ConstraintFn f;
    f.kind = Kind::StateNormBall;
    f.bound = bound;
    return f;
}

double ConstraintFn::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    if (kind == Kind::Affine) {
        double v = offset;
        if (a.size() > 0) v += a.dot(x);
        if (d.size() > 0 && u.size() > 0) v += d.dot(u);
        return v;
    }
    return x.squaredNorm() - bound;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

void check_psd(const Eigen::MatrixXd& M, const char* what) {
    if (M.rows() != M.cols() || (M - M.transpose()).lpNorm<Eigen::Infinity>() > 1e-10)
        throw std::invalid_argument(std::string(what) + " must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument(std::string(what) + " must be positive semidefinite");
}

// Incremental row/cone assembly.
struct RowBuilder {
    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> b;
    Cone cone;

    int rows() const { return static_cast<int>(b.size()); }

    int add_row(double rhs) {
        b.push_back(rhs);
        return rows() - 1;
    }
    void coef(int row, int col, double v) {
        if (v != 0.0) trips.emplace_back(row, col, v);
    }
    void block(BlockType t, int dim) { cone.append(t, dim); }
};

}  // namespace

void validate_ocp_spec(const OcpSpec& spec) {
    const int nx = spec.nx();
    const int N = spec.tree.num_stages();
    if (spec.dynamics.empty() || spec.stage_cost.empty())
        throw std::invalid_argument("dynamics and stage costs are required");
    const int nu = spec.nu();
    for (const auto& dyn : spec.dynamics) {
        if (dyn.A.rows() != nx || dyn.A.cols() != nx || dyn.B.rows() != nx || dyn.B.cols() != nu)
            throw std::invalid_argument("dynamics dimensions inconsistent");
        if (dyn.c.size() != 0 && dyn.c.size() != nx)
            throw std::invalid_argument("dynamics offset dimension inconsistent");
    }
    for (const auto& cost : spec.stage_cost) {
        check_psd(cost.Q, "Q");
        check_psd(cost.R, "R");
        if (cost.Q.rows() != nx || cost.R.rows() != nu)
            throw std::invalid_argument("cost dimensions inconsistent");
    }
    check_psd(spec.terminal_Q, "terminal Q");
    if (static_cast<int>(spec.cost_risk.size()) != N)
        throw std::invalid_argument("need one cost risk family per stage 0..N-1");
    for (int i = 1; i < spec.tree.num_nodes(); ++i) {
        const int mode = spec.tree.event(i).mode;
        if (mode < 0 || mode >= static_cast<int>(spec.dynamics.size()) ||
            mode >= static_cast<int>(spec.stage_cost.size()))
            throw std::invalid_argument("tree event mode without dynamics/cost data");
    }
    if (spec.u_lo && spec.u_lo->size() != nu) throw std::invalid_argument("u_lo dimension");
    if (spec.u_hi && spec.u_hi->size() != nu) throw std::invalid_argument("u_hi dimension");
    for (const auto& rc : spec.risk_constraints) {
        for (int t : rc.stages) {
            if (t < 0 || t > N) throw std::invalid_argument("risk constraint stage out of range");
            if (rc.mode == ConstraintMode::Nested && (t < 1 || t > N - 1))
                throw std::invalid_argument("nested risk constraints require stage in [1, N-1]");
        }
    }
}

BuiltProgram build_program(const OcpSpec& spec) {
    validate_ocp_spec(spec);
    const ScenarioTree& tree = spec.tree;
    const int nx = spec.nx();
    const int nu = spec.nu();
    const int n_nodes = tree.num_nodes();
    const int N = tree.num_stages();

    VariableMap vars;
    vars.nx = nx;
    vars.nu = nu;
    vars.x_col.assign(n_nodes, -1);
    vars.u_col.assign(n_nodes, -1);
    vars.tau_col.assign(n_nodes, -1);
    vars.s_col.assign(n_nodes, -1);
    int col = 0;
    for (int i = 0; i < n_nodes; ++i) {
        vars.x_col[i] = col;
        col += nx;
        if (!tree.is_leaf(i)) {
            vars.u_col[i] = col;
            col += nu;
        }
        if (i != 0) vars.tau_col[i] = col++;
        vars.s_col[i] = col++;
    }

    // per non-leaf node: conic risk tuple on child(i) and its dual columns
    std::vector<ConicRiskSpec> node_specs(n_nodes);
    std::vector<int> y_col(n_nodes, -1);
    for (int i = 0; i < n_nodes; ++i) {
        // single-child nodes need no dual block: any coherent risk of a
        // one-point law is the value itself (translation equivariance)
        if (tree.is_leaf(i) || tree.num_children(i) == 1) continue;
        node_specs[i] = make_conic_spec(spec.cost_risk[tree.stage(i)], tree.cond_prob(i));
        y_col[i] = col;
        col += static_cast<int>(node_specs[i].b.size());
    }

    RowBuilder rb;

    // x^0 = x
    {
        const int r0 = rb.rows();
        for (int k = 0; k < nx; ++k) {
            const int row = rb.add_row(spec.initial_state(k));
            rb.coef(row, vars.x_col[0] + k, 1.0);
        }
        (void)r0;
        rb.block(BlockType::Zero, nx);
    }

    std::vector<Eigen::MatrixXd> MQ, MR;
    for (const auto& cost : spec.stage_cost) {
        MQ.push_back(psd_sqrt(cost.Q));
        MR.push_back(psd_sqrt(cost.R));
    }
    const Eigen::MatrixXd MQN = psd_sqrt(spec.terminal_Q);

    for (int i = 0; i < n_nodes; ++i) {
        if (tree.is_leaf(i)) continue;
        auto [cb, ce] = tree.children(i);
        for (int ip = cb; ip < ce; ++ip) {
            const int w = tree.event(ip).mode;
            const auto& dyn = spec.dynamics[w];
            // dynamics: x+ - A x - B u = c
            for (int k = 0; k < nx; ++k) {
                const int row = rb.add_row(dyn.c.size() ? dyn.c(k) : 0.0);
                rb.coef(row, vars.x_col[ip] + k, 1.0);
                for (int j = 0; j < nx; ++j) rb.coef(row, vars.x_col[i] + j, -dyn.A(k, j));
                for (int j = 0; j < nu; ++j) rb.coef(row, vars.u_col[i] + j, -dyn.B(k, j));
            }
            rb.block(BlockType::Zero, nx);
            // stage cost epigraph: (tau+, 1/2, MQ x, MR u) in RSOC
            {
                int row = rb.add_row(0.0);
                rb.coef(row, vars.tau_col[ip], -1.0);
                rb.add_row(0.5);
                for (int k = 0; k < nx; ++k) {
                    row = rb.add_row(0.0);
                    for (int j = 0; j < nx; ++j) rb.coef(row, vars.x_col[i] + j, -MQ[w](k, j));
                }
                for (int k = 0; k < nu; ++k) {
                    row = rb.add_row(0.0);
                    for (int j = 0; j < nu; ++j) rb.coef(row, vars.u_col[i] + j, -MR[w](k, j));
                }
                rb.block(BlockType::RotatedSecondOrder, 2 + nx + nu);
            }
        }
    }

    // terminal cost epigraph on leaves: (s, 1/2, MQN x) in RSOC
    {
        auto [lb, le] = tree.stage_nodes(N);
        for (int i = lb; i < le; ++i) {
            int row = rb.add_row(0.0);
            rb.coef(row, vars.s_col[i], -1.0);
            rb.add_row(0.5);
            for (int k = 0; k < nx; ++k) {
                row = rb.add_row(0.0);
                for (int j = 0; j < nx; ++j) rb.coef(row, vars.x_col[i] + j, -MQN(k, j));
            }
            rb.block(BlockType::RotatedSecondOrder, 2 + nx);
        }
    }

    // conic risk dual block per non-leaf node
    for (int i = 0; i < n_nodes; ++i) {
        if (tree.is_leaf(i)) continue;
        auto [cb, ce] = tree.children(i);
        if (ce - cb == 1) {
            // identity risk on a chain node: tau_child + s_child <= s^i
            const int row = rb.add_row(0.0);
            rb.coef(row, vars.tau_col[cb], 1.0);
            rb.coef(row, vars.s_col[cb], 1.0);
            rb.coef(row, vars.s_col[i], -1.0);
            rb.block(BlockType::Nonneg, 1);
            continue;
        }
        const auto& rs = node_specs[i];
        const int m = static_cast<int>(rs.b.size());
        // y in (K^i)*
        for (int k = 0; k < m; ++k) {
            const int row = rb.add_row(0.0);
            rb.coef(row, y_col[i] + k, -1.0);
        }
        const Cone dual_k = rs.cone.dual();
        for (const auto& blk : dual_k.blocks()) rb.block(blk.type, blk.dim);
        // E'y = tau_child + s_child
        for (int j = 0; j < rs.n; ++j) {
            const int row = rb.add_row(0.0);
            for (int k = 0; k < m; ++k) rb.coef(row, y_col[i] + k, rs.E(k, j));
            rb.coef(row, vars.tau_col[cb + j], -1.0);
            rb.coef(row, vars.s_col[cb + j], -1.0);
        }
        rb.block(BlockType::Zero, rs.n);
        // F'y = 0
        if (rs.r > 0) {
            for (int j = 0; j < rs.r; ++j) {
                const int row = rb.add_row(0.0);
                for (int k = 0; k < m; ++k) rb.coef(row, y_col[i] + k, rs.F(k, j));
            }
            rb.block(BlockType::Zero, rs.r);
        }
        // b'y <= s^i
        {
            const int row = rb.add_row(0.0);
            for (int k = 0; k < m; ++k) rb.coef(row, y_col[i] + k, rs.b(k));
            rb.coef(row, vars.s_col[i], -1.0);
            rb.block(BlockType::Nonneg, 1);
        }
    }

    // input bounds
    if (spec.u_lo || spec.u_hi) {
        for (int i = 0; i < n_nodes; ++i) {
            if (tree.is_leaf(i)) continue;
            for (int j = 0; j < nu; ++j) {
                if (spec.u_lo) {
                    const int row = rb.add_row(-(*spec.u_lo)(j));
                    rb.coef(row, vars.u_col[i] + j, -1.0);
                    rb.block(BlockType::Nonneg, 1);
                }
                if (spec.u_hi) {
                    const int row = rb.add_row((*spec.u_hi)(j));
                    rb.coef(row, vars.u_col[i] + j, 1.0);
                    rb.block(BlockType::Nonneg, 1);
                }
            }
        }
    }

    // phi epigraph rows shared by both constraint modes
    auto add_phi_row = [&](const ConstraintFn& phi, int parent, int bound_col) {
        if (phi.kind == ConstraintFn::Kind::Affine) {
            const int row = rb.add_row(-phi.offset);
            for (int j = 0; j < nx && j < phi.a.size(); ++j)
                rb.coef(row, vars.x_col[parent] + j, phi.a(j));
            if (vars.u_col[parent] >= 0) {
                for (int j = 0; j < nu && j < phi.d.size(); ++j)
                    rb.coef(row, vars.u_col[parent] + j, phi.d(j));
            }
            rb.coef(row, bound_col, -1.0);
            rb.block(BlockType::Nonneg, 1);
        } else {
            // |x|^2 - c <= eta : (eta + c, 1/2, x) in RSOC
            int row = rb.add_row(phi.bound);
            rb.coef(row, bound_col, -1.0);
            rb.add_row(0.5);
            for (int k = 0; k < nx; ++k) {
                row = rb.add_row(0.0);
                rb.coef(row, vars.x_col[parent] + k, -1.0);
            }
            rb.block(BlockType::RotatedSecondOrder, 2 + nx);
        }
    };

    auto add_risk_dual_rows = [&](const ConicRiskSpec& rs, int ycol,
                                  auto&& target_col,  // j -> column of E'y target
                                  int budget_col, double budget_rhs) {
        const int m = static_cast<int>(rs.b.size());
        for (int k = 0; k < m; ++k) {
            const int row = rb.add_row(0.0);
            rb.coef(row, ycol + k, -1.0);
        }
        const Cone dual_k = rs.cone.dual();
        for (const auto& blk : dual_k.blocks()) rb.block(blk.type, blk.dim);
        for (int j = 0; j < rs.n; ++j) {
            const int row = rb.add_row(0.0);
            for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.E(k, j));
            rb.coef(row, target_col(j), -1.0);
        }
        rb.block(BlockType::Zero, rs.n);
        if (rs.r > 0) {
            for (int j = 0; j < rs.r; ++j) {
                const int row = rb.add_row(0.0);
                for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.F(k, j));
            }
            rb.block(BlockType::Zero, rs.r);
        }
        const int row = rb.add_row(budget_rhs);
        for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.b(k));
        if (budget_col >= 0) rb.coef(row, budget_col, -1.0);
        rb.block(BlockType::Nonneg, 1);
    };

    for (const auto& rc : spec.risk_constraints) {
        for (int t : rc.stages) {
            if (rc.mode == ConstraintMode::StageWise) {
                const int level = (t == N) ? N : t + 1;  // probability space nodes(level)
                auto [lb, le] = tree.stage_nodes(level);
                const int n_level = le - lb;
                ConicRiskSpec rs = make_conic_spec(rc.family, tree.stage_probs(level));
                const int ycol = col;
                col += static_cast<int>(rs.b.size());
                const int eta_col = col;
                col += n_level;
                add_risk_dual_rows(rs, ycol, [&](int j) { return eta_col + j; }, -1, 0.0);
                for (int j = 0; j < n_level; ++j) {
                    const int node = lb + j;
                    const int parent = (t == N) ? node : tree.ancestor(node);
                    add_phi_row(rc.phi, parent, eta_col + j);
                }
            } else {
                // nested: xi over nodes of stages 0..t+1, dual block per node
                // of stages 0..t, root pinned to zero
                auto [zb, ze] = tree.stage_nodes(t + 1);
                (void)zb;
                const int n_xi = ze;  // stage-major: nodes 0..ze-1 cover stages 0..t+1
                const int xi_col = col;
                col += n_xi;
                {
                    const int row = rb.add_row(0.0);  // xi^0 = 0
                    rb.coef(row, xi_col, 1.0);
                    rb.block(BlockType::Zero, 1);
                }
                auto [tb, te] = tree.stage_nodes(t);
                for (int i = 0; i < te; ++i) {  // nodes of stages 0..t
                    auto [cb2, ce2] = tree.children(i);
                    if (ce2 - cb2 == 1) {
                        // identity risk on a chain node: xi_child <= xi_i
                        const int row = rb.add_row(0.0);
                        rb.coef(row, xi_col + cb2, 1.0);
                        rb.coef(row, xi_col + i, -1.0);
                        rb.block(BlockType::Nonneg, 1);
                        continue;
                    }
                    auto it = rc.node_overrides.find(i);
                    const RiskFamily& fam = it == rc.node_overrides.end() ? rc.family : it->second;
                    ConicRiskSpec rs = make_conic_spec(fam, tree.cond_prob(i));
                    const int ycol = col;
                    col += static_cast<int>(rs.b.size());
                    add_risk_dual_rows(rs, ycol, [&, cb2](int j) { return xi_col + cb2 + j; },
                                       xi_col + i, 0.0);
                }
                (void)tb;
                // deepest level: phi(x^{i'}, u^{i'}, w) <= xi at child
                for (int i = tb; i < te; ++i) {
                    auto [cb2, ce2] = tree.children(i);
                    for (int ip = cb2; ip < ce2; ++ip) add_phi_row(rc.phi, i, xi_col + ip);
                }
            }
        }
    }

    vars.total = col;
    ConicProgram prog;
    prog.num_vars = col;
    prog.c = Eigen::VectorXd::Zero(col);
    prog.c(vars.s_col[0]) = 1.0;  // minimize s^0
    prog.b = Eigen::Map<Eigen::VectorXd>(rb.b.data(), rb.b.size());
    prog.A.resize(rb.rows(), col);
    prog.A.setFromTriplets(rb.trips.begin(), rb.trips.end());
    prog.cone = rb.cone;
    return {std::move(prog), std::move(vars)};
}

double risk_value_conic(const ScenarioTree& tree,
                        const std::vector<RiskFamily>& family_per_stage,
                        const Eigen::VectorXd& Y, int t, ConstraintMode mode,
                        const SolverSettings& settings) {
    auto [tb, te] = tree.stage_nodes(t);
    if (Y.size() != te - tb)
        throw std::invalid_argument("risk_value_conic: Y must be indexed by nodes(t)");
    RowBuilder rb;
    int col = 0;
    const int s0_col = col++;  // root risk budget, the objective

    // One dual block: y in K*, E'y pinned to child values, F'y = 0, b'y <= budget.
    auto add_dual_block = [&](const ConicRiskSpec& rs, auto&& value_rhs, auto&& value_col,
                              int budget_col, double budget_rhs) {
        const int ycol = col;
        const int m = static_cast<int>(rs.b.size());
        col += m;
        for (int k = 0; k < m; ++k) {
            const int row = rb.add_row(0.0);
            rb.coef(row, ycol + k, -1.0);
        }
        const Cone dual_k = rs.cone.dual();
        for (const auto& blk : dual_k.blocks()) rb.block(blk.type, blk.dim);
        for (int j = 0; j < rs.n; ++j) {
            const int row = rb.add_row(value_rhs(j));
            for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.E(k, j));
            const int vc = value_col(j);
            if (vc >= 0) rb.coef(row, vc, -1.0);
        }
        rb.block(BlockType::Zero, rs.n);
        if (rs.r > 0) {
            for (int j = 0; j < rs.r; ++j) {
                const int row = rb.add_row(0.0);
                for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.F(k, j));
            }
            rb.block(BlockType::Zero, rs.r);
        }
        const int row = rb.add_row(budget_rhs);
        for (int k = 0; k < m; ++k) rb.coef(row, ycol + k, rs.b(k));
        if (budget_col >= 0) rb.coef(row, budget_col, -1.0);
        rb.block(BlockType::Nonneg, 1);
    };

    if (mode == ConstraintMode::StageWise) {
        ConicRiskSpec rs = make_conic_spec(family_per_stage.at(0), tree.stage_probs(t));
        add_dual_block(rs, [&](int j) { return Y(j); }, [](int) { return -1; }, s0_col, 0.0);
    } else {
        std::vector<int> xi_col(tree.num_nodes(), -1);
        for (int k = 1; k < t; ++k) {
            auto [kb, ke] = tree.stage_nodes(k);
            for (int i = kb; i < ke; ++i) xi_col[i] = col++;
        }
        for (int k = 0; k < t; ++k) {
            auto [kb, ke] = tree.stage_nodes(k);
            for (int i = kb; i < ke; ++i) {
                ConicRiskSpec rs = make_conic_spec(family_per_stage.at(k), tree.cond_prob(i));
                const int cb = tree.children(i).first;
                auto value_rhs = [&](int j) { return k == t - 1 ? Y(cb + j - tb) : 0.0; };
                auto value_col = [&](int j) { return k == t - 1 ? -1 : xi_col[cb + j]; };
                const int budget_col = (k == 0) ? s0_col : xi_col[i];
                add_dual_block(rs, value_rhs, value_col, budget_col, 0.0);
            }
        }
    }

    ConicProgram prog;
    prog.num_vars = col;
    prog.A.resize(rb.rows(), col);
    prog.A.setFromTriplets(rb.trips.begin(), rb.trips.end());
    prog.b = Eigen::Map<const Eigen::VectorXd>(rb.b.data(), rb.rows());
    prog.c = Eigen::VectorXd::Zero(col);
    prog.c(s0_col) = 1.0;
    prog.cone = rb.cone;
    Solution sol = solve(prog, settings);
    const double max_res = std::max({sol.primal_res, sol.dual_res, sol.gap});
    if (sol.status != SolveStatus::Optimal &&
        !(sol.status == SolveStatus::MaxIters && max_res <= 1e-6))
        throw std::runtime_error(std::string("risk_value_conic: solve failed (") +
                                 to_string(sol.status) + ")");
    return sol.objective;
}

SolveStatus risk_inequality_feasibility(const ScenarioTree& tree,
                                        const std::vector<RiskFamily>& family_per_stage,
                                        const Eigen::VectorXd& Y, int t, double gamma,
                                        ConstraintMode mode,
                                        const SolverSettings& settings) {
    const double v = risk_value_conic(tree, family_per_stage, Y, t, mode, settings);
    const double tol = 100.0 * settings.eps * (1.0 + std::abs(gamma) + Y.cwiseAbs().maxCoeff());
    return v <= gamma + tol ? SolveStatus::Optimal : SolveStatus::PrimalInfeasible;
}

Eigen::VectorXd node_costs(const OcpSpec& spec, const Eigen::MatrixXd& x, const Eigen::MatrixXd& u) {
    const ScenarioTree& tree = spec.tree;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(tree.num_nodes());
    for (int i = 1; i < tree.num_nodes(); ++i) {
        const int a = tree.ancestor(i);
        const int w = tree.event(i).mode;
        const auto& cost = spec.stage_cost[w];
        g(i) = x.col(a).dot(cost.Q * x.col(a)) + u.col(a).dot(cost.R * u.col(a));
        if (tree.is_leaf(i)) g(i) += x.col(i).dot(spec.terminal_Q * x.col(i));
    }
    return g;
}

OcpSolution extract_solution(const Solution& sol, const BuiltProgram& built, const OcpSpec& spec) {
    if (sol.status != SolveStatus::Optimal)
        throw std::runtime_error(std::string("extract_solution: solver status ") + to_string(sol.status));
    const ScenarioTree& tree = spec.tree;
    const auto& vars = built.vars;
    const int n_nodes = tree.num_nodes();

    OcpSolution out;
    out.x.resize(vars.nx, n_nodes);
    out.u = Eigen::MatrixXd::Zero(vars.nu, n_nodes);
    out.tau = Eigen::VectorXd::Zero(n_nodes);
    out.s = Eigen::VectorXd::Zero(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        out.x.col(i) = sol.z.segment(vars.x_col[i], vars.nx);
        if (vars.u_col[i] >= 0) out.u.col(i) = sol.z.segment(vars.u_col[i], vars.nu);
        if (vars.tau_col[i] >= 0) out.tau(i) = sol.z(vars.tau_col[i]);
        out.s(i) = sol.z(vars.s_col[i]);
    }
    out.value = sol.z(vars.s_col[0]);

    double resid = 0.0;
    for (int i = 1; i < n_nodes; ++i) {
        const int a = tree.ancestor(i);
        const auto& dyn = spec.dynamics[tree.event(i).mode];
        Eigen::VectorXd pred = dyn.A * out.x.col(a) + dyn.B * out.u.col(a);
        if (dyn.c.size()) pred += dyn.c;
        resid = std::max(resid, (out.x.col(i) - pred).lpNorm<Eigen::Infinity>());
    }
    out.dynamics_residual = resid;

    // recompute each risk-constraint left-hand side from the trajectories
    int idx = 0;
    for (const auto& rc : spec.risk_constraints) {
        for (int t : rc.stages) {
            const int level = (t == tree.num_stages()) ? t : t + 1;
            auto [lb, le] = tree.stage_nodes(level);
            Eigen::VectorXd G(le - lb);
            for (int i = lb; i < le; ++i) {
                const int parent = (t == tree.num_stages()) ? i : tree.ancestor(i);
                G(i - lb) = rc.phi.eval(out.x.col(parent), out.u.col(parent));
            }
            double risk_value;
            if (rc.mode == ConstraintMode::StageWise) {
                ConicRiskSpec rs = make_conic_spec(rc.family, tree.stage_probs(level));
                auto cf = eval_closed_form(rc.family, rs.nominal, G);
                risk_value = cf ? *cf : eval_dual(rs, G).value;
            } else {
                std::vector<RiskFamily> fams(level, rc.family);
                risk_value = eval_nested(tree, fams, G, level);
            }
            out.constraint_reports.push_back({idx, t, risk_value});
        }
        ++idx;
    }
    return out;
}

OcpSolveResult solve_ocp(const OcpSpec& spec, const SolverSettings& settings) {
    BuiltProgram built = build_program(spec);
    Solution sol = solve(built.program, settings);
    OcpSolveResult res{sol.status, std::nullopt, sol};
    if (sol.status == SolveStatus::Optimal) res.solution = extract_solution(sol, built, spec);
    return res;
}

double OcpSpec::scenario_cost(int leaf, const std::vector<Eigen::VectorXd>& u_per_node) const {
    // forward-simulate along the root-to-leaf path
    std::vector<int> path;
    for (int i = leaf; i >= 0; i = tree.ancestor(i)) path.push_back(i);
    std::reverse(path.begin(), path.end());
    Eigen::VectorXd x = initial_state;
    double total = 0.0;
    for (size_t k = 0; k + 1 < path.size(); ++k) {
        const int i = path[k];
        const int ip = path[k + 1];
        const int w = tree.event(ip).mode;
        const Eigen::VectorXd& u = u_per_node.at(i);
        total += x.dot(stage_cost[w].Q * x) + u.dot(stage_cost[w].R * u);
        Eigen::VectorXd xn = dynamics[w].A * x + dynamics[w].B * u;
        if (dynamics[w].c.size()) xn += dynamics[w].c;
        x = xn;
    }
    total += x.dot(terminal_Q * x);
    return total;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& M) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < M.rows(); ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (int j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
        rows.push_back(r);
    }
    return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = rows ? static_cast<int>(j[0].size()) : 0;
    Eigen::MatrixXd M(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int k = 0; k < cols; ++k) M(i, k) = j[i][k].get<double>();
    return M;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

std::string OcpSpec::to_json() const {
    nlohmann::json j;
    j["tree"] = nlohmann::json::parse(tree.to_json());
    for (const auto& dyn : dynamics) {
        nlohmann::json d;
        d["A"] = matrix_json(dyn.A);
        d["B"] = matrix_json(dyn.B);
        if (dyn.c.size()) d["c"] = vector_json(dyn.c);
        j["dynamics"].push_back(d);
    }
    j["initial_state"] = vector_json(initial_state);
    for (const auto& cost : stage_cost) {
        j["stage_cost"].push_back({{"Q", matrix_json(cost.Q)}, {"R", matrix_json(cost.R)}});
    }
    j["terminal_Q"] = matrix_json(terminal_Q);
    for (const auto& f : cost_risk) j["cost_risk"].push_back(nlohmann::json::parse(f.to_json()));
    if (u_lo) j["u_lo"] = vector_json(*u_lo);
    if (u_hi) j["u_hi"] = vector_json(*u_hi);
    for (const auto& rc : risk_constraints) {
        nlohmann::json c;
        c["stages"] = rc.stages;
        c["mode"] = rc.mode == ConstraintMode::StageWise ? "stagewise" : "nested";
        c["family"] = nlohmann::json::parse(rc.family.to_json());
        nlohmann::json phi;
        if (rc.phi.kind == ConstraintFn::Kind::Affine) {
            phi["kind"] = "affine";
            phi["a"] = vector_json(rc.phi.a);
            phi["d"] = vector_json(rc.phi.d);
            phi["offset"] = rc.phi.offset;
        } else {
            phi["kind"] = "state_norm_ball";
            phi["bound"] = rc.phi.bound;
        }
        c["phi"] = phi;
        for (const auto& [node, fam] : rc.node_overrides)
            c["node_overrides"][std::to_string(node)] = nlohmann::json::parse(fam.to_json());
        j["risk_constraints"].push_back(c);
    }
    return j.dump(2);
}

OcpSpec OcpSpec::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    OcpSpec spec{ScenarioTree::from_json(j.at("tree").dump())};
    for (const auto& d : j.at("dynamics")) {
        AffineDynamics dyn;
        dyn.A = matrix_from(d.at("A"));
        dyn.B = matrix_from(d.at("B"));
        if (d.contains("c")) dyn.c = vector_from(d.at("c"));
        spec.dynamics.push_back(std::move(dyn));
    }
    spec.initial_state = vector_from(j.at("initial_state"));
    for (const auto& c : j.at("stage_cost"))
        spec.stage_cost.push_back({matrix_from(c.at("Q")), matrix_from(c.at("R"))});
    spec.terminal_Q = matrix_from(j.at("terminal_Q"));
    for (const auto& f : j.at("cost_risk")) spec.cost_risk.push_back(RiskFamily::from_json(f.dump()));
    if (j.contains("u_lo")) spec.u_lo = vector_from(j.at("u_lo"));
    if (j.contains("u_hi")) spec.u_hi = vector_from(j.at("u_hi"));
    if (j.contains("risk_constraints")) {
        for (const auto& c : j.at("risk_constraints")) {
            RiskConstraintSpec rc;
            rc.stages = c.at("stages").get<std::vector<int>>();
            rc.mode = c.at("mode").get<std::string>() == "nested" ? ConstraintMode::Nested
                                                                  : ConstraintMode::StageWise;
            rc.family = RiskFamily::from_json(c.at("family").dump());
            const auto& phi = c.at("phi");
            if (phi.at("kind").get<std::string>() == "affine") {
                rc.phi = ConstraintFn::affine(vector_from(phi.at("a")), vector_from(phi.at("d")),
                                              phi.at("offset").get<double>());
            } else {
                rc.phi = ConstraintFn::state_norm_ball(phi.at("bound").get<double>());
            }
            if (c.contains("node_overrides")) {
                for (const auto& [key, fam] : c.at("node_overrides").items())
                    rc.node_overrides[std::stoi(key)] = RiskFamily::from_json(fam.dump());
            }
            spec.risk_constraints.push_back(std::move(rc));
        }
    }
    return spec;
}

}  // namespace riskhorizon
