// End-to-end acceptance checks. Each criterion prints exactly one line;
// the process exits nonzero if any of them fail.
#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "riskhorizon/experiment.hpp"
#include "riskhorizon/ocp.hpp"
#include "riskhorizon/oracle.hpp"
#include "riskhorizon/risk.hpp"
#include "riskhorizon/scenario_tree.hpp"

using namespace riskhorizon;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int idx, const std::string& what, bool pass, double seconds,
            const std::string& note = "") {
    std::printf("criterion %2d [%s] %s (%.2f s)%s%s\n", idx, pass ? "PASS" : "FAIL", what.c_str(),
                seconds, note.empty() ? "" : " -- ", note.c_str());
    if (!pass) ++failures;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

VectorXd vec(std::initializer_list<double> xs) {
    VectorXd v(static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

VectorXd random_simplex(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = u(rng);
    return p / p.sum();
}

VectorXd random_vec(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> d(0.0, scale);
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = d(rng);
    return z;
}

SolverSettings tight() {
    SolverSettings s;
    s.eps = 1e-9;
    s.max_iters = 400000;
    return s;
}

struct Timer {
    Clock::time_point t0 = Clock::now();
    double seconds() const { return std::chrono::duration<double>(Clock::now() - t0).count(); }
};

// 1. worked example: stage-wise 0.2 and nested 0.390625 on the binary tree,
//    via both the recursion oracle and the conic epigraph path
void criterion_1() {
    Timer tm;
    const auto tree = build_iid_tree(vec({0.2, 0.8}), 4);
    auto [tb, te] = tree.stage_nodes(4);
    VectorXd Y = VectorXd::Zero(te - tb);
    Y(0) = 100.0;  // the all-low-branch scenario
    const std::vector<RiskFamily> fams(4, RiskFamily::avar(0.8));

    const double nested_oracle = oracle::nested_by_recursion(tree, fams, Y, 4);
    const double flat_oracle =
        oracle::scalar_risk(RiskFamily::avar(0.8), tree.stage_probs(4), Y);
    const double nested_conic =
        risk_value_conic(tree, fams, Y, 4, ConstraintMode::Nested, tight());
    const double flat_conic =
        risk_value_conic(tree, fams, Y, 4, ConstraintMode::StageWise, tight());

    const bool pass = std::abs(nested_oracle - 0.390625) <= 1e-6 &&
                      std::abs(nested_conic - 0.390625) <= 1e-6 &&
                      std::abs(flat_oracle - 0.2) <= 1e-6 &&
                      std::abs(flat_conic - 0.2) <= 1e-6 && tm.seconds() < 1.0;
    report(1, "worked example: 0.2 stage-wise / 0.390625 nested, both paths", pass,
           tm.seconds());
}

// 2. primal/dual agreement across every family at n in {2, 5, 20}
void criterion_2() {
    Timer tm;
    std::mt19937_64 rng(2);
    std::vector<RiskFamily> families = {
        RiskFamily::avar(0.0),  RiskFamily::avar(0.1),
        RiskFamily::avar(0.5),  RiskFamily::avar(0.9),
        RiskFamily::avar(1.0),  RiskFamily::evar(0.01),
        RiskFamily::evar(0.1),  RiskFamily::evar(1.0),
        RiskFamily::expectation(),
        RiskFamily::max(),
        RiskFamily::regularized(RiskFamily::avar(0.5), 0.3)};
    SolverSettings st = risk_solver_settings();
    st.eps = 1e-8;
    double worst = 0.0;
    for (const auto& fam : families) {
        int draws = 0;
        while (draws < 100) {
            for (int n : {2, 5, 20}) {
                const auto spec = make_conic_spec(fam, random_simplex(rng, n));
                const VectorXd Z = random_vec(rng, n, 5.0);
                const double p = eval_primal(spec, Z, st);
                const double d = eval_dual(spec, Z, st).value;
                worst = std::max(worst, rel_err(p, d));
                ++draws;
            }
        }
    }
    const bool pass = worst <= 1e-6 && tm.seconds() < 30.0;
    char note[64];
    std::snprintf(note, sizeof note, "worst relative gap %.2e", worst);
    report(2, "duality suite: 100+ draws per family at n in {2,5,20}", pass, tm.seconds(), note);
}

// 3. AVaR(0.5) with uniform nominal at n = 10 has exactly C(10,5) vertices
void criterion_3() {
    Timer tm;
    const auto spec = make_conic_spec(RiskFamily::avar(0.5), VectorXd::Constant(10, 0.1));
    const auto verts = enumerate_ambiguity_vertices(spec);
    const bool pass = verts.size() == 252 && tm.seconds() < 10.0;
    report(3, "vertex count: AVaR(0.5), uniform n=10 enumerates 252 vertices", pass,
           tm.seconds(), "found " + std::to_string(verts.size()));
}

// 4. risk of the pointwise minimum equals the minimum over scenario-dependent
//    selections; strictly monotone regularized families pin the arg min map
void criterion_4() {
    Timer tm;
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> un(2, 8), ux(2, 50);
    bool pass = true;
    for (int trial = 0; trial < 50 && pass; ++trial) {
        const int n = un(rng);
        const int nX = ux(rng);
        const VectorXd pi = random_simplex(rng, n);
        std::vector<VectorXd> g;
        for (int x = 0; x < nX; ++x) g.push_back(random_vec(rng, n, 2.0));

        VectorXd point_min = g[0];
        std::vector<int> argmin(n, 0);
        for (int x = 1; x < nX; ++x)
            for (int i = 0; i < n; ++i)
                if (g[x](i) < point_min(i)) {
                    point_min(i) = g[x](i);
                    argmin[i] = x;
                }

        const RiskFamily fams[] = {RiskFamily::expectation(), RiskFamily::max(),
                                   RiskFamily::avar(0.5), RiskFamily::evar(0.3),
                                   RiskFamily::regularized(RiskFamily::avar(0.5), 0.4)};
        const RiskFamily& fam = fams[trial % 5];
        auto value_of = [&](const std::vector<int>& map) {
            VectorXd Z(n);
            for (int i = 0; i < n; ++i) Z(i) = g[map[i]](i);
            return oracle::scalar_risk(fam, pi, Z);
        };

        const double lhs = oracle::scalar_risk(fam, pi, point_min);
        const double at_argmin = value_of(argmin);
        pass = pass && std::abs(lhs - at_argmin) <= 1e-9;

        // no selection map beats the componentwise arg min: random restarts
        // plus coordinate descent, which by monotonicity cannot climb
        std::uniform_int_distribution<int> pick(0, nX - 1);
        for (int start = 0; start < 3 && pass; ++start) {
            std::vector<int> map(n);
            for (int i = 0; i < n; ++i) map[i] = pick(rng);
            double cur = value_of(map);
            bool improved = true;
            while (improved) {
                improved = false;
                for (int i = 0; i < n; ++i) {
                    for (int x = 0; x < nX; ++x) {
                        std::vector<int> cand = map;
                        cand[i] = x;
                        const double v = value_of(cand);
                        if (v < cur - 1e-12) {
                            cur = v;
                            map = cand;
                            improved = true;
                        }
                    }
                }
            }
            pass = pass && cur >= at_argmin - 1e-9;
            if (fam.strictly_monotone() && fam.kind == RiskFamily::Kind::Regularized)
                pass = pass && map == argmin;  // unique componentwise minimizers
        }
    }
    report(4, "interchange: risk of min equals min over selections (50 draws)", pass,
           tm.seconds());
}

// 5. conic optimum matches brute-force policy search and recursion
//    re-evaluation on random small trees
void criterion_5() {
    Timer tm;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> up(0.2, 0.8), ua(0.3, 0.9), ub(-1.0, 1.0);
    bool pass = true;
    std::string note;
    for (int trial = 0; trial < 20 && pass; ++trial) {
        // binary depth 2 (7 nodes), ternary depth 2 (13), binary depth 3 (15)
        const int shape = trial % 3;
        ScenarioTree tree = [&] {
            const double p = up(rng);
            if (shape == 0) return build_iid_tree(vec({p, 1.0 - p}), 2);  // 7 nodes
            if (shape == 1) return build_iid_tree(vec({p / 2, p / 2, 1.0 - p}), 2);  // 13
            return build_iid_tree(vec({p, 1.0 - p}), 3);  // 15 nodes
        }();

        const int modes = tree.num_children(0);
        std::vector<AffineDynamics> dyn;
        std::vector<QuadCost> cost;
        for (int w = 0; w < modes; ++w) {
            MatrixXd A(2, 2), B(2, 1);
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c) A(r, c) = ub(rng);
            B << ub(rng), ub(rng);
            dyn.push_back({A, B, VectorXd()});
            MatrixXd M(2, 2);
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c) M(r, c) = ub(rng);
            cost.push_back({M.transpose() * M + 0.2 * MatrixXd::Identity(2, 2),
                            MatrixXd::Constant(1, 1, 0.3)});
        }
        const RiskFamily fam = (trial % 2 == 0) ? RiskFamily::avar(ua(rng)) : RiskFamily::max();
        const int horizon = tree.num_stages();
        OcpSpec spec{std::move(tree),
                     dyn,
                     vec({0.7, -0.4}),
                     cost,
                     0.5 * MatrixXd::Identity(2, 2),
                     std::vector<RiskFamily>(horizon, fam),
                     vec({-2.0}),
                     vec({2.0}),
                     {}};

        const auto res = solve_ocp(spec, tight());
        if (res.status != SolveStatus::Optimal) {
            pass = false;
            note = "solve failed on trial " + std::to_string(trial);
            break;
        }
        const auto grid = oracle::grid_policy_search(spec, 1e-3);
        if (!grid.feasible || std::abs(res.solution->value - grid.value) > 2e-3) {
            pass = false;
            note = "grid mismatch on trial " + std::to_string(trial);
            break;
        }
        const VectorXd gcost = node_costs(spec, res.solution->x, res.solution->u);
        const double recur = oracle::nested_cost_recursion(
            spec.tree, std::vector<RiskFamily>(spec.tree.num_stages(), fam), gcost);
        if (rel_err(recur, res.solution->value) > 1e-4) {
            pass = false;
            note = "recursion mismatch on trial " + std::to_string(trial);
        }
    }
    report(5, "decomposition equals brute-force policy search (20 random trees)", pass,
           tm.seconds(), note);
}

// 6. expectation and max families reproduce the independent reductions
void criterion_6() {
    Timer tm;
    RandomInstanceConfig cfg;
    cfg.modes = 2;
    cfg.horizon = 3;
    cfg.branching_horizon = 2;
    cfg.seed = 6;
    OcpSpec spec = random_instance(cfg);

    const auto qp = oracle::deterministic_equivalent_qp(spec);
    const auto eres = solve_ocp(spec, tight());
    const bool exp_ok = qp.feasible && eres.solution &&
                        rel_err(qp.value, eres.solution->value) <= 1e-5;

    OcpSpec mm = spec;
    mm.cost_risk.assign(cfg.horizon, RiskFamily::max());
    const double flat = oracle::minimax_epigraph_value(mm);
    const auto mres = solve_ocp(mm, tight());
    const bool max_ok = mres.solution && rel_err(flat, mres.solution->value) <= 1e-5;

    report(6, "reductions: deterministic-equivalent QP and flat minimax epigraph",
           exp_ok && max_ok, tm.seconds());
}

// 7. stage-wise AVaR norm-ball constraints bound the exact violation
//    probability; the alpha = 0 sweep point is certified infeasible
void criterion_7() {
    Timer tm;
    RandomInstanceConfig cfg;
    cfg.modes = 4;
    cfg.nx = 2;
    cfg.nu = 2;
    cfg.horizon = 7;
    cfg.branching_horizon = 3;
    cfg.seed = 5;
    cfg.input_bound = 5.0;
    OcpSpec spec = random_instance(cfg);
    SolverSettings st;
    st.eps = 1e-6;
    st.max_iters = 150000;
    const auto points =
        constraint_experiment(spec, {0.0, 0.1, 0.3, 0.5, 0.8}, 1.0, {3, 4, 5, 6}, st);
    bool pass = points[0].status == SolveStatus::PrimalInfeasible;
    std::string note = pass ? "" : "alpha=0 not certified infeasible";
    for (size_t k = 1; k < points.size() && pass; ++k) {
        if (points[k].status != SolveStatus::Optimal) {
            pass = false;
            note = "sweep point did not solve";
            break;
        }
        for (const auto& srep : points[k].stages) {
            if (srep.constrained && srep.violation_prob > points[k].alpha + 1e-9) {
                pass = false;
                note = "violation probability exceeds alpha";
            }
        }
    }
    report(7, "chance-constraint surrogate: violation <= alpha, alpha=0 infeasible", pass,
           tm.seconds(), note);
}

// 8. qualitative risk-level sweep: worst case nondecreasing in alpha,
//    alpha=0 minimizes the worst case, alpha=1 minimizes the mean
void criterion_8() {
    Timer tm;
    RandomInstanceConfig cfg;
    cfg.modes = 4;
    cfg.horizon = 7;
    cfg.branching_horizon = 3;
    cfg.seed = 3;
    OcpSpec spec = random_instance(cfg);
    SolverSettings st;
    st.eps = 1e-8;
    st.max_iters = 200000;
    const auto points = cdf_experiment(spec, {0.0, 0.25, 0.5, 0.75, 1.0}, st);
    bool pass = true;
    std::string note;
    std::vector<double> worst, mean;
    for (const auto& pt : points) {
        if (pt.status != SolveStatus::Optimal) {
            pass = false;
            note = "sweep point did not solve";
        } else {
            worst.push_back(pt.cdf.worst);
            mean.push_back(pt.cdf.mean);
        }
    }
    if (pass) {
        for (size_t k = 0; k + 1 < worst.size(); ++k)
            pass = pass && worst[k] <= worst[k + 1] + 1e-5;  // nondecreasing in alpha
        for (size_t k = 1; k < worst.size(); ++k) pass = pass && worst[0] <= worst[k] + 1e-5;
        for (size_t k = 0; k + 1 < mean.size(); ++k)
            pass = pass && mean.back() <= mean[k] + 1e-5;
        if (!pass) note = "ordering property failed";
    }
    report(8, "risk-level sweep: minimax at alpha=0, risk-neutral at alpha=1", pass,
           tm.seconds(), note);
}

// 9. scaling: sub-second AVaR solves up to the scenario cap, exact affine
//    program sizes, and the entropic family costing more than AVaR
void criterion_9() {
    Timer tm;
    RandomInstanceConfig cfg;
    cfg.horizon = 12;
    cfg.seed = 1;
    SolverSettings st;
    st.eps = 1e-4;  // the accuracy downstream comparisons run at
    const auto avar_pts = timing_experiment(cfg, {1, 2, 3}, RiskFamily::avar(0.5),
                                            ConstraintMode::StageWise, 3, st, false);
    double worst_ms = 0.0;
    int max_scen = 0;
    for (const auto& pt : avar_pts) {
        worst_ms = std::max(worst_ms, pt.build_ms + pt.solve_ms);
        max_scen = std::max(max_scen, pt.scenarios);
    }
    const bool time_ok = worst_ms < 1000.0 && max_scen <= 200;

    // exact affine fit of variable/row counts against node count
    std::vector<double> nodes, nvars, nrows;
    for (int N = 1; N <= 5; ++N) {
        OcpSpec s2{build_iid_tree(vec({0.5, 0.5}), N),
                   {{MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1), VectorXd()},
                    {0.9 * MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1), VectorXd()}},
                   vec({1.0}),
                   {{MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)},
                    {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)}},
                   MatrixXd::Identity(1, 1),
                   std::vector<RiskFamily>(N, RiskFamily::avar(0.5)),
                   vec({-1.0}),
                   vec({1.0}),
                   {}};
        const auto built = build_program(s2);
        nodes.push_back(s2.tree.num_nodes());
        nvars.push_back(built.vars.total);
        nrows.push_back(built.program.num_rows());
    }
    auto affine_residual = [&](const std::vector<double>& y) {
        MatrixXd X(static_cast<int>(nodes.size()), 2);
        VectorXd Y(static_cast<int>(nodes.size()));
        for (size_t i = 0; i < nodes.size(); ++i) {
            X(static_cast<int>(i), 0) = 1.0;
            X(static_cast<int>(i), 1) = nodes[i];
            Y(static_cast<int>(i)) = y[i];
        }
        const VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * Y);
        return (X * beta - Y).cwiseAbs().maxCoeff();
    };
    const bool affine_ok = affine_residual(nvars) <= 1e-9 && affine_residual(nrows) <= 1e-9;

    const auto evar_pts = timing_experiment(cfg, {1}, RiskFamily::evar(0.5),
                                            ConstraintMode::StageWise, 1, st, false);
    const bool evar_ok = evar_pts[0].solve_ms > avar_pts[0].solve_ms;

    char note[96];
    std::snprintf(note, sizeof note,
                  "worst build+solve %.0f ms at %d scenarios (median of 3, eps 1e-4)", worst_ms,
                  max_scen);
    report(9, "scaling: sub-second AVaR, affine program sizes, EVaR costlier",
           time_ok && affine_ok && evar_ok, tm.seconds(), note);
}

// 10. projection idempotence and the Moreau decomposition on every
//     primitive cone, 1e4 points each at 1e-10
void criterion_10() {
    Timer tm;
    std::mt19937_64 rng(10);
    bool pass = true;
    const std::vector<std::pair<BlockType, int>> prims = {
        {BlockType::Zero, 4},          {BlockType::Nonneg, 4},
        {BlockType::SecondOrder, 5},   {BlockType::RotatedSecondOrder, 5},
        {BlockType::Exponential, 3},   {BlockType::ExponentialDual, 3}};
    for (const auto& [type, dim] : prims) {
        Cone cone;
        cone.append(type, dim);
        const Cone dual = cone.dual();
        double worst = 0.0;
        for (int k = 0; k < 10000; ++k) {
            const VectorXd v = random_vec(rng, dim, 3.0);
            const VectorXd pv = project(cone, v);
            const VectorXd ppv = project(cone, pv);
            const VectorXd pd = project(dual, -v);
            worst = std::max(worst, (ppv - pv).cwiseAbs().maxCoeff());
            worst = std::max(worst, (v - pv + pd).cwiseAbs().maxCoeff());
        }
        pass = pass && worst <= 1e-10;
    }
    report(10, "cone layer: idempotence and Moreau decomposition at 1e-10", pass, tm.seconds());
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
