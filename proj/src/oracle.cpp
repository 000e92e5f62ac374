#include "riskhorizon/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace riskhorizon::oracle {

double risk_by_vertices(const ConicRiskSpec& spec, const Eigen::VectorXd& Z) {
    if (!spec.cone.is_polyhedral()) throw std::invalid_argument("risk_by_vertices: non-polytopic spec");
    if (spec.n > 10) throw std::invalid_argument("risk_by_vertices: n > 10");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : enumerate_ambiguity_vertices(spec)) best = std::max(best, v.dot(Z));
    return best;
}

double evar_scalar_dual(double alpha, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z) {
    if (alpha <= 0.0 || alpha > 1.0) throw std::invalid_argument("evar_scalar_dual: alpha in (0,1]");
    if (alpha == 1.0) return pi.dot(Z);
    const double zmax = Z.maxCoeff();
    const double spread = zmax - Z.minCoeff();
    if (spread == 0.0) return zmax;

    // g(s) = s (logsumexp_i(log pi_i + (Z_i - zmax)/s) - log alpha) + zmax,
    // convex in s, hence unimodal in log s: golden-section search
    auto g = [&](double log_s) {
        const double s = std::exp(log_s);
        double acc = 0.0;
        for (int i = 0; i < Z.size(); ++i)
            if (pi(i) > 0.0) acc += pi(i) * std::exp((Z(i) - zmax) / s);
        return s * (std::log(acc) - std::log(alpha)) + zmax;
    };
    double lo = std::log(spread) - 25.0, hi = std::log(spread) + 25.0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    double fa = g(a), fb = g(b);
    for (int it = 0; it < 220; ++it) {
        if (fa < fb) {
            hi = b; b = a; fb = fa;
            a = hi - gr * (hi - lo); fa = g(a);
        } else {
            lo = a; a = b; fa = fb;
            b = lo + gr * (hi - lo); fb = g(b);
        }
    }
    return std::min(fa, fb);
}

double scalar_risk(const RiskFamily& family, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z) {
    using K = RiskFamily::Kind;
    switch (family.kind) {
        case K::Expectation:
            return pi.dot(Z);
        case K::Max: {
            double best = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < Z.size(); ++i)
                if (pi(i) > 0.0) best = std::max(best, Z(i));
            return best;
        }
        case K::AVaR:
            return avar_closed_form(family.alpha, pi, Z);
        case K::EVaR:
            return evar_scalar_dual(family.alpha, pi, Z);
        case K::Regularized:
            return (1.0 - family.lambda) * scalar_risk(*family.base, pi, Z) +
                   family.lambda * pi.dot(Z);
    }
    throw std::logic_error("unreachable");
}

double nested_by_recursion(const ScenarioTree& tree, const std::vector<RiskFamily>& family_per_stage,
                           const Eigen::VectorXd& values, int t) {
    if (static_cast<int>(family_per_stage.size()) < t)
        throw std::invalid_argument("nested_by_recursion: need a family per stage 0..t-1");
    auto [vb, ve] = tree.stage_nodes(t);
    if (values.size() != ve - vb) throw std::invalid_argument("nested_by_recursion: value count");
    Eigen::VectorXd cur = values;
    for (int s = t - 1; s >= 0; --s) {
        auto [nb, ne] = tree.stage_nodes(s);
        auto [cb0, ce0] = tree.stage_nodes(s + 1);
        (void)ce0;
        Eigen::VectorXd next(ne - nb);
        for (int i = nb; i < ne; ++i) {
            auto [cb, ce] = tree.children(i);
            next(i - nb) = scalar_risk(family_per_stage[s], tree.cond_prob(i),
                                       cur.segment(cb - cb0, ce - cb));
        }
        cur = std::move(next);
    }
    return cur(0);
}

double nested_cost_recursion(const ScenarioTree& tree,
                             const std::vector<RiskFamily>& family_per_stage,
                             const Eigen::VectorXd& node_g) {
    const int N = tree.num_stages();
    if (static_cast<int>(family_per_stage.size()) != N)
        throw std::invalid_argument("nested_cost_recursion: need a family per stage 0..N-1");
    if (node_g.size() != tree.num_nodes())
        throw std::invalid_argument("nested_cost_recursion: one cost per node");
    auto [lb, le] = tree.stage_nodes(N);
    Eigen::VectorXd cur = node_g.segment(lb, le - lb);
    for (int s = N - 1; s >= 0; --s) {
        auto [nb, ne] = tree.stage_nodes(s);
        auto [cb0, ce0] = tree.stage_nodes(s + 1);
        (void)ce0;
        Eigen::VectorXd next(ne - nb);
        for (int i = nb; i < ne; ++i) {
            auto [cb, ce] = tree.children(i);
            next(i - nb) = node_g(i) + scalar_risk(family_per_stage[s], tree.cond_prob(i),
                                                   cur.segment(cb - cb0, ce - cb));
        }
        cur = std::move(next);
    }
    return cur(0);
}

namespace {

// recompute the left-hand side of one risk constraint for a simulated policy
double constraint_value(const OcpSpec& spec, const RiskConstraintSpec& rc, int t,
                        const Eigen::MatrixXd& X, const Eigen::MatrixXd& U) {
    const ScenarioTree& tree = spec.tree;
    const int level = (t == tree.num_stages()) ? t : t + 1;
    auto [lb, le] = tree.stage_nodes(level);
    Eigen::VectorXd G(le - lb);
    for (int i = lb; i < le; ++i) {
        const int parent = (t == tree.num_stages()) ? i : tree.ancestor(i);
        G(i - lb) = rc.phi.eval(X.col(parent), U.col(parent));
    }
    if (rc.mode == ConstraintMode::StageWise)
        return scalar_risk(rc.family, tree.stage_probs(level), G);
    // nested: backward recursion with per-node families
    auto [cb0, ce0] = tree.stage_nodes(level);
    (void)ce0;
    Eigen::VectorXd cur = G;
    int base = cb0;
    for (int s = level - 1; s >= 0; --s) {
        auto [nb, ne] = tree.stage_nodes(s);
        Eigen::VectorXd next(ne - nb);
        for (int i = nb; i < ne; ++i) {
            auto it = rc.node_overrides.find(i);
            const RiskFamily& fam = it == rc.node_overrides.end() ? rc.family : it->second;
            auto [cb, ce] = tree.children(i);
            next(i - nb) = scalar_risk(fam, tree.cond_prob(i), cur.segment(cb - base, ce - cb));
        }
        cur = std::move(next);
        base = nb;
    }
    return cur(0);
}

}  // namespace

GridSearchResult grid_policy_search(const OcpSpec& spec, double resolution) {
    validate_ocp_spec(spec);
    const ScenarioTree& tree = spec.tree;
    if (spec.nu() != 1) throw std::invalid_argument("grid_policy_search: n_u must be 1");
    if (tree.num_nodes() > 15) throw std::invalid_argument("grid_policy_search: > 15 nodes");
    if (!spec.u_lo || !spec.u_hi) throw std::invalid_argument("grid_policy_search: unbounded inputs");
    const double lo = (*spec.u_lo)(0), hi = (*spec.u_hi)(0);
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("grid_policy_search: unbounded inputs");

    std::vector<int> dec;  // decision nodes
    for (int i = 0; i < tree.num_nodes(); ++i)
        if (!tree.is_leaf(i)) dec.push_back(i);
    const int k = static_cast<int>(dec.size());
    const int pts = k <= 8 ? 5 : 3;

    auto evaluate = [&](const std::vector<double>& u_node, double* obj) -> bool {
        Eigen::MatrixXd X(spec.nx(), tree.num_nodes());
        Eigen::MatrixXd U = Eigen::MatrixXd::Zero(1, tree.num_nodes());
        X.col(0) = spec.initial_state;
        for (int i = 0; i < tree.num_nodes(); ++i) {
            if (tree.is_leaf(i)) continue;
            U(0, i) = u_node[i];
            auto [cb, ce] = tree.children(i);
            for (int ip = cb; ip < ce; ++ip) {
                const auto& dyn = spec.dynamics[tree.event(ip).mode];
                X.col(ip) = dyn.A * X.col(i) + dyn.B.col(0) * u_node[i];
                if (dyn.c.size()) X.col(ip) += dyn.c;
            }
        }
        for (const auto& rc : spec.risk_constraints)
            for (int t : rc.stages)
                if (constraint_value(spec, rc, t, X, U) > 1e-7) return false;
        *obj = nested_cost_recursion(tree, spec.cost_risk, node_costs(spec, X, U));
        return true;
    };

    std::vector<double> best_u(tree.num_nodes(), 0.5 * (lo + hi));
    double best_val = std::numeric_limits<double>::infinity();
    bool found = false;
    std::vector<double> u_node(tree.num_nodes(), 0.0);
    std::vector<int> idx(k, 0);

    // shrinking joint grid around a moving incumbent, from a given start point
    auto shrink_from = [&](const std::vector<double>& start) {
        std::vector<double> center = start;
        std::vector<double> local_u = start;
        double local_val = std::numeric_limits<double>::infinity();
        bool local_found = false;
        double span = hi - lo;
        std::vector<std::vector<double>> grids(k);
        while (true) {
            // joint grid of `pts` points per decision node around the incumbent
            for (int j = 0; j < k; ++j) {
                grids[j].clear();
                for (int p = 0; p < pts; ++p) {
                    double frac = pts == 1 ? 0.0 : (2.0 * p / (pts - 1) - 1.0);
                    grids[j].push_back(std::clamp(center[dec[j]] + 0.5 * span * frac, lo, hi));
                }
            }
            std::fill(idx.begin(), idx.end(), 0);
            while (true) {
                for (int j = 0; j < k; ++j) u_node[dec[j]] = grids[j][idx[j]];
                double obj;
                if (evaluate(u_node, &obj) && obj < local_val) {
                    local_val = obj;
                    local_u = u_node;
                    local_found = true;
                }
                int j = 0;
                while (j < k && ++idx[j] == pts) idx[j++] = 0;
                if (j == k) break;
            }
            if (local_found) center = local_u;
            if (span <= resolution) break;
            span *= 0.7;
        }
        if (local_found && local_val < best_val) {
            best_val = local_val;
            best_u = local_u;
            found = true;
        }
    };

    // deterministic multi-start: the box midpoint plus seeded random points,
    // so nonsmooth (e.g. worst-case) objectives aren't trapped in one basin
    shrink_from(best_u);
    std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> unif(lo, hi);
    const int restarts = k <= 5 ? 12 : 3;
    for (int r = 0; r < restarts; ++r) {
        std::vector<double> start(tree.num_nodes(), 0.5 * (lo + hi));
        for (int j = 0; j < k; ++j) start[dec[j]] = unif(rng);
        shrink_from(start);
    }

    if (found) {
        // polish: multi-scale 1-D and pairwise 2-D grid refinement around the
        // incumbent, repeated until a full sweep yields no improvement
        for (int pass = 0; pass < 12; ++pass) {
            const double before = best_val;
            for (int j = 0; j < k; ++j) {
                double w = 0.5 * (hi - lo);
                while (w > 0.25 * resolution) {
                    for (int p = -4; p <= 4; ++p) {
                        u_node = best_u;
                        u_node[dec[j]] = std::clamp(best_u[dec[j]] + p * w / 4.0, lo, hi);
                        double obj;
                        if (evaluate(u_node, &obj) && obj < best_val) {
                            best_val = obj;
                            best_u = u_node;
                        }
                    }
                    w *= 0.5;
                }
            }
            for (int a = 0; a < k; ++a) {
                for (int b = a + 1; b < k; ++b) {
                    double w = 0.25 * (hi - lo);
                    while (w > 0.5 * resolution) {
                        for (int p = -3; p <= 3; ++p) {
                            for (int q = -3; q <= 3; ++q) {
                                if (p == 0 && q == 0) continue;
                                u_node = best_u;
                                u_node[dec[a]] = std::clamp(best_u[dec[a]] + p * w / 3.0, lo, hi);
                                u_node[dec[b]] = std::clamp(best_u[dec[b]] + q * w / 3.0, lo, hi);
                                double obj;
                                if (evaluate(u_node, &obj) && obj < best_val) {
                                    best_val = obj;
                                    best_u = u_node;
                                }
                            }
                        }
                        w *= 0.5;
                    }
                }
            }
            if (best_val >= before - 1e-12) break;
        }
    }
    return {best_val, best_u, found};
}

QpResult deterministic_equivalent_qp(const OcpSpec& spec) {
    validate_ocp_spec(spec);
    for (const auto& f : spec.cost_risk)
        if (f.kind != RiskFamily::Kind::Expectation)
            throw std::invalid_argument("deterministic_equivalent_qp: expectation families only");
    if (!spec.risk_constraints.empty())
        throw std::invalid_argument("deterministic_equivalent_qp: risk constraints unsupported");
    const ScenarioTree& tree = spec.tree;
    const int nx = spec.nx(), nu = spec.nu();

    std::vector<int> ucol(tree.num_nodes(), -1);
    int nU = 0;
    for (int i = 0; i < tree.num_nodes(); ++i)
        if (!tree.is_leaf(i)) {
            ucol[i] = nU;
            nU += nu;
        }

    if (spec.u_lo && spec.u_hi && ((*spec.u_hi - *spec.u_lo).minCoeff() < 0))
        return {false, 0.0, Eigen::VectorXd()};

    // eliminate states: x^i = M_i U + v_i along the tree
    std::vector<Eigen::MatrixXd> M(tree.num_nodes());
    std::vector<Eigen::VectorXd> v(tree.num_nodes());
    M[0] = Eigen::MatrixXd::Zero(nx, nU);
    v[0] = spec.initial_state;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nU, nU);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(nU);
    double constant = 0.0;

    for (int i = 0; i < tree.num_nodes(); ++i) {
        if (tree.is_leaf(i)) {
            H += tree.prob(i) * M[i].transpose() * spec.terminal_Q * M[i];
            g += 2.0 * tree.prob(i) * M[i].transpose() * spec.terminal_Q * v[i];
            constant += tree.prob(i) * v[i].dot(spec.terminal_Q * v[i]);
            continue;
        }
        auto [cb, ce] = tree.children(i);
        for (int ip = cb; ip < ce; ++ip) {
            const int w = tree.event(ip).mode;
            const auto& cost = spec.stage_cost[w];
            const double p = tree.prob(ip);
            H += p * M[i].transpose() * cost.Q * M[i];
            g += 2.0 * p * M[i].transpose() * cost.Q * v[i];
            constant += p * v[i].dot(cost.Q * v[i]);
            H.block(ucol[i], ucol[i], nu, nu) += p * cost.R;
            const auto& dyn = spec.dynamics[w];
            M[ip] = dyn.A * M[i];
            M[ip].middleCols(ucol[i], nu) += dyn.B;
            v[ip] = dyn.A * v[i];
            if (dyn.c.size()) v[ip] += dyn.c;
        }
    }

    auto objective = [&](const Eigen::VectorXd& U) { return U.dot(H * U) + g.dot(U) + constant; };

    if (!spec.u_lo && !spec.u_hi) {
        Eigen::VectorXd U = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(2.0 * H)
                                .solve(-g);
        return {true, objective(U), U};
    }

    // FISTA with box projection
    Eigen::VectorXd lo = spec.u_lo ? Eigen::VectorXd((*spec.u_lo).replicate(nU / nu, 1))
                                   : Eigen::VectorXd::Constant(nU, -1e30);
    Eigen::VectorXd hi = spec.u_hi ? Eigen::VectorXd((*spec.u_hi).replicate(nU / nu, 1))
                                   : Eigen::VectorXd::Constant(nU, 1e30);
    auto proj = [&](Eigen::VectorXd U) { return U.cwiseMax(lo).cwiseMin(hi); };
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(2.0 * H);
    const double L = std::max(es.eigenvalues().maxCoeff(), 1e-12);
    Eigen::VectorXd U = proj(Eigen::VectorXd::Zero(nU)), Y = U, Uprev = U;
    double tk = 1.0;
    for (int it = 0; it < 200000; ++it) {
        Eigen::VectorXd grad = 2.0 * H * Y + g;
        Uprev = U;
        U = proj(Y - grad / L);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        Y = U + ((tk - 1.0) / tn) * (U - Uprev);
        tk = tn;
        if (it % 50 == 0) {
            // gradient mapping at U
            Eigen::VectorXd gm = (U - proj(U - (2.0 * H * U + g) / L)) * L;
            if (gm.lpNorm<Eigen::Infinity>() < 1e-11 * (1.0 + g.lpNorm<Eigen::Infinity>())) break;
        }
    }
    return {true, objective(U), U};
}

double minimax_epigraph_value(const OcpSpec& spec) {
    validate_ocp_spec(spec);
    if (!spec.risk_constraints.empty())
        throw std::invalid_argument("minimax_epigraph_value: risk constraints unsupported");
    const ScenarioTree& tree = spec.tree;
    const int nx = spec.nx(), nu = spec.nu();
    const int n_nodes = tree.num_nodes();

    auto sqrt_psd = [](const Eigen::MatrixXd& Q) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        return Eigen::MatrixXd(ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose());
    };
    std::vector<Eigen::MatrixXd> MQ, MR;
    for (const auto& cost : spec.stage_cost) {
        MQ.push_back(sqrt_psd(cost.Q));
        MR.push_back(sqrt_psd(cost.R));
    }
    const Eigen::MatrixXd MQN = sqrt_psd(spec.terminal_Q);

    std::vector<int> xcol(n_nodes), ucol(n_nodes, -1), tcol(n_nodes, -1);
    int col = 0;
    for (int i = 0; i < n_nodes; ++i) {
        xcol[i] = col;
        col += nx;
        if (!tree.is_leaf(i)) {
            ucol[i] = col;
            col += nu;
        }
        if (i != 0) tcol[i] = col++;  // edge cost epigraph (terminal for leaves)
    }
    const int gcol = col++;  // worst-case epigraph
    std::vector<int> scol(n_nodes, -1);
    for (int i = 0; i < n_nodes; ++i)
        if (tree.is_leaf(i)) scol[i] = col++;

    std::vector<Eigen::Triplet<double>> T;
    std::vector<double> brows;
    Cone K;
    auto row = [&](double rhs) {
        brows.push_back(rhs);
        return static_cast<int>(brows.size()) - 1;
    };

    for (int k2 = 0; k2 < nx; ++k2) {
        const int r = row(spec.initial_state(k2));
        T.emplace_back(r, xcol[0] + k2, 1.0);
    }
    K.append(BlockType::Zero, nx);

    for (int i = 1; i < n_nodes; ++i) {
        const int a = tree.ancestor(i);
        const int w = tree.event(i).mode;
        const auto& dyn = spec.dynamics[w];
        for (int k2 = 0; k2 < nx; ++k2) {
            const int r = row(dyn.c.size() ? dyn.c(k2) : 0.0);
            T.emplace_back(r, xcol[i] + k2, 1.0);
            for (int j = 0; j < nx; ++j) T.emplace_back(r, xcol[a] + j, -dyn.A(k2, j));
            for (int j = 0; j < nu; ++j) T.emplace_back(r, ucol[a] + j, -dyn.B(k2, j));
        }
        K.append(BlockType::Zero, nx);
        int r = row(0.0);
        T.emplace_back(r, tcol[i], -1.0);
        row(0.5);
        for (int k2 = 0; k2 < nx; ++k2) {
            r = row(0.0);
            for (int j = 0; j < nx; ++j)
                if (MQ[w](k2, j) != 0.0) T.emplace_back(r, xcol[a] + j, -MQ[w](k2, j));
        }
        for (int k2 = 0; k2 < nu; ++k2) {
            r = row(0.0);
            for (int j = 0; j < nu; ++j)
                if (MR[w](k2, j) != 0.0) T.emplace_back(r, ucol[a] + j, -MR[w](k2, j));
        }
        K.append(BlockType::RotatedSecondOrder, 2 + nx + nu);
        if (tree.is_leaf(i)) {
            r = row(0.0);
            T.emplace_back(r, scol[i], -1.0);
            row(0.5);
            for (int k2 = 0; k2 < nx; ++k2) {
                r = row(0.0);
                for (int j = 0; j < nx; ++j)
                    if (MQN(k2, j) != 0.0) T.emplace_back(r, xcol[i] + j, -MQN(k2, j));
            }
            K.append(BlockType::RotatedSecondOrder, 2 + nx);
            // path cost bound: sum of edge epigraphs + terminal <= gamma
            r = row(0.0);
            for (int j = i; j != 0; j = tree.ancestor(j)) T.emplace_back(r, tcol[j], 1.0);
            T.emplace_back(r, scol[i], 1.0);
            T.emplace_back(r, gcol, -1.0);
            K.append(BlockType::Nonneg, 1);
        }
    }

    if (spec.u_lo || spec.u_hi) {
        for (int i = 0; i < n_nodes; ++i) {
            if (tree.is_leaf(i)) continue;
            for (int j = 0; j < nu; ++j) {
                if (spec.u_lo) {
                    const int r = row(-(*spec.u_lo)(j));
                    T.emplace_back(r, ucol[i] + j, -1.0);
                    K.append(BlockType::Nonneg, 1);
                }
                if (spec.u_hi) {
                    const int r = row((*spec.u_hi)(j));
                    T.emplace_back(r, ucol[i] + j, 1.0);
                    K.append(BlockType::Nonneg, 1);
                }
            }
        }
    }

    ConicProgram prog;
    prog.num_vars = col;
    prog.c = Eigen::VectorXd::Zero(col);
    prog.c(gcol) = 1.0;
    prog.b = Eigen::Map<Eigen::VectorXd>(brows.data(), brows.size());
    prog.A.resize(static_cast<int>(brows.size()), col);
    prog.A.setFromTriplets(T.begin(), T.end());
    prog.cone = std::move(K);

    SolverSettings st;
    st.eps = 1e-9;
    st.max_iters = 400000;
    Solution sol = solve(prog, st);
    if (sol.status != SolveStatus::Optimal &&
        !(sol.status == SolveStatus::MaxIters &&
          std::max({sol.primal_res, sol.dual_res, sol.gap}) <= 1e-6))
        throw std::runtime_error("minimax_epigraph_value: solve failed");
    return sol.z(gcol);
}

}  // namespace riskhorizon::oracle
