#include "riskhorizon/conic_solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include <Eigen/SparseCholesky>

namespace riskhorizon {

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::PrimalInfeasible: return "primal_infeasible";
        case SolveStatus::DualInfeasible: return "dual_infeasible";
        case SolveStatus::MaxIters: return "max_iters";
        case SolveStatus::NumericalError: return "numerical_error";
    }
    return "?";
}

Residuals compute_residuals(const ConicProgram& prog, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& y, const Eigen::VectorXd& s) {
    Residuals r;
    r.primal = (prog.A * z + s - prog.b).norm() / (1.0 + prog.b.norm());
    r.dual = (prog.A.transpose() * y + prog.c).norm() / (1.0 + prog.c.norm());
    const double pobj = prog.c.dot(z);
    const double dobj = -prog.b.dot(y);
    r.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    return r;
}

namespace {

struct Scaling {
    Eigen::VectorXd row;  // D diagonal (size m)
    Eigen::VectorXd col;  // E diagonal (size n)
    double rho_b = 1.0;
    double rho_c = 1.0;
};

// Ruiz equilibration. Rows belonging to one SOC/RSOC/EXP block share a
// common scale so the scaled slack stays in the same cone.
Scaling equilibrate(Eigen::SparseMatrix<double>& A, Eigen::VectorXd& b,
                    Eigen::VectorXd& c, const Cone& cone, int iters) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    Scaling sc;
    sc.row = Eigen::VectorXd::Ones(m);
    sc.col = Eigen::VectorXd::Ones(n);

    for (int pass = 0; pass < iters; ++pass) {
        Eigen::VectorXd rnorm = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd cnorm = Eigen::VectorXd::Zero(n);
        for (int k = 0; k < A.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
                const double a = std::abs(it.value());
                rnorm(it.row()) = std::max(rnorm(it.row()), a);
                cnorm(it.col()) = std::max(cnorm(it.col()), a);
            }
        }
        // unify row scales inside non-polyhedral blocks
        int off = 0;
        for (const auto& blk : cone.blocks()) {
            if (blk.type == BlockType::SecondOrder ||
                blk.type == BlockType::RotatedSecondOrder ||
                blk.type == BlockType::Exponential ||
                blk.type == BlockType::ExponentialDual) {
                const double mx = rnorm.segment(off, blk.dim).maxCoeff();
                rnorm.segment(off, blk.dim).setConstant(mx);
            }
            off += blk.dim;
        }
        Eigen::VectorXd dr(m), dc(n);
        for (int i = 0; i < m; ++i) dr(i) = rnorm(i) > 1e-12 ? 1.0 / std::sqrt(rnorm(i)) : 1.0;
        for (int j = 0; j < n; ++j) dc(j) = cnorm(j) > 1e-12 ? 1.0 / std::sqrt(cnorm(j)) : 1.0;
        for (int k = 0; k < A.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
                it.valueRef() *= dr(it.row()) * dc(it.col());
            }
        }
        sc.row.array() *= dr.array();
        sc.col.array() *= dc.array();
    }
    b.array() *= sc.row.array();
    c.array() *= sc.col.array();
    const double bn = b.norm();
    const double cn = c.norm();
    sc.rho_b = bn > 1e-12 ? 1.0 / bn : 1.0;
    sc.rho_c = cn > 1e-12 ? 1.0 / cn : 1.0;
    b *= sc.rho_b;
    c *= sc.rho_c;
    return sc;
}

struct Candidate {
    Eigen::VectorXd z, y, s;
    Residuals res;
    double worst() const { return std::max({res.primal, res.dual, res.gap}); }
};

}  // namespace

Solution solve(const ConicProgram& prog, const SolverSettings& settings) {
    using Clock = std::chrono::steady_clock;
    const auto t_start = Clock::now();

    const int n = prog.num_vars;
    const int m = prog.num_rows();
    if (prog.A.rows() != m || prog.A.cols() != n || prog.c.size() != n ||
        prog.cone.dim() != m) {
        throw std::invalid_argument("solve: inconsistent program dimensions");
    }

    Eigen::SparseMatrix<double> As = prog.A;
    Eigen::VectorXd bs = prog.b;
    Eigen::VectorXd cs = prog.c;
    Scaling sc;
    if (settings.scaling) {
        sc = equilibrate(As, bs, cs, prog.cone, 10);
    } else {
        sc.row = Eigen::VectorXd::Ones(m);
        sc.col = Eigen::VectorXd::Ones(n);
    }

    // The y-block metric weight: the iteration effectively runs on the data
    // (yscale*A, yscale*b, c), which weighs the primal feasibility rows
    // against stationarity. It is re-tuned from the observed primal/dual
    // residual ratio, which requires refactoring the KKT system.
    double yscale = 1.0;

    // KKT matrix [[I, A'], [A, -I]] (symmetric quasi-definite), refactored
    // only when yscale changes.
    Eigen::SparseMatrix<double> K(n + m, n + m);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    auto factor_kkt = [&]() {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(As.nonZeros() * 2 + n + m);
        for (int j = 0; j < n; ++j) trips.emplace_back(j, j, 1.0);
        for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -1.0);
        for (int k = 0; k < As.outerSize(); ++k) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(As, k); it; ++it) {
                trips.emplace_back(n + it.row(), it.col(), it.value());
                trips.emplace_back(it.col(), n + it.row(), it.value());
            }
        }
        K.setFromTriplets(trips.begin(), trips.end());
        ldlt.compute(K);
        return ldlt.info() == Eigen::Success;
    };
    if (!factor_kkt()) {
        Solution sol;
        sol.status = SolveStatus::NumericalError;
        return sol;
    }

    const Cone dual_cone = prog.cone.dual();

    Eigen::VectorXd kkt_rhs(n + m), kkt_sol(n + m);
    auto solve_M = [&](const Eigen::VectorXd& wx, const Eigen::VectorXd& wy,
                       Eigen::VectorXd& px, Eigen::VectorXd& py) {
        kkt_rhs.head(n) = wx;
        kkt_rhs.tail(m) = -wy;
        kkt_sol.noalias() = ldlt.solve(kkt_rhs);
        px = kkt_sol.head(n);
        py = kkt_sol.tail(m);
    };

    Eigen::VectorXd hx = cs, hy = bs;
    Eigen::VectorXd gx, gy;
    double gamma = 0.0;
    auto refresh_embedding = [&]() {
        hy = bs;
        solve_M(hx, hy, gx, gy);
        gamma = 1.0 + hx.dot(gx) + hy.dot(gy);
    };
    refresh_embedding();

    // HSDE iterates u = (x, y, tau), v = (r, s, kappa), stacked into one
    // state vector p = (u, v) so the whole iteration is a fixed-point map.
    const int N = n + m + 1;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(2 * N);
    p(n + m) = 1.0;      // tau
    p(2 * N - 1) = 1.0;  // kappa

    const double alpha = settings.relax_alpha;
    Eigen::VectorXd g(2 * N);
    // iteration workspace, reused across calls to avoid per-iteration allocation
    Eigen::VectorXd rx(n), ry(m), px(n), py(m), ox(n), oy(m), proj_in(m), nuy(m);
    auto apply = [&](const Eigen::VectorXd& in, Eigen::VectorXd& out) {
        const auto ux = in.segment(0, n);
        const auto uy = in.segment(n, m);
        const double utau = in(n + m);
        const auto vx = in.segment(N, n);
        const auto vy = in.segment(N + n, m);
        const double vkappa = in(2 * N - 1);

        // linear solve: utilde = (I+Q)^{-1} (u+v)
        const double wtau = utau + vkappa;
        rx = ux + vx - wtau * hx;
        ry = uy + vy - wtau * hy;
        solve_M(rx, ry, px, py);
        const double corr = (hx.dot(px) + hy.dot(py)) / gamma;
        px -= corr * gx;  // now the x part of utilde
        py -= corr * gy;
        const double ttau = wtau + hx.dot(px) + hy.dot(py);

        // over-relaxation
        ox = alpha * px + (1 - alpha) * ux;
        oy = alpha * py + (1 - alpha) * uy;
        const double otau = alpha * ttau + (1 - alpha) * utau;

        // cone projection: x free, y in K*, tau >= 0
        proj_in = oy - vy;
        nuy = project(dual_cone, proj_in);
        const double nutau = std::max(otau - vkappa, 0.0);

        out.segment(0, n) = ox - vx;
        out.segment(n, m) = nuy;
        out(n + m) = nutau;
        out.segment(N, n).setZero();  // v component of the free block
        out.segment(N + n, m) = vy - oy + nuy;
        out(2 * N - 1) = vkappa - otau + nutau;
    };

    auto unscale = [&](const Eigen::VectorXd& xsc, const Eigen::VectorXd& ysc,
                       const Eigen::VectorXd& ssc, Candidate& cand) {
        cand.z = sc.col.asDiagonal() * xsc / sc.rho_b;
        cand.y = sc.row.asDiagonal() * ysc * yscale / sc.rho_c;
        cand.s = (ssc.array() / sc.row.array()).matrix() / (yscale * sc.rho_b);
        cand.res = compute_residuals(prog, cand.z, cand.y, cand.s);
    };

    // safeguarded Anderson acceleration (type II) on the fixed-point map
    const int mem = std::max(settings.anderson_memory, 0);
    Eigen::MatrixXd dG(2 * N, mem), dF(2 * N, mem);
    Eigen::MatrixXd gram(mem, mem);  // dF' dF, updated one column at a time
    Eigen::VectorXd prev_g, prev_f;
    int aa_cols = 0, aa_next = 0;
    bool have_prev = false;
    double best_fn = std::numeric_limits<double>::infinity();

    Solution sol;
    std::optional<Candidate> best;
    int last_rescale = 0;
    int iter = 0;
    for (; iter < settings.max_iters; ++iter) {
        apply(p, g);
        if (!g.allFinite()) {
            sol.status = SolveStatus::NumericalError;
            sol.iterations = iter + 1;
            sol.solve_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
            return sol;
        }
        Eigen::VectorXd f = g - p;
        const double fn = f.norm();

        const bool do_check =
            (iter + 1) % settings.check_interval == 0 || iter + 1 == settings.max_iters;
        if (do_check) {
            const auto uy = g.segment(n, m);
            const double utau = g(n + m);
            const auto vy = g.segment(N + n, m);
            const double vkappa = g(2 * N - 1);

            double check_pres = -1.0, check_dres = -1.0;
            const double scale_u = std::max({utau, vkappa, 1e-12});
            if (utau > 1e-9 * scale_u && utau > 0) {
                Candidate cand;
                unscale(g.segment(0, n) / utau, uy / utau, vy / utau, cand);
                check_pres = cand.res.primal;
                check_dres = cand.res.dual;
                if (!best || cand.worst() < best->worst()) best = cand;
                if (cand.res.primal <= settings.eps && cand.res.dual <= settings.eps &&
                    cand.res.gap <= settings.eps) {
                    sol.status = SolveStatus::Optimal;
                    sol.z = cand.z;
                    sol.y = cand.y;
                    sol.s = cand.s;
                    sol.objective = prog.c.dot(cand.z);
                    sol.primal_res = cand.res.primal;
                    sol.dual_res = cand.res.dual;
                    sol.gap = cand.res.gap;
                    sol.iterations = iter + 1;
                    sol.solve_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
                    return sol;
                }
            }

            // infeasibility / unboundedness certificates from the embedding ray
            Eigen::VectorXd y_un = sc.row.asDiagonal() * uy;  // unscaled ray
            const double bty = prog.b.dot(y_un);
            if (bty < -1e-12) {
                Eigen::VectorXd y_cert = y_un / (-bty);
                if ((prog.A.transpose() * y_cert).norm() <= settings.eps) {
                    sol.status = SolveStatus::PrimalInfeasible;
                    sol.y = y_cert;
                    sol.iterations = iter + 1;
                    sol.solve_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
                    return sol;
                }
            }
            Eigen::VectorXd x_un = sc.col.asDiagonal() * g.segment(0, n);
            const double ctx = prog.c.dot(x_un);
            if (ctx < -1e-12) {
                Eigen::VectorXd x_cert = x_un / (-ctx);
                Eigen::VectorXd s_cert =
                    (vy.array() / sc.row.array()).matrix() / (yscale * -ctx);
                if ((prog.A * x_cert + s_cert).norm() <= settings.eps) {
                    sol.status = SolveStatus::DualInfeasible;
                    sol.z = x_cert;
                    sol.s = s_cert;
                    sol.iterations = iter + 1;
                    sol.solve_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
                    return sol;
                }
            }

            if (settings.adaptive_scale && check_pres >= 0.0 && iter + 1 >= 200 &&
                iter - last_rescale >= 200) {
                const double ratio = (check_pres + 1e-14) / (check_dres + 1e-14);
                double f = std::clamp(std::sqrt(ratio), 0.1, 10.0);
                if (f > 2.0 || f < 0.5) {
                    const double target = std::clamp(yscale * f, 1e-6, 1e6);
                    f = target / yscale;
                    if (f != 1.0) {
                        As *= f;
                        bs *= f;
                        yscale = target;
                        if (!factor_kkt()) {
                            sol.status = SolveStatus::NumericalError;
                            sol.iterations = iter + 1;
                            sol.solve_time_ms =
                                std::chrono::duration<double, std::milli>(Clock::now() - t_start)
                                    .count();
                            return sol;
                        }
                        refresh_embedding();
                        // carry the iterate across: the y part of u is
                        // dual-like (shrinks with the weight), the y part of
                        // v is slack-like (grows with it)
                        g.segment(n, m) /= f;
                        g.segment(N + n, m) *= f;
                        p = g;
                        aa_cols = 0;
                        aa_next = 0;
                        have_prev = false;
                        best_fn = std::numeric_limits<double>::infinity();
                        last_rescale = iter;
                        continue;
                    }
                }
            }
        }

        // pick the next state: extrapolate from the residual history unless
        // the residual has blown up, in which case fall back to a plain step
        bool plain = true;
        if (mem > 0) {
            if (fn > 10.0 * best_fn) {
                aa_cols = 0;
                aa_next = 0;
                best_fn = fn;
            } else if (have_prev) {
                dG.col(aa_next) = g - prev_g;
                dF.col(aa_next) = f - prev_f;
                const int newcol = aa_next;
                aa_next = (aa_next + 1) % mem;
                aa_cols = std::min(aa_cols + 1, mem);

                const auto Fm = dF.leftCols(aa_cols);
                const Eigen::VectorXd gcol = Fm.transpose() * dF.col(newcol);
                gram.block(0, newcol, aa_cols, 1) = gcol;
                gram.block(newcol, 0, 1, aa_cols) = gcol.transpose();
                Eigen::MatrixXd M = gram.topLeftCorner(aa_cols, aa_cols);
                const double reg = 1e-12 * std::max(M.trace(), 1e-30);
                M.diagonal().array() += reg;
                Eigen::VectorXd gamma = M.ldlt().solve(Fm.transpose() * f);
                if (gamma.allFinite() && gamma.norm() <= 1e4) {
                    p = g - dG.leftCols(aa_cols) * gamma;
                    plain = false;
                } else {
                    aa_cols = 0;
                    aa_next = 0;
                }
            }
        }
        if (plain) p = g;
        best_fn = std::min(best_fn, fn);
        prev_g = g;
        prev_f = f;
        have_prev = true;
    }

    sol.status = SolveStatus::MaxIters;
    sol.iterations = iter;
    if (best) {
        sol.z = best->z;
        sol.y = best->y;
        sol.s = best->s;
        sol.objective = prog.c.dot(best->z);
        sol.primal_res = best->res.primal;
        sol.dual_res = best->res.dual;
        sol.gap = best->res.gap;
    }
    sol.solve_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
    return sol;
}

namespace {

// classify each row as an individually removable scalar row
enum class RowKind { ZeroEq, Nonneg, Other };

std::vector<RowKind> row_kinds(const Cone& cone) {
    std::vector<RowKind> kinds;
    for (const auto& blk : cone.blocks()) {
        RowKind k = RowKind::Other;
        if (blk.type == BlockType::Zero) k = RowKind::ZeroEq;
        else if (blk.type == BlockType::Nonneg) k = RowKind::Nonneg;
        for (int i = 0; i < blk.dim; ++i) kinds.push_back(k);
    }
    return kinds;
}

}  // namespace

PresolveResult presolve(const ConicProgram& prog) {
    const int n = prog.num_vars;
    const int m = prog.num_rows();
    PresolveResult pr;
    pr.is_fixed.assign(n, false);
    pr.fixed_values = Eigen::VectorXd::Zero(n);

    Eigen::MatrixXd Ad = Eigen::MatrixXd(prog.A);  // presolve runs on small repro programs
    Eigen::VectorXd b = prog.b;
    auto kinds = row_kinds(prog.cone);
    std::vector<bool> row_dead(m, false);
    const double tol = 1e-12;

    bool changed = true;
    int passes = 0;
    while (changed && passes++ < 10) {
        changed = false;
        for (int i = 0; i < m; ++i) {
            if (row_dead[i]) continue;
            int nz = 0, col = -1;
            for (int j = 0; j < n; ++j) {
                if (pr.is_fixed[j]) continue;
                if (std::abs(Ad(i, j)) > tol) { ++nz; col = j; if (nz > 1) break; }
            }
            if (nz == 0) {
                if (kinds[i] == RowKind::ZeroEq) {
                    if (std::abs(b(i)) > 1e-10) { pr.infeasible = true; return pr; }
                    row_dead[i] = true; changed = true;
                } else if (kinds[i] == RowKind::Nonneg) {
                    if (b(i) < -1e-10) { pr.infeasible = true; return pr; }
                    row_dead[i] = true; changed = true;
                }
            } else if (nz == 1 && kinds[i] == RowKind::ZeroEq) {
                const double val = b(i) / Ad(i, col);
                pr.is_fixed[col] = true;
                pr.fixed_values(col) = val;
                b -= Ad.col(col) * val;
                row_dead[i] = true;
                changed = true;
            }
        }
    }

    for (int j = 0; j < n; ++j) {
        if (pr.is_fixed[j]) pr.objective_offset += prog.c(j) * pr.fixed_values(j);
        else pr.kept_cols.push_back(j);
    }

    // rebuild program; rows removed only from scalar Zero/Nonneg blocks
    Cone new_cone;
    std::vector<int> keep_row;
    int off = 0;
    for (const auto& blk : prog.cone.blocks()) {
        if (blk.type == BlockType::Zero || blk.type == BlockType::Nonneg) {
            int kept = 0;
            for (int i = 0; i < blk.dim; ++i) {
                if (!row_dead[off + i]) { keep_row.push_back(off + i); ++kept; }
            }
            if (kept > 0) new_cone.append(blk.type, kept);
        } else {
            for (int i = 0; i < blk.dim; ++i) keep_row.push_back(off + i);
            new_cone.append(blk.type, blk.dim);
        }
        off += blk.dim;
    }
    pr.kept_rows = keep_row;

    ConicProgram out;
    out.num_vars = static_cast<int>(pr.kept_cols.size());
    out.c.resize(out.num_vars);
    for (size_t j = 0; j < pr.kept_cols.size(); ++j) out.c(j) = prog.c(pr.kept_cols[j]);
    out.b.resize(static_cast<int>(keep_row.size()));
    for (size_t i = 0; i < keep_row.size(); ++i) out.b(i) = b(keep_row[i]);
    std::vector<Eigen::Triplet<double>> trips;
    for (size_t i = 0; i < keep_row.size(); ++i) {
        for (size_t j = 0; j < pr.kept_cols.size(); ++j) {
            const double a = Ad(keep_row[i], pr.kept_cols[j]);
            if (std::abs(a) > tol) trips.emplace_back(static_cast<int>(i), static_cast<int>(j), a);
        }
    }
    out.A.resize(static_cast<int>(keep_row.size()), out.num_vars);
    out.A.setFromTriplets(trips.begin(), trips.end());
    out.cone = new_cone;
    pr.reduced = std::move(out);
    return pr;
}

Eigen::VectorXd restore_variables(const PresolveResult& pr, const Eigen::VectorXd& z_reduced) {
    Eigen::VectorXd z = pr.fixed_values;
    for (size_t j = 0; j < pr.kept_cols.size(); ++j) z(pr.kept_cols[j]) = z_reduced(j);
    return z;
}

std::string program_to_json(const ConicProgram& prog) {
    nlohmann::json j;
    j["c"] = std::vector<double>(prog.c.data(), prog.c.data() + prog.c.size());
    j["b"] = std::vector<double>(prog.b.data(), prog.b.data() + prog.b.size());
    std::vector<int> rows, cols;
    std::vector<double> vals;
    for (int k = 0; k < prog.A.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(prog.A, k); it; ++it) {
            rows.push_back(static_cast<int>(it.row()));
            cols.push_back(static_cast<int>(it.col()));
            vals.push_back(it.value());
        }
    }
    j["A"] = {{"rows", rows}, {"cols", cols}, {"vals", vals}};
    j["cone"] = prog.cone.to_strings();
    return j.dump(2);
}

ConicProgram program_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ConicProgram prog;
    std::vector<double> c = j.at("c").get<std::vector<double>>();
    std::vector<double> b = j.at("b").get<std::vector<double>>();
    prog.num_vars = static_cast<int>(c.size());
    prog.c = Eigen::Map<Eigen::VectorXd>(c.data(), c.size());
    prog.b = Eigen::Map<Eigen::VectorXd>(b.data(), b.size());
    prog.cone = Cone::from_strings(j.at("cone").get<std::vector<std::string>>());
    auto rows = j.at("A").at("rows").get<std::vector<int>>();
    auto cols = j.at("A").at("cols").get<std::vector<int>>();
    auto vals = j.at("A").at("vals").get<std::vector<double>>();
    std::vector<Eigen::Triplet<double>> trips;
    for (size_t k = 0; k < vals.size(); ++k) trips.emplace_back(rows[k], cols[k], vals[k]);
    prog.A.resize(prog.b.size(), prog.num_vars);
    prog.A.setFromTriplets(trips.begin(), trips.end());
    return prog;
}

}  // namespace riskhorizon
