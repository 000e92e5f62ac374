#include "riskhorizon/risk.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace riskhorizon {

RiskFamily RiskFamily::expectation() { return {Kind::Expectation, 1.0, 0.0, nullptr}; }
RiskFamily RiskFamily::max() { return {Kind::Max, 0.0, 0.0, nullptr}; }

RiskFamily RiskFamily::avar(double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("AVaR level must lie in [0, 1]");
    return {Kind::AVaR, alpha, 0.0, nullptr};
}

RiskFamily RiskFamily::evar(double alpha) {
    if (alpha <= 0.0 || alpha > 1.0)
        throw std::invalid_argument("EVaR level must lie in (0, 1]; the alpha = 0 limit is Max");
    return {Kind::EVaR, alpha, 0.0, nullptr};
}

RiskFamily RiskFamily::regularized(const RiskFamily& base, double lambda) {
    if (lambda <= 0.0 || lambda > 1.0)
        throw std::invalid_argument("regularization weight must lie in (0, 1]");
    RiskFamily f{Kind::Regularized, 0.0, lambda, std::make_shared<RiskFamily>(base)};
    return f;
}

bool RiskFamily::strictly_monotone() const {
    switch (kind) {
        case Kind::Expectation: return true;
        case Kind::EVaR: return true;  // strongly monotone
        case Kind::Regularized: return true;
        case Kind::AVaR: return alpha == 1.0;
        case Kind::Max: return false;
    }
    return false;
}

namespace {

nlohmann::json family_json(const RiskFamily& f) {
    nlohmann::json j;
    switch (f.kind) {
        case RiskFamily::Kind::Expectation: j["kind"] = "expectation"; break;
        case RiskFamily::Kind::Max: j["kind"] = "max"; break;
        case RiskFamily::Kind::AVaR: j["kind"] = "avar"; j["alpha"] = f.alpha; break;
        case RiskFamily::Kind::EVaR: j["kind"] = "evar"; j["alpha"] = f.alpha; break;
        case RiskFamily::Kind::Regularized:
            j["kind"] = "regularized";
            j["lambda"] = f.lambda;
            j["base"] = family_json(*f.base);
            break;
    }
    return j;
}

RiskFamily family_from(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "expectation") return RiskFamily::expectation();
    if (kind == "max") return RiskFamily::max();
    if (kind == "avar") return RiskFamily::avar(j.at("alpha").get<double>());
    if (kind == "evar") return RiskFamily::evar(j.at("alpha").get<double>());
    if (kind == "regularized")
        return RiskFamily::regularized(family_from(j.at("base")), j.at("lambda").get<double>());
    throw std::invalid_argument("unknown risk family kind: " + kind);
}

}  // namespace

std::string RiskFamily::to_json() const { return family_json(*this).dump(); }

RiskFamily RiskFamily::from_json(const std::string& text) {
    return family_from(nlohmann::json::parse(text));
}

std::string RiskFamily::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::Expectation: os << "expectation"; break;
        case Kind::Max: os << "max"; break;
        case Kind::AVaR: os << "avar(" << alpha << ")"; break;
        case Kind::EVaR: os << "evar(" << alpha << ")"; break;
        case Kind::Regularized: os << "regularized(" << base->describe() << ", " << lambda << ")"; break;
    }
    return os.str();
}

SolverSettings risk_solver_settings() {
    SolverSettings s;
    s.eps = 1e-9;
    s.max_iters = 250000;
    s.check_interval = 20;
    return s;
}

namespace {

void check_nominal(const Eigen::VectorXd& pi) {
    if (pi.size() < 1) throw std::invalid_argument("empty nominal distribution");
    for (int i = 0; i < pi.size(); ++i) {
        if (!(pi(i) > 0.0)) throw std::invalid_argument("nominal probabilities must be strictly positive");
    }
    if (std::abs(pi.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("nominal probabilities must sum to 1");
}

ConicRiskSpec make_expectation_spec(const Eigen::VectorXd& pi) {
    const int n = static_cast<int>(pi.size());
    ConicRiskSpec s;
    s.n = n;
    s.r = 0;
    s.E = Eigen::MatrixXd::Identity(n, n);
    s.F = Eigen::MatrixXd::Zero(n, 0);
    s.b = pi;
    s.cone = Cone::zero(n);
    s.nominal = pi;
    return s;
}

ConicRiskSpec make_max_spec(const Eigen::VectorXd& pi) {
    const int n = static_cast<int>(pi.size());
    ConicRiskSpec s;
    s.n = n;
    s.r = 0;
    s.E = Eigen::MatrixXd(n + 1, n);
    s.E.topRows(n) = -Eigen::MatrixXd::Identity(n, n);
    s.E.row(n).setOnes();
    s.F = Eigen::MatrixXd::Zero(n + 1, 0);
    s.b = Eigen::VectorXd::Zero(n + 1);
    s.b(n) = 1.0;
    s.cone = Cone::nonneg(n);
    s.cone.append(BlockType::Zero, 1);
    s.nominal = pi;
    return s;
}

ConicRiskSpec make_avar_spec(double alpha, const Eigen::VectorXd& pi) {
    if (alpha == 0.0) return make_max_spec(pi);
    const int n = static_cast<int>(pi.size());
    ConicRiskSpec s;
    s.n = n;
    s.r = 0;
    s.E = Eigen::MatrixXd(2 * n + 1, n);
    s.E.topRows(n) = Eigen::MatrixXd::Identity(n, n);
    s.E.middleRows(n, n) = -Eigen::MatrixXd::Identity(n, n);
    s.E.row(2 * n).setOnes();
    s.F = Eigen::MatrixXd::Zero(2 * n + 1, 0);
    s.b = Eigen::VectorXd::Zero(2 * n + 1);
    s.b.head(n) = pi / alpha;
    s.b(2 * n) = 1.0;
    s.cone = Cone::nonneg(2 * n);
    s.cone.append(BlockType::Zero, 1);
    s.nominal = pi;
    return s;
}

ConicRiskSpec make_evar_spec(double alpha, const Eigen::VectorXd& pi) {
    // at alpha = 1 the KL ball has radius zero: the set is exactly {pi},
    // and the exponential-cone description of it degenerates numerically
    if (alpha == 1.0) return make_expectation_spec(pi);
    const int n = static_cast<int>(pi.size());
    const int m = 2 + 3 * n;
    ConicRiskSpec s;
    s.n = n;
    s.r = n;
    s.E = Eigen::MatrixXd::Zero(m, n);
    s.F = Eigen::MatrixXd::Zero(m, n);
    s.b = Eigen::VectorXd::Zero(m);
    // sum nu_i <= -ln(alpha)
    s.F.row(0).setOnes();
    s.b(0) = -std::log(alpha);
    s.cone = Cone::nonneg(1);
    // sum mu_i = 1
    s.E.row(1).setOnes();
    s.b(1) = 1.0;
    s.cone.append(BlockType::Zero, 1);
    // (-nu_i, mu_i, pi_i) in Kexp per outcome
    for (int i = 0; i < n; ++i) {
        const int row = 2 + 3 * i;
        s.F(row, i) = 1.0;        // slack = -nu_i
        s.E(row + 1, i) = -1.0;   // slack = mu_i
        s.b(row + 2) = pi(i);     // slack = pi_i
        s.cone.append(BlockType::Exponential, 3);
    }
    s.nominal = pi;
    return s;
}

ConicRiskSpec make_regularized_spec(const RiskFamily& family, const Eigen::VectorXd& pi);

ConicRiskSpec make_spec_impl(const RiskFamily& family, const Eigen::VectorXd& pi) {
    switch (family.kind) {
        case RiskFamily::Kind::Expectation: return make_expectation_spec(pi);
        case RiskFamily::Kind::Max: return make_max_spec(pi);
        case RiskFamily::Kind::AVaR: return make_avar_spec(family.alpha, pi);
        case RiskFamily::Kind::EVaR: return make_evar_spec(family.alpha, pi);
        case RiskFamily::Kind::Regularized: return make_regularized_spec(family, pi);
    }
    throw std::logic_error("unreachable");
}

// mu = lambda pi + (1-lambda) nu_a with nu_a in the base ambiguity set
ConicRiskSpec make_regularized_spec(const RiskFamily& family, const Eigen::VectorXd& pi) {
    const ConicRiskSpec base = make_spec_impl(*family.base, pi);
    const double lambda = family.lambda;
    const int n = base.n;
    const int mb = static_cast<int>(base.b.size());
    ConicRiskSpec s;
    s.n = n;
    s.r = n + base.r;
    s.E = Eigen::MatrixXd::Zero(mb + n, n);
    s.E.bottomRows(n) = Eigen::MatrixXd::Identity(n, n);
    s.F = Eigen::MatrixXd::Zero(mb + n, s.r);
    s.F.topLeftCorner(mb, n) = base.E;
    if (base.r > 0) s.F.topRightCorner(mb, base.r) = base.F;
    s.F.bottomLeftCorner(n, n) = (lambda - 1.0) * Eigen::MatrixXd::Identity(n, n);
    s.b = Eigen::VectorXd(mb + n);
    s.b.head(mb) = base.b;
    s.b.tail(n) = lambda * pi;
    s.cone = base.cone;
    s.cone.append(BlockType::Zero, n);
    s.nominal = pi;
    return s;
}

}  // namespace

ConicRiskSpec make_conic_spec(const RiskFamily& family, const Eigen::VectorXd& nominal) {
    check_nominal(nominal);
    ConicRiskSpec s = make_spec_impl(family, nominal);
    s.family = family;
    return s;
}

namespace {

[[noreturn]] void raise_solver_failure(const char* what, const Solution& sol) {
    std::ostringstream os;
    os << what << ": solver status " << to_string(sol.status)
       << " (primal_res=" << sol.primal_res << ", dual_res=" << sol.dual_res
       << ", gap=" << sol.gap << ", iters=" << sol.iterations << ")";
    throw std::runtime_error(os.str());
}

// MaxIters with near-eps residuals is accepted; anything worse is an error.
bool acceptable(const Solution& sol) {
    if (sol.status == SolveStatus::Optimal) return true;
    if (sol.status == SolveStatus::MaxIters) {
        return std::max({sol.primal_res, sol.dual_res, sol.gap}) <= 1e-6;
    }
    return false;
}

}  // namespace

double eval_primal(const ConicRiskSpec& spec, const Eigen::VectorXd& Z,
                   const SolverSettings& settings) {
    if (Z.size() != spec.n) throw std::invalid_argument("eval_primal: |Z| != n");
    ConicProgram prog;
    prog.num_vars = spec.n + spec.r;
    prog.c = Eigen::VectorXd::Zero(prog.num_vars);
    prog.c.head(spec.n) = -Z;
    Eigen::MatrixXd Afull(spec.b.size(), prog.num_vars);
    Afull.leftCols(spec.n) = spec.E;
    if (spec.r > 0) Afull.rightCols(spec.r) = spec.F;
    prog.A = Afull.sparseView();
    prog.b = spec.b;
    prog.cone = spec.cone;
    Solution sol = solve(prog, settings);
    if (!acceptable(sol)) raise_solver_failure("eval_primal", sol);
    return -sol.objective;
}

DualEval eval_dual(const ConicRiskSpec& spec, const Eigen::VectorXd& Z,
                   const SolverSettings& settings) {
    if (Z.size() != spec.n) throw std::invalid_argument("eval_dual: |Z| != n");
    const int m = static_cast<int>(spec.b.size());
    ConicProgram prog;
    prog.num_vars = m;
    prog.c = spec.b;
    Eigen::MatrixXd Afull(spec.n + spec.r + m, m);
    Afull.topRows(spec.n) = spec.E.transpose();
    if (spec.r > 0) Afull.middleRows(spec.n, spec.r) = spec.F.transpose();
    Afull.bottomRows(m) = -Eigen::MatrixXd::Identity(m, m);
    prog.A = Afull.sparseView();
    prog.b = Eigen::VectorXd::Zero(spec.n + spec.r + m);
    prog.b.head(spec.n) = Z;
    prog.cone = Cone::zero(spec.n + spec.r);
    prog.cone.append(spec.cone.dual());
    Solution sol = solve(prog, settings);
    if (sol.status == SolveStatus::PrimalInfeasible)
        throw std::runtime_error("eval_dual: dual program infeasible (primal unbounded; spec defect)");
    if (!acceptable(sol)) raise_solver_failure("eval_dual", sol);
    return {sol.objective, sol.z};
}

double avar_closed_form(double alpha, const Eigen::VectorXd& pi, const Eigen::VectorXd& Z) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("AVaR level must lie in [0, 1]");
    if (pi.size() != Z.size()) throw std::invalid_argument("avar_closed_form: size mismatch");
    if (alpha == 0.0) return Z.maxCoeff();
    double best = std::numeric_limits<double>::infinity();
    // objective t + (1/alpha) E (Z - t)+ is piecewise linear convex in t,
    // so the minimum is attained at a breakpoint t in {Z_i}
    for (int k = 0; k < Z.size(); ++k) {
        const double t = Z(k);
        double e = 0.0;
        for (int i = 0; i < Z.size(); ++i) e += pi(i) * std::max(Z(i) - t, 0.0);
        best = std::min(best, t + e / alpha);
    }
    return best;
}

std::optional<double> eval_closed_form(const RiskFamily& family, const Eigen::VectorXd& pi,
                                       const Eigen::VectorXd& Z) {
    switch (family.kind) {
        case RiskFamily::Kind::Expectation: return pi.dot(Z);
        case RiskFamily::Kind::Max: return Z.maxCoeff();
        case RiskFamily::Kind::AVaR: return avar_closed_form(family.alpha, pi, Z);
        case RiskFamily::Kind::EVaR: return std::nullopt;
        case RiskFamily::Kind::Regularized: {
            auto base = eval_closed_form(*family.base, pi, Z);
            if (!base) return std::nullopt;
            return (1.0 - family.lambda) * *base + family.lambda * pi.dot(Z);
        }
    }
    return std::nullopt;
}

ConditionalRiskMapping make_conditional(const ScenarioTree& tree, int stage,
                                        const RiskFamily& family,
                                        const std::map<int, RiskFamily>& node_overrides) {
    if (stage < 0 || stage >= tree.num_stages())
        throw std::out_of_range("conditional risk mapping stage out of range");
    ConditionalRiskMapping crm;
    crm.stage = stage;
    auto [b, e] = tree.stage_nodes(stage);
    for (int i = b; i < e; ++i) {
        auto it = node_overrides.find(i);
        const RiskFamily& f = it == node_overrides.end() ? family : it->second;
        crm.specs.push_back(make_conic_spec(f, tree.cond_prob(i)));
    }
    return crm;
}

Eigen::VectorXd eval_conditional(const ConditionalRiskMapping& crm,
                                 const Eigen::VectorXd& Z_next,
                                 const SolverSettings& settings) {
    int total = 0;
    for (const auto& s : crm.specs) total += s.n;
    if (Z_next.size() != total)
        throw std::invalid_argument("eval_conditional: Z size does not match nodes(t+1)");
    Eigen::VectorXd out(crm.specs.size());
    int off = 0;
    for (size_t k = 0; k < crm.specs.size(); ++k) {
        const auto& spec = crm.specs[k];
        const Eigen::VectorXd slice = Z_next.segment(off, spec.n);
        std::optional<double> cf;
        if (spec.family) cf = eval_closed_form(*spec.family, spec.nominal, slice);
        out(k) = cf ? *cf : eval_dual(spec, slice, settings).value;
        off += spec.n;
    }
    return out;
}

double eval_nested(const ScenarioTree& tree, const std::vector<RiskFamily>& family_per_stage,
                   const Eigen::VectorXd& Z_t, int t, const SolverSettings& settings) {
    auto [b, e] = tree.stage_nodes(t);
    if (Z_t.size() != e - b) throw std::invalid_argument("eval_nested: Z size does not match nodes(t)");
    if (static_cast<int>(family_per_stage.size()) < t)
        throw std::invalid_argument("eval_nested: need one family per stage 0..t-1");
    Eigen::VectorXd Z = Z_t;
    for (int j = t - 1; j >= 0; --j) {
        Z = eval_conditional(make_conditional(tree, j, family_per_stage[j]), Z, settings);
    }
    return Z(0);
}

namespace {

// Active-set enumeration of {x in R^d : Aeq x = beq, Ain x <= bin}.
std::vector<Eigen::VectorXd> enumerate_polytope_vertices(const Eigen::MatrixXd& Aeq,
                                                         const Eigen::VectorXd& beq,
                                                         const Eigen::MatrixXd& Ain,
                                                         const Eigen::VectorXd& bin) {
    const int d = static_cast<int>(Aeq.cols());
    const int p = static_cast<int>(Aeq.rows());
    const int q = static_cast<int>(Ain.rows());
    const int need = d - p;
    std::vector<Eigen::VectorXd> verts;
    if (need < 0) return verts;

    std::vector<int> comb(need);
    std::iota(comb.begin(), comb.end(), 0);
    const double feas_tol = 1e-9;

    auto process = [&](const std::vector<int>& act) {
        Eigen::MatrixXd M(d, d);
        Eigen::VectorXd rhs(d);
        M.topRows(p) = Aeq;
        rhs.head(p) = beq;
        for (int k = 0; k < need; ++k) {
            M.row(p + k) = Ain.row(act[k]);
            rhs(p + k) = bin(act[k]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
        if (lu.rank() < d) return;
        Eigen::VectorXd x = lu.solve(rhs);
        if ((M * x - rhs).lpNorm<Eigen::Infinity>() > 1e-8) return;
        for (int i = 0; i < q; ++i) {
            if (Ain.row(i).dot(x) > bin(i) + feas_tol) return;
        }
        for (const auto& v : verts) {
            if ((v - x).lpNorm<Eigen::Infinity>() < 1e-7) return;
        }
        verts.push_back(x);
    };

    if (need == 0) {
        std::vector<int> none;
        process(none);
        return verts;
    }
    while (true) {
        process(comb);
        int i = need - 1;
        while (i >= 0 && comb[i] == q - need + i) --i;
        if (i < 0) break;
        ++comb[i];
        for (int k = i + 1; k < need; ++k) comb[k] = comb[k - 1] + 1;
    }
    return verts;
}

std::vector<Eigen::VectorXd> enumerate_from_matrices(const ConicRiskSpec& spec) {
    // split Zero rows (equalities) from Nonneg rows (E mu <= b)
    std::vector<int> eq_rows, in_rows;
    int off = 0;
    for (const auto& blk : spec.cone.blocks()) {
        for (int i = 0; i < blk.dim; ++i) {
            if (blk.type == BlockType::Zero) eq_rows.push_back(off + i);
            else if (blk.type == BlockType::Nonneg) in_rows.push_back(off + i);
            else throw std::invalid_argument("vertex enumeration needs a polytopic spec");
        }
        off += blk.dim;
    }
    Eigen::MatrixXd Aeq(eq_rows.size(), spec.n), Ain(in_rows.size(), spec.n);
    Eigen::VectorXd beq(eq_rows.size()), bin(in_rows.size());
    for (size_t i = 0; i < eq_rows.size(); ++i) { Aeq.row(i) = spec.E.row(eq_rows[i]); beq(i) = spec.b(eq_rows[i]); }
    for (size_t i = 0; i < in_rows.size(); ++i) { Ain.row(i) = spec.E.row(in_rows[i]); bin(i) = spec.b(in_rows[i]); }

    // drop linearly dependent equality rows so the active-set systems are square
    std::vector<int> keep;
    Eigen::MatrixXd sel(0, spec.n);
    for (int i = 0; i < Aeq.rows(); ++i) {
        Eigen::MatrixXd trial(sel.rows() + 1, spec.n);
        trial.topRows(sel.rows()) = sel;
        trial.bottomRows(1) = Aeq.row(i);
        if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(trial).rank() ==
            static_cast<int>(trial.rows())) {
            sel = trial;
            keep.push_back(i);
        }
    }
    Eigen::MatrixXd Aeq2(keep.size(), spec.n);
    Eigen::VectorXd beq2(keep.size());
    for (size_t i = 0; i < keep.size(); ++i) { Aeq2.row(i) = Aeq.row(keep[i]); beq2(i) = beq(keep[i]); }
    return enumerate_polytope_vertices(Aeq2, beq2, Ain, bin);
}

}  // namespace

std::vector<Eigen::VectorXd> enumerate_ambiguity_vertices(const ConicRiskSpec& spec) {
    if (!spec.cone.is_polyhedral())
        throw std::invalid_argument("vertex enumeration requires a polytopic ambiguity set");
    if (spec.n > 12)
        throw std::invalid_argument("vertex enumeration is capped at n <= 12");

    if (spec.family) {
        switch (spec.family->kind) {
            case RiskFamily::Kind::Expectation:
                return {spec.nominal};
            case RiskFamily::Kind::Regularized: {
                // affine image lambda*pi + (1-lambda)*A_base is injective,
                // so base vertices map bijectively onto image vertices
                ConicRiskSpec base = make_conic_spec(*spec.family->base, spec.nominal);
                auto bv = enumerate_ambiguity_vertices(base);
                for (auto& v : bv)
                    v = spec.family->lambda * spec.nominal + (1.0 - spec.family->lambda) * v;
                return bv;
            }
            default: break;
        }
    }
    if (spec.r != 0)
        throw std::invalid_argument("vertex enumeration supports auxiliary variables only for built-in families");
    return enumerate_from_matrices(spec);
}

void validate_spec(const ConicRiskSpec& spec) {
    check_nominal(spec.nominal);
    if (spec.E.rows() != spec.b.size() || spec.E.cols() != spec.n ||
        spec.F.rows() != spec.b.size() || spec.F.cols() != spec.r ||
        spec.cone.dim() != spec.b.size())
        throw std::invalid_argument("inconsistent spec dimensions");

    // a Zero-cone row over mu with zero F-part must normalize the total mass
    bool normalization_row = false;
    int off = 0;
    for (const auto& blk : spec.cone.blocks()) {
        if (blk.type == BlockType::Zero) {
            for (int i = 0; i < blk.dim; ++i) {
                const int row = off + i;
                if (spec.r > 0 && spec.F.row(row).lpNorm<Eigen::Infinity>() > 1e-12) continue;
                const double e0 = spec.E(row, 0);
                if (std::abs(e0) < 1e-12) continue;
                if ((spec.E.row(row).array() - e0).abs().maxCoeff() < 1e-12 &&
                    std::abs(spec.b(row) - e0) < 1e-12) {
                    normalization_row = true;
                }
            }
        }
        off += blk.dim;
    }
    if (!normalization_row)
        throw std::invalid_argument("spec must enforce mu'1 = 1 through a Zero-cone row");

    // nominal feasibility: exists nu with b - E pi - F nu in K (tol 1e-8)
    Eigen::VectorXd resid = spec.b - spec.E * spec.nominal;
    if (spec.r == 0) {
        auto rep = membership(spec.cone, resid, 1e-8);
        if (!rep.inside)
            throw std::invalid_argument("nominal distribution is not in the ambiguity set");
    } else {
        ConicProgram prog;
        prog.num_vars = spec.r;
        prog.c = Eigen::VectorXd::Zero(spec.r);
        prog.A = spec.F.sparseView();
        prog.b = resid;
        prog.cone = spec.cone;
        Solution sol = solve(prog, risk_solver_settings());
        if (sol.status == SolveStatus::PrimalInfeasible ||
            (sol.status != SolveStatus::Optimal && sol.primal_res > 1e-8))
            throw std::invalid_argument("nominal distribution is not in the ambiguity set");
    }

    // admissible mu must be nonnegative: max over A of -mu_i must be <= 0
    for (int i = 0; i < spec.n && spec.n <= 20; ++i) {
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(spec.n);
        dir(i) = -1.0;
        if (eval_primal(spec, dir) > 1e-7)
            throw std::invalid_argument("ambiguity set contains vectors with negative entries");
    }
}

}  // namespace riskhorizon
