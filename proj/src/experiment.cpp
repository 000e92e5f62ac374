#include "riskhorizon/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace riskhorizon {

namespace {

Eigen::MatrixXd random_stable_A(std::mt19937_64& rng, int nx) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd A(nx, nx);
    for (int r = 0; r < nx; ++r)
        for (int c = 0; c < nx; ++c) A(r, c) = nd(rng);
    const double rad = A.eigenvalues().cwiseAbs().maxCoeff();
    if (rad > 1.1) A *= 1.1 / rad;
    return A;
}

Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd M(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) M(r, c) = nd(rng);
    return M.transpose() * M + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace

OcpSpec random_instance(const RandomInstanceConfig& cfg) {
    if (cfg.modes < 1 || cfg.nx < 1 || cfg.nu < 1 || cfg.horizon < 1)
        throw std::invalid_argument("random_instance: positive dimensions required");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> us(0.05, 1.0), ub(-1.0, 1.0);

    Eigen::MatrixXd P(cfg.modes, cfg.modes);
    for (int r = 0; r < cfg.modes; ++r) {
        for (int c = 0; c < cfg.modes; ++c) P(r, c) = us(rng);
        P.row(r) /= P.row(r).sum();
    }
    MarkovModel model{cfg.modes, P, 0};

    OcpSpec spec{build_stopped_markov_tree(model, cfg.horizon, cfg.branching_horizon),
                 {},
                 Eigen::VectorXd(),
                 {},
                 Eigen::MatrixXd(),
                 {},
                 std::nullopt,
                 std::nullopt,
                 {}};
    for (int w = 0; w < cfg.modes; ++w) {
        AffineDynamics dyn;
        dyn.A = random_stable_A(rng, cfg.nx);
        dyn.B.resize(cfg.nx, cfg.nu);
        for (int r = 0; r < cfg.nx; ++r)
            for (int c = 0; c < cfg.nu; ++c) dyn.B(r, c) = ub(rng);
        spec.dynamics.push_back(dyn);
        spec.stage_cost.push_back({random_psd(rng, cfg.nx), random_psd(rng, cfg.nu)});
    }
    spec.terminal_Q = random_psd(rng, cfg.nx);
    std::normal_distribution<double> nd(0.0, 1.0);
    spec.initial_state.resize(cfg.nx);
    for (int r = 0; r < cfg.nx; ++r) spec.initial_state(r) = nd(rng);
    spec.cost_risk.assign(cfg.horizon, RiskFamily::expectation());
    spec.u_lo = Eigen::VectorXd::Constant(cfg.nu, -cfg.input_bound);
    spec.u_hi = Eigen::VectorXd::Constant(cfg.nu, cfg.input_bound);
    return spec;
}

std::vector<ScenarioStat> scenario_statistics(const OcpSpec& spec, const OcpSolution& sol) {
    const ScenarioTree& tree = spec.tree;
    const Eigen::VectorXd g = node_costs(spec, sol.x, sol.u);
    // accumulate root-to-node totals stage-major (ancestors precede children)
    Eigen::VectorXd total = Eigen::VectorXd::Zero(tree.num_nodes());
    std::vector<ScenarioStat> stats;
    for (int i = 1; i < tree.num_nodes(); ++i) {
        total(i) = total(tree.ancestor(i)) + g(i);
        if (tree.is_leaf(i)) stats.push_back({total(i), tree.prob(i)});
    }
    return stats;
}

CostCdf cost_cdf(std::vector<ScenarioStat> stats) {
    std::sort(stats.begin(), stats.end(),
              [](const ScenarioStat& a, const ScenarioStat& b) { return a.cost < b.cost; });
    CostCdf out;
    double acc = 0.0;
    for (const auto& s : stats) {
        acc += s.prob;
        out.cost.push_back(s.cost);
        out.cum_prob.push_back(acc);
        out.mean += s.prob * s.cost;
    }
    if (!out.cum_prob.empty()) {
        out.cum_prob.back() = 1.0;  // clear accumulated rounding
        out.worst = out.cost.back();
    }
    return out;
}

int experiment_thread_count() {
    if (const char* env = std::getenv("RISKHORIZON_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

// one independent solve per sweep point, parallel across points
template <typename Point>
std::vector<Point> sweep(const std::vector<double>& alphas,
                         const std::function<Point(double)>& run) {
    std::vector<Point> out(alphas.size());
    const int threads = experiment_thread_count();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (int k = 0; k < static_cast<int>(alphas.size()); ++k) out[k] = run(alphas[k]);
    return out;
}

}  // namespace

std::vector<CdfSweepPoint> cdf_experiment(const OcpSpec& base, const std::vector<double>& alphas,
                                          const SolverSettings& settings) {
    return sweep<CdfSweepPoint>(alphas, [&](double alpha) {
        OcpSpec spec = base;
        spec.cost_risk.assign(spec.tree.num_stages(), RiskFamily::avar(alpha));
        auto res = solve_ocp(spec, settings);
        CdfSweepPoint pt{alpha, res.status, {}};
        if (res.solution) pt.cdf = cost_cdf(scenario_statistics(spec, *res.solution));
        return pt;
    });
}

std::vector<ConstraintSweepPoint> constraint_experiment(const OcpSpec& base,
                                                        const std::vector<double>& alphas,
                                                        double c, const std::vector<int>& stages,
                                                        const SolverSettings& settings) {
    return sweep<ConstraintSweepPoint>(alphas, [&](double alpha) {
        OcpSpec spec = base;
        RiskConstraintSpec rc;
        rc.stages = stages;
        rc.phi = ConstraintFn::state_norm_ball(c);
        rc.mode = ConstraintMode::StageWise;
        rc.family = RiskFamily::avar(alpha);
        spec.risk_constraints.push_back(rc);
        auto res = solve_ocp(spec, settings);
        ConstraintSweepPoint pt{alpha, res.status, {}};
        if (!res.solution) return pt;

        const ScenarioTree& tree = spec.tree;
        const int N = tree.num_stages();
        for (int t = 0; t < N; ++t) {
            // phi over the stage-t states, weighted by the stage-t law
            auto [tb, te] = tree.stage_nodes(t);
            std::vector<std::pair<double, double>> vals;  // (phi, prob)
            double viol = 0.0;
            for (int i = tb; i < te; ++i) {
                const double phi = res.solution->x.col(i).squaredNorm() - c;
                vals.push_back({phi, tree.prob(i)});
                if (phi > 1e-6) viol += tree.prob(i);
            }
            std::sort(vals.begin(), vals.end());
            auto quantile = [&](double q) {
                double acc = 0.0;
                for (const auto& [phi, p] : vals) {
                    acc += p;
                    if (acc >= q - 1e-12) return phi;
                }
                return vals.back().first;
            };
            const bool constrained = std::find(stages.begin(), stages.end(), t) != stages.end();
            pt.stages.push_back(
                {t, constrained, viol, {quantile(0.1), quantile(0.5), quantile(0.9)}});
        }
        return pt;
    });
}

std::vector<TimingPoint> timing_experiment(const RandomInstanceConfig& cfg,
                                           const std::vector<int>& branching_horizons,
                                           const RiskFamily& family, ConstraintMode mode,
                                           int repeats, const SolverSettings& settings,
                                           bool with_constraint) {
    using Clock = std::chrono::steady_clock;
    std::vector<TimingPoint> out;
    for (int t0 : branching_horizons) {
        RandomInstanceConfig c = cfg;
        c.branching_horizon = t0;
        OcpSpec spec = random_instance(c);
        spec.cost_risk.assign(cfg.horizon, family);
        if (with_constraint) {
            RiskConstraintSpec rc;
            rc.stages = {cfg.horizon - 1};
            rc.phi = ConstraintFn::state_norm_ball(100.0);  // wide: timing, not feasibility
            rc.mode = mode;
            rc.family = family;
            spec.risk_constraints.push_back(rc);
        }

        const auto tb0 = Clock::now();
        BuiltProgram built = build_program(spec);
        const double build_ms =
            std::chrono::duration<double, std::milli>(Clock::now() - tb0).count();

        std::vector<double> solve_ms;
        for (int r = 0; r < std::max(repeats, 1); ++r) {
            const auto ts0 = Clock::now();
            (void)solve(built.program, settings);
            solve_ms.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - ts0).count());
        }
        std::sort(solve_ms.begin(), solve_ms.end());

        auto [lb, le] = spec.tree.stage_nodes(spec.tree.num_stages());
        out.push_back({t0, le - lb, spec.tree.num_nodes(), built.program.num_vars,
                       built.program.num_rows(), build_ms, solve_ms[solve_ms.size() / 2]});
    }
    return out;
}

std::string csv_metadata_line(std::uint64_t seed, const std::string& spec_json) {
    std::ostringstream os;
    os << "# seed=" << seed << ", version=" << kVersion << ", spec-hash=" << std::hex
       << std::hash<std::string>{}(spec_json);
    return os.str();
}

}  // namespace riskhorizon
