// Command-line front end: scenario-tree generation, risk evaluation,
// problem solving, benchmark sweeps with CSV emission, and the oracle
// verification suite.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "riskhorizon/experiment.hpp"
#include "riskhorizon/ocp.hpp"
#include "riskhorizon/oracle.hpp"
#include "riskhorizon/risk.hpp"
#include "riskhorizon/scenario_tree.hpp"

namespace rh = riskhorizon;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitMaxIters = 3;
constexpr int kExitVerifyFailure = 4;
constexpr int kExitUsage = 64;

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

std::vector<int> parse_ints(const std::string& text) {
    std::vector<int> out;
    for (double v : parse_doubles(text)) out.push_back(static_cast<int>(v));
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

rh::RiskFamily parse_family(const std::string& name, double alpha) {
    if (name == "expectation") return rh::RiskFamily::expectation();
    if (name == "max") return rh::RiskFamily::max();
    if (name == "avar") return rh::RiskFamily::avar(alpha);
    if (name == "evar") return rh::RiskFamily::evar(alpha);
    throw CLI::ValidationError("--family", "unknown family: " + name);
}

int status_exit_code(rh::SolveStatus st) {
    switch (st) {
        case rh::SolveStatus::Optimal: return kExitOk;
        case rh::SolveStatus::PrimalInfeasible:
        case rh::SolveStatus::DualInfeasible: return kExitInfeasible;
        case rh::SolveStatus::MaxIters: return kExitMaxIters;
        case rh::SolveStatus::NumericalError: return 1;
    }
    return 1;
}

Eigen::MatrixXd random_transition(int modes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> us(0.05, 1.0);
    Eigen::MatrixXd P(modes, modes);
    for (int r = 0; r < modes; ++r) {
        for (int c = 0; c < modes; ++c) P(r, c) = us(rng);
        P.row(r) /= P.row(r).sum();
    }
    return P;
}

// ---------------------------------------------------------------- tree gen

struct TreeGenArgs {
    std::string kind;
    std::string probs;
    std::string transition;
    int modes = 0;
    int initial_mode = 0;
    int horizon = 0;
    int branching_horizon = -1;
    std::uint64_t seed = 1;
    std::string out;
};

int run_tree_gen(const TreeGenArgs& a) {
    rh::ScenarioTree tree = [&] {
        if (a.kind == "iid") {
            std::vector<double> pv = parse_doubles(a.probs);
            if (pv.empty()) throw std::invalid_argument("--probs required for --kind iid");
            Eigen::VectorXd p = Eigen::Map<Eigen::VectorXd>(pv.data(), pv.size());
            return rh::build_iid_tree(p, a.horizon);
        }
        if (a.kind != "markov") throw std::invalid_argument("--kind must be iid or markov");
        if (a.modes < 1) throw std::invalid_argument("--modes required for --kind markov");
        Eigen::MatrixXd P;
        if (!a.transition.empty()) {
            std::vector<double> tv = parse_doubles(a.transition);
            if (static_cast<int>(tv.size()) != a.modes * a.modes)
                throw std::invalid_argument("--transition needs modes*modes entries");
            P = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(tv.data(), a.modes, a.modes);
        } else {
            P = random_transition(a.modes, a.seed);
        }
        rh::MarkovModel model{a.modes, P, a.initial_mode};
        const int bh = a.branching_horizon < 0 ? a.horizon : a.branching_horizon;
        return rh::build_stopped_markov_tree(model, a.horizon, bh);
    }();
    const std::string json = tree.to_json();
    if (a.out.empty()) {
        std::cout << json << "\n";
    } else {
        write_file(a.out, json);
        std::cout << "wrote " << a.out << " (" << tree.num_nodes() << " nodes, "
                  << tree.num_leaves() << " leaves)\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- risk eval

struct RiskEvalArgs {
    std::string family = "avar";
    double alpha = 0.5;
    std::string tree_path;
    int stage = 0;
    std::string values;
    std::string values_file;
    bool nested = false;
};

int run_risk_eval(const RiskEvalArgs& a) {
    rh::ScenarioTree tree = rh::ScenarioTree::from_json(read_file(a.tree_path));
    std::vector<double> vv =
        a.values_file.empty() ? parse_doubles(a.values) : parse_doubles(read_file(a.values_file));
    auto [tb, te] = tree.stage_nodes(a.stage);
    if (static_cast<int>(vv.size()) != te - tb)
        throw std::invalid_argument("expected " + std::to_string(te - tb) +
                                    " values for stage " + std::to_string(a.stage));
    Eigen::VectorXd Y = Eigen::Map<Eigen::VectorXd>(vv.data(), vv.size());
    const rh::RiskFamily fam = parse_family(a.family, a.alpha);
    std::vector<rh::RiskFamily> fams(std::max(a.stage, 1), fam);
    const auto mode = a.nested ? rh::ConstraintMode::Nested : rh::ConstraintMode::StageWise;
    rh::SolverSettings st;  // small program: run it tight
    st.eps = 1e-9;
    st.max_iters = 400000;
    const double value = rh::risk_value_conic(tree, fams, Y, a.stage, mode, st);
    std::printf("%.9g\n", value);
    return kExitOk;
}

// ---------------------------------------------------------------- spec gen

struct GenArgs {
    int modes = 4;
    int nx = 2;
    int nu = 1;
    int horizon = 7;
    int branching_horizon = 3;
    std::uint64_t seed = 1;
    double input_bound = 2.0;
};

rh::RandomInstanceConfig to_config(const GenArgs& g) {
    return {g.modes, g.nx, g.nu, g.horizon, g.branching_horizon, g.seed, g.input_bound};
}

void add_gen_flags(CLI::App* cmd, GenArgs& g) {
    cmd->add_option("--modes", g.modes, "number of Markov modes");
    cmd->add_option("--nx", g.nx, "state dimension");
    cmd->add_option("--nu", g.nu, "input dimension");
    cmd->add_option("--horizon", g.horizon, "number of stages");
    cmd->add_option("--branching-horizon", g.branching_horizon,
                    "stages that branch; later stages chain");
    cmd->add_option("--seed", g.seed, "generator seed");
    cmd->add_option("--input-bound", g.input_bound, "input box half-width");
}

struct SpecGenArgs {
    GenArgs gen;
    std::string cost_family = "expectation";
    double cost_alpha = 0.5;
    double constraint_c = -1.0;  // < 0: no risk constraint
    double constraint_alpha = 0.5;
    std::string constraint_mode = "stagewise";
    std::string constraint_stages;
    std::string out;
};

int run_spec_gen(const SpecGenArgs& a) {
    rh::OcpSpec spec = rh::random_instance(to_config(a.gen));
    spec.cost_risk.assign(spec.tree.num_stages(), parse_family(a.cost_family, a.cost_alpha));
    if (a.constraint_c >= 0.0) {
        const int N = spec.tree.num_stages();
        rh::RiskConstraintSpec rc;
        rc.phi = rh::ConstraintFn::state_norm_ball(a.constraint_c);
        rc.family = rh::RiskFamily::avar(a.constraint_alpha);
        rc.mode = a.constraint_mode == "nested" ? rh::ConstraintMode::Nested
                                                : rh::ConstraintMode::StageWise;
        rc.stages = a.constraint_stages.empty() ? std::vector<int>{}
                                                : parse_ints(a.constraint_stages);
        if (rc.stages.empty())
            for (int t = std::max(N - 4, 0); t < N; ++t) rc.stages.push_back(t);
        spec.risk_constraints.push_back(rc);
    }
    const std::string json = spec.to_json();
    if (a.out.empty()) {
        std::cout << json << "\n";
    } else {
        write_file(a.out, json);
        std::cout << "wrote " << a.out << " (" << spec.tree.num_nodes() << " nodes)\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- solve

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
    nlohmann::json cols = nlohmann::json::array();
    for (int j = 0; j < M.cols(); ++j) {
        cols.push_back(std::vector<double>(M.col(j).data(), M.col(j).data() + M.rows()));
    }
    return cols;
}

struct SolveArgs {
    std::string spec_path;
    double eps = 1e-6;
    int max_iters = 100000;
    std::string out;
    bool trace = false;
};

int run_solve(const SolveArgs& a) {
    rh::OcpSpec spec = rh::OcpSpec::from_json(read_file(a.spec_path));
    rh::validate_ocp_spec(spec);
    rh::SolverSettings st;
    st.eps = a.eps;
    st.max_iters = a.max_iters;
    const auto res = rh::solve_ocp(spec, st);

    std::cout << "status:      " << rh::to_string(res.status) << "\n";
    if (res.solution) {
        std::cout << "value:       " << res.solution->value << "\n"
                  << "dyn residual " << res.solution->dynamics_residual << "\n";
        for (const auto& cr : res.solution->constraint_reports) {
            std::cout << "constraint " << cr.constraint_index << " stage " << cr.stage
                      << ": risk value " << cr.risk_value << "\n";
        }
    }
    std::cout << "iterations:  " << res.raw.iterations << "\n"
              << "wall time:   " << res.raw.solve_time_ms << " ms\n";
    if (a.trace) {
        const auto built = rh::build_program(spec);
        std::cout << "variables:   " << built.program.num_vars << "\n"
                  << "rows:        " << built.program.num_rows() << "\n"
                  << "primal res:  " << res.raw.primal_res << "\n"
                  << "dual res:    " << res.raw.dual_res << "\n"
                  << "gap:         " << res.raw.gap << "\n";
    }

    if (!a.out.empty()) {
        nlohmann::json j;
        j["status"] = rh::to_string(res.status);
        j["iterations"] = res.raw.iterations;
        j["solve_time_ms"] = res.raw.solve_time_ms;
        j["primal_res"] = res.raw.primal_res;
        j["dual_res"] = res.raw.dual_res;
        j["gap"] = res.raw.gap;
        if (res.solution) {
            j["value"] = res.solution->value;
            j["dynamics_residual"] = res.solution->dynamics_residual;
            j["x"] = matrix_to_json(res.solution->x);
            j["u"] = matrix_to_json(res.solution->u);
            for (const auto& cr : res.solution->constraint_reports) {
                j["constraint_reports"].push_back({{"constraint_index", cr.constraint_index},
                                                   {"stage", cr.stage},
                                                   {"risk_value", cr.risk_value}});
            }
        }
        if (res.status == rh::SolveStatus::PrimalInfeasible && res.raw.y.size() > 0) {
            j["infeasibility_certificate"] =
                std::vector<double>(res.raw.y.data(), res.raw.y.data() + res.raw.y.size());
        }
        write_file(a.out, j.dump(2));
        std::cout << "wrote " << a.out << "\n";
    }
    return status_exit_code(res.status);
}

// ---------------------------------------------------------------- experiments

rh::OcpSpec load_or_generate(const std::string& spec_template, const GenArgs& g) {
    if (!spec_template.empty()) return rh::OcpSpec::from_json(read_file(spec_template));
    return rh::random_instance(to_config(g));
}

int worst_exit(int a, int b) { return std::max(a, b); }

struct CdfArgs {
    std::string spec_template;
    GenArgs gen;
    std::string alphas = "0,0.25,0.5,0.75,1";
    std::string out_dir = ".";
    double eps = 1e-6;
    int max_iters = 100000;
};

int run_experiment_cdf(const CdfArgs& a) {
    rh::OcpSpec spec = load_or_generate(a.spec_template, a.gen);
    rh::SolverSettings st;
    st.eps = a.eps;
    st.max_iters = a.max_iters;
    const auto alphas = parse_doubles(a.alphas);
    const auto points = rh::cdf_experiment(spec, alphas, st);
    fs::create_directories(a.out_dir);
    const std::string meta = rh::csv_metadata_line(a.gen.seed, spec.to_json());
    int exit = kExitOk;
    for (const auto& pt : points) {
        std::cout << "alpha " << pt.alpha << ": " << rh::to_string(pt.status);
        exit = worst_exit(exit, status_exit_code(pt.status));
        if (pt.status != rh::SolveStatus::Optimal) {
            std::cout << "\n";
            continue;
        }
        std::cout << " mean " << pt.cdf.mean << " worst " << pt.cdf.worst << "\n";
        const std::string path =
            (fs::path(a.out_dir) / ("cdf_alpha_" + fmt_g(pt.alpha) + ".csv")).string();
        std::ostringstream os;
        os << meta << "\ncost,cumulative_prob\n";
        for (size_t k = 0; k < pt.cdf.cost.size(); ++k)
            os << pt.cdf.cost[k] << "," << pt.cdf.cum_prob[k] << "\n";
        write_file(path, os.str());
    }
    return exit;
}

struct ConstraintArgs {
    std::string spec_template;
    GenArgs gen;
    std::string alphas = "0,0.1,0.3,0.5,0.8";
    double c = 0.5;
    std::string stages;
    std::string out_dir = ".";
    double eps = 1e-6;
    int max_iters = 100000;
};

int run_experiment_constraints(const ConstraintArgs& a) {
    rh::OcpSpec spec = load_or_generate(a.spec_template, a.gen);
    rh::SolverSettings st;
    st.eps = a.eps;
    st.max_iters = a.max_iters;
    const int N = spec.tree.num_stages();
    std::vector<int> stages = a.stages.empty() ? std::vector<int>{} : parse_ints(a.stages);
    if (stages.empty())
        for (int t = std::max(N - 4, 0); t < N; ++t) stages.push_back(t);
    const auto alphas = parse_doubles(a.alphas);
    const auto points = rh::constraint_experiment(spec, alphas, a.c, stages, st);
    fs::create_directories(a.out_dir);
    const std::string meta = rh::csv_metadata_line(a.gen.seed, spec.to_json());
    int exit = kExitOk;
    for (const auto& pt : points) {
        std::cout << "alpha " << pt.alpha << ": " << rh::to_string(pt.status);
        if (pt.status != rh::SolveStatus::Optimal) {
            std::cout << "\n";
            // an infeasibility certificate is an expected sweep outcome, not
            // a command failure; a stalled solver is
            if (pt.status == rh::SolveStatus::MaxIters ||
                pt.status == rh::SolveStatus::NumericalError)
                exit = worst_exit(exit, status_exit_code(pt.status));
            continue;
        }
        double maxv = 0.0;
        for (const auto& srep : pt.stages)
            if (srep.constrained) maxv = std::max(maxv, srep.violation_prob);
        std::cout << " max violation prob " << maxv << "\n";
        const std::string path =
            (fs::path(a.out_dir) / ("constraints_alpha_" + fmt_g(pt.alpha) + ".csv")).string();
        std::ostringstream os;
        os << meta << "\nstage,constrained,violation_prob,phi_q10,phi_q50,phi_q90\n";
        for (const auto& srep : pt.stages) {
            os << srep.stage << "," << (srep.constrained ? 1 : 0) << "," << srep.violation_prob
               << "," << srep.phi_quantiles[0] << "," << srep.phi_quantiles[1] << ","
               << srep.phi_quantiles[2] << "\n";
        }
        write_file(path, os.str());
    }
    return exit;
}

struct TimingArgs {
    GenArgs gen;
    std::string branching_horizons = "1,2,3";
    std::string family = "avar";
    double alpha = 0.5;
    std::string constraint_mode = "stagewise";
    int repeats = 3;
    std::string out;
    double eps = 1e-4;
    int max_iters = 100000;
};

int run_experiment_timing(const TimingArgs& a) {
    rh::RandomInstanceConfig cfg = to_config(a.gen);
    const rh::RiskFamily fam = parse_family(a.family, a.alpha);
    const auto mode = a.constraint_mode == "nested" ? rh::ConstraintMode::Nested
                                                    : rh::ConstraintMode::StageWise;
    rh::SolverSettings st;
    st.eps = a.eps;
    st.max_iters = a.max_iters;
    const auto points =
        rh::timing_experiment(cfg, parse_ints(a.branching_horizons), fam, mode, a.repeats, st);
    std::ostringstream os;
    os << rh::csv_metadata_line(a.gen.seed, "timing:" + a.family + ":" + a.constraint_mode)
       << "\nbranching_horizon,scenarios,nodes,variables,rows,build_ms,solve_ms\n";
    for (const auto& pt : points) {
        os << pt.branching_horizon << "," << pt.scenarios << "," << pt.nodes << ","
           << pt.variables << "," << pt.rows << "," << pt.build_ms << "," << pt.solve_ms << "\n";
        std::cout << "t0 " << pt.branching_horizon << ": " << pt.scenarios << " scenarios, "
                  << pt.nodes << " nodes, build " << pt.build_ms << " ms, solve "
                  << pt.solve_ms << " ms (median of " << a.repeats << ", eps " << a.eps << ")\n";
    }
    if (!a.out.empty()) {
        write_file(a.out, os.str());
        std::cout << "wrote " << a.out << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyReport {
    bool all_pass = true;
    void row(const std::string& name, bool pass) {
        std::printf("%-52s %s\n", name.c_str(), pass ? "pass" : "FAIL");
        all_pass = all_pass && pass;
    }
};

Eigen::VectorXd random_simplex(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = u(rng);
    return p / p.sum();
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> d(0.0, scale);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = d(rng);
    return z;
}

void verify_duality(VerifyReport& rep, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, rh::RiskFamily>> fams;
    for (double al : {0.0, 0.1, 0.5, 0.9, 1.0})
        fams.push_back({"avar(" + fmt_g(al) + ")", rh::RiskFamily::avar(al)});
    for (double al : {0.01, 0.1, 1.0})
        fams.push_back({"evar(" + fmt_g(al) + ")", rh::RiskFamily::evar(al)});
    fams.push_back({"expectation", rh::RiskFamily::expectation()});
    fams.push_back({"max", rh::RiskFamily::max()});
    fams.push_back({"regularized(avar(0.5),0.4)",
                    rh::RiskFamily::regularized(rh::RiskFamily::avar(0.5), 0.4)});
    for (const auto& [name, fam] : fams) {
        double worst = 0.0;
        for (int n : {2, 5, 20}) {
            for (int rep2 = 0; rep2 < 10; ++rep2) {
                const auto spec = rh::make_conic_spec(fam, random_simplex(rng, n));
                const Eigen::VectorXd Z = random_vec(rng, n, 3.0);
                const double p = rh::eval_primal(spec, Z);
                const double d = rh::eval_dual(spec, Z).value;
                worst = std::max(worst, std::abs(p - d) / (1.0 + std::abs(p)));
            }
        }
        rep.row("duality " + name, worst <= 1e-6);
    }
}

void verify_interchange(VerifyReport& rep, std::uint64_t seed) {
    // risk of the pointwise minimum equals the exhaustive minimum over
    // scenario-dependent selections
    std::mt19937_64 rng(seed);
    const int n = 3, nX = 3;
    auto eval2 = [](const rh::RiskFamily& fam, const Eigen::VectorXd& pi,
                    const Eigen::VectorXd& Z) { return rh::oracle::scalar_risk(fam, pi, Z); };
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
        const Eigen::VectorXd pi = random_simplex(rng, n);
        std::vector<Eigen::VectorXd> g;
        for (int x = 0; x < nX; ++x) g.push_back(random_vec(rng, n, 2.0));
        Eigen::VectorXd point_min = g[0];
        for (int x = 1; x < nX; ++x) point_min = point_min.cwiseMin(g[x]);
        for (const auto& fam : {rh::RiskFamily::expectation(), rh::RiskFamily::max(),
                                rh::RiskFamily::avar(0.5), rh::RiskFamily::evar(0.3)}) {
            double best = std::numeric_limits<double>::infinity();
            for (int m = 0; m < nX * nX * nX; ++m) {
                Eigen::VectorXd Z(n);
                int code = m;
                for (int i = 0; i < n; ++i) {
                    Z(i) = g[code % nX](i);
                    code /= nX;
                }
                best = std::min(best, eval2(fam, pi, Z));
            }
            ok = ok && std::abs(eval2(fam, pi, point_min) - best) <= 1e-9;
        }
    }
    rep.row("interchange: risk of min == min over selections", ok);
}

void verify_epigraph(VerifyReport& rep, std::uint64_t seed) {
    // nested recursion decides the conic epigraph feasibility question
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ua(0.2, 0.95), ug(-2.0, 2.0);
    Eigen::VectorXd p(2);
    p << 0.4, 0.6;
    const auto tree = rh::build_iid_tree(p, 3);
    rh::SolverSettings st;
    st.eps = 1e-9;
    st.max_iters = 400000;
    bool ok = true;
    for (int trial = 0; trial < 20 && ok; ++trial) {
        std::vector<rh::RiskFamily> fams;
        for (int k = 0; k < 3; ++k) fams.push_back(rh::RiskFamily::avar(ua(rng)));
        auto [tb, te] = tree.stage_nodes(3);
        const Eigen::VectorXd Y = random_vec(rng, te - tb, 5.0);
        const double v = rh::oracle::nested_by_recursion(tree, fams, Y, 3);
        double gamma = v + ug(rng);
        if (std::abs(gamma - v) < 1e-4) gamma = v + 1e-3;
        const bool feas = rh::risk_inequality_feasibility(tree, fams, Y, 3, gamma,
                                                          rh::ConstraintMode::Nested, st) ==
                          rh::SolveStatus::Optimal;
        ok = ok && (feas == (v <= gamma + 1e-6));
    }
    rep.row("epigraph feasibility matches the recursion", ok);
}

void verify_qp(VerifyReport& rep, std::uint64_t seed) {
    rh::RandomInstanceConfig cfg;
    cfg.modes = 2;
    cfg.horizon = 3;
    cfg.branching_horizon = 2;
    cfg.seed = seed;
    rh::OcpSpec spec = rh::random_instance(cfg);

    const auto qp = rh::oracle::deterministic_equivalent_qp(spec);
    const auto res = rh::solve_ocp(spec);
    const bool qp_ok = qp.feasible && res.solution &&
                       std::abs(qp.value - res.solution->value) <=
                           1e-5 * (1.0 + std::abs(qp.value));
    rep.row("expectation reduction matches the scenario QP", qp_ok);

    rh::OcpSpec mm = spec;
    mm.cost_risk.assign(cfg.horizon, rh::RiskFamily::max());
    const double flat = rh::oracle::minimax_epigraph_value(mm);
    const auto mres = rh::solve_ocp(mm);
    const bool mm_ok = mres.solution && std::abs(flat - mres.solution->value) <=
                                            1e-5 * (1.0 + std::abs(flat));
    rep.row("minimax reduction matches the flat epigraph", mm_ok);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"risk-averse optimal control on scenario trees"};
    app.require_subcommand(1);

    // tree gen
    auto* tree_cmd = app.add_subcommand("tree", "scenario tree utilities");
    tree_cmd->require_subcommand(1);
    TreeGenArgs tg;
    auto* tree_gen = tree_cmd->add_subcommand("gen", "generate a scenario tree as JSON");
    tree_gen->add_option("--kind", tg.kind, "iid or markov")->required();
    tree_gen->add_option("--probs", tg.probs, "iid outcome probabilities, comma separated");
    tree_gen->add_option("--transition", tg.transition, "row-major Markov transition matrix");
    tree_gen->add_option("--modes", tg.modes, "Markov mode count");
    tree_gen->add_option("--initial-mode", tg.initial_mode, "Markov initial mode");
    tree_gen->add_option("--horizon", tg.horizon, "number of stages")->required();
    tree_gen->add_option("--branching-horizon", tg.branching_horizon,
                         "stages that branch (markov; default: horizon)");
    tree_gen->add_option("--seed", tg.seed, "seed for a random transition matrix");
    tree_gen->add_option("--out", tg.out, "output path (default: stdout)");

    // risk eval
    auto* risk_cmd = app.add_subcommand("risk", "risk measure evaluation");
    risk_cmd->require_subcommand(1);
    RiskEvalArgs re;
    auto* risk_eval = risk_cmd->add_subcommand("eval", "evaluate a (nested) risk measure");
    risk_eval->add_option("--family", re.family, "expectation|max|avar|evar");
    risk_eval->add_option("--alpha", re.alpha, "avar/evar level");
    risk_eval->add_option("--tree", re.tree_path, "tree JSON path")->required();
    risk_eval->add_option("--stage", re.stage, "stage carrying the values")->required();
    risk_eval->add_option("--values", re.values, "comma-separated values on the stage nodes");
    risk_eval->add_option("--values-file", re.values_file, "file with comma-separated values");
    risk_eval->add_flag("--nested", re.nested, "nested composition instead of stage-wise");

    // spec gen
    auto* spec_cmd = app.add_subcommand("spec", "problem spec utilities");
    spec_cmd->require_subcommand(1);
    SpecGenArgs sg;
    auto* spec_gen = spec_cmd->add_subcommand("gen", "generate a seeded random problem spec");
    add_gen_flags(spec_gen, sg.gen);
    spec_gen->add_option("--cost-family", sg.cost_family, "expectation|max|avar|evar");
    spec_gen->add_option("--cost-alpha", sg.cost_alpha, "cost risk level");
    spec_gen->add_option("--constraint-c", sg.constraint_c,
                         "squared-norm ball radius; omit for no risk constraint");
    spec_gen->add_option("--constraint-alpha", sg.constraint_alpha, "constraint risk level");
    spec_gen->add_option("--constraint-mode", sg.constraint_mode, "stagewise or nested");
    spec_gen->add_option("--constraint-stages", sg.constraint_stages,
                         "constrained stages (default: N-4..N-1)");
    spec_gen->add_option("--out", sg.out, "output path (default: stdout)");

    // solve
    SolveArgs sa;
    auto* solve_cmd = app.add_subcommand("solve", "solve an optimal control problem spec");
    solve_cmd->add_option("--spec", sa.spec_path, "problem spec JSON")->required();
    solve_cmd->add_option("--eps", sa.eps, "solver tolerance");
    solve_cmd->add_option("--max-iters", sa.max_iters, "iteration cap");
    solve_cmd->add_option("--out", sa.out, "solution JSON output path");
    solve_cmd->add_flag("--trace", sa.trace, "print program size and residual detail");

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "benchmark sweeps with CSV output");
    exp_cmd->require_subcommand(1);
    CdfArgs ca;
    auto* exp_cdf = exp_cmd->add_subcommand("cdf", "cost distribution across risk levels");
    exp_cdf->add_option("--spec-template", ca.spec_template, "spec JSON (else generated)");
    add_gen_flags(exp_cdf, ca.gen);
    exp_cdf->add_option("--alphas", ca.alphas, "risk levels, comma separated");
    exp_cdf->add_option("--out-dir", ca.out_dir, "directory for cdf_alpha_<a>.csv");
    exp_cdf->add_option("--eps", ca.eps, "solver tolerance");
    exp_cdf->add_option("--max-iters", ca.max_iters, "iteration cap");

    ConstraintArgs na;
    auto* exp_con = exp_cmd->add_subcommand("constraints", "risk-constrained norm-ball sweep");
    exp_con->add_option("--spec-template", na.spec_template, "spec JSON (else generated)");
    add_gen_flags(exp_con, na.gen);
    exp_con->add_option("--alphas", na.alphas, "risk levels, comma separated");
    exp_con->add_option("--c", na.c, "squared-norm ball radius");
    exp_con->add_option("--stages", na.stages, "constrained stages (default: N-4..N-1)");
    exp_con->add_option("--out-dir", na.out_dir, "directory for constraints_alpha_<a>.csv");
    exp_con->add_option("--eps", na.eps, "solver tolerance");
    exp_con->add_option("--max-iters", na.max_iters, "iteration cap");

    TimingArgs ta;
    ta.gen.horizon = 12;
    auto* exp_tim = exp_cmd->add_subcommand("timing", "build+solve time versus tree size");
    add_gen_flags(exp_tim, ta.gen);
    exp_tim->add_option("--branching-horizons", ta.branching_horizons, "comma separated t0 list");
    exp_tim->add_option("--family", ta.family, "avar or evar");
    exp_tim->add_option("--alpha", ta.alpha, "risk level");
    exp_tim->add_option("--constraint-mode", ta.constraint_mode, "stagewise or nested");
    exp_tim->add_option("--repeats", ta.repeats, "solve repetitions per point (median)");
    exp_tim->add_option("--out", ta.out, "CSV output path");
    exp_tim->add_option("--eps", ta.eps, "solver tolerance (default 1e-4 for timing)");
    exp_tim->add_option("--max-iters", ta.max_iters, "iteration cap");

    // verify
    auto* verify_cmd = app.add_subcommand("verify", "oracle cross-check suite");
    verify_cmd->require_subcommand(1);
    verify_cmd->fallthrough();  // --seed may follow the subcommand name
    std::uint64_t vseed = 1;
    verify_cmd->add_option("--seed", vseed, "seed for the randomized checks");
    std::vector<std::string> picks;
    for (const char* name : {"duality", "interchange", "epigraph", "qp", "all"}) {
        auto* sub = verify_cmd->add_subcommand(name, std::string("run the ") + name + " checks");
        sub->callback([&picks, name] { picks.push_back(name); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*tree_gen) return run_tree_gen(tg);
        if (*risk_eval) return run_risk_eval(re);
        if (*spec_gen) return run_spec_gen(sg);
        if (*solve_cmd) return run_solve(sa);
        if (*exp_cdf) return run_experiment_cdf(ca);
        if (*exp_con) return run_experiment_constraints(na);
        if (*exp_tim) return run_experiment_timing(ta);
        if (*verify_cmd) {
            VerifyReport rep;
            const bool all = !picks.empty() && picks.front() == "all";
            auto picked = [&](const char* name) {
                return all || std::find(picks.begin(), picks.end(), name) != picks.end();
            };
            if (picked("duality")) verify_duality(rep, vseed);
            if (picked("interchange")) verify_interchange(rep, vseed);
            if (picked("epigraph")) verify_epigraph(rep, vseed);
            if (picked("qp")) verify_qp(rep, vseed);
            return rep.all_pass ? kExitOk : kExitVerifyFailure;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
