#include "riskhorizon/cones.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace riskhorizon {

namespace {

constexpr double kExpTol = 1e-14;
constexpr int kExpMaxIters = 200;

int block_dim_check(BlockType type, int dim) {
    if (type == BlockType::Exponential || type == BlockType::ExponentialDual) {
        if (dim != 3) throw std::invalid_argument("exponential cone blocks have dimension 3");
    } else if (dim < 1) {
        throw std::invalid_argument("cone block dimension must be >= 1");
    }
    return dim;
}

}  // namespace

Cone::Cone(std::vector<ConeBlock> blocks) {
    for (const auto& b : blocks) append(b.type, b.dim);
}

void Cone::append(BlockType type, int dim) {
    block_dim_check(type, dim);
    blocks_.push_back({type, dim});
    dim_ += dim;
}

void Cone::append(const Cone& other) {
    for (const auto& b : other.blocks_) append(b.type, b.dim);
}

Cone Cone::zero(int d) { Cone k; k.append(BlockType::Zero, d); return k; }
Cone Cone::free(int d) { Cone k; k.append(BlockType::Free, d); return k; }
Cone Cone::nonneg(int d) { Cone k; k.append(BlockType::Nonneg, d); return k; }
Cone Cone::second_order(int d) { Cone k; k.append(BlockType::SecondOrder, d); return k; }
Cone Cone::rotated_second_order(int d) { Cone k; k.append(BlockType::RotatedSecondOrder, d); return k; }

Cone Cone::exponential(int count) {
    Cone k;
    for (int i = 0; i < count; ++i) k.append(BlockType::Exponential, 3);
    return k;
}

Cone Cone::exponential_dual(int count) {
    Cone k;
    for (int i = 0; i < count; ++i) k.append(BlockType::ExponentialDual, 3);
    return k;
}

Cone Cone::dual() const {
    Cone d;
    for (const auto& b : blocks_) {
        switch (b.type) {
            case BlockType::Zero: d.append(BlockType::Free, b.dim); break;
            case BlockType::Free: d.append(BlockType::Zero, b.dim); break;
            case BlockType::Nonneg:
            case BlockType::SecondOrder:
            case BlockType::RotatedSecondOrder:
                d.append(b.type, b.dim);  // self-dual
                break;
            case BlockType::Exponential: d.append(BlockType::ExponentialDual, 3); break;
            case BlockType::ExponentialDual: d.append(BlockType::Exponential, 3); break;
        }
    }
    return d;
}

bool Cone::is_polyhedral() const {
    for (const auto& b : blocks_) {
        if (b.type != BlockType::Zero && b.type != BlockType::Nonneg &&
            b.type != BlockType::Free)
            return false;
    }
    return true;
}

std::vector<std::string> Cone::to_strings() const {
    std::vector<std::string> out;
    for (const auto& b : blocks_) {
        switch (b.type) {
            case BlockType::Zero: out.push_back("zero:" + std::to_string(b.dim)); break;
            case BlockType::Free: out.push_back("free:" + std::to_string(b.dim)); break;
            case BlockType::Nonneg: out.push_back("nonneg:" + std::to_string(b.dim)); break;
            case BlockType::SecondOrder: out.push_back("soc:" + std::to_string(b.dim)); break;
            case BlockType::RotatedSecondOrder: out.push_back("rsoc:" + std::to_string(b.dim)); break;
            case BlockType::Exponential: out.push_back("exp"); break;
            case BlockType::ExponentialDual: out.push_back("exp*"); break;
        }
    }
    return out;
}

Cone Cone::from_strings(const std::vector<std::string>& tokens) {
    Cone k;
    for (const auto& tok : tokens) {
        auto colon = tok.find(':');
        std::string name = tok.substr(0, colon);
        int dim = colon == std::string::npos ? 3 : std::stoi(tok.substr(colon + 1));
        if (name == "zero") k.append(BlockType::Zero, dim);
        else if (name == "free") k.append(BlockType::Free, dim);
        else if (name == "nonneg") k.append(BlockType::Nonneg, dim);
        else if (name == "soc") k.append(BlockType::SecondOrder, dim);
        else if (name == "rsoc") k.append(BlockType::RotatedSecondOrder, dim);
        else if (name == "exp") k.append(BlockType::Exponential, 3);
        else if (name == "exp*") k.append(BlockType::ExponentialDual, 3);
        else throw std::invalid_argument("unknown cone token: " + tok);
    }
    return k;
}

namespace {

void project_nonneg(Eigen::Ref<Eigen::VectorXd> x) {
    x = x.cwiseMax(0.0);
}

void project_soc(Eigen::Ref<Eigen::VectorXd> x) {
    const int d = static_cast<int>(x.size());
    if (d == 1) {
        x(0) = std::max(x(0), 0.0);
        return;
    }
    const double t = x(0);
    const double nrm = x.tail(d - 1).norm();
    if (nrm <= t) return;          // inside
    if (nrm <= -t) { x.setZero(); return; }  // polar
    const double a = 0.5 * (nrm + t);
    x(0) = a;
    x.tail(d - 1) *= a / nrm;
}

// (p, q, z) with 2pq >= |z|^2, p, q >= 0. Orthogonal change of basis
// p' = (p+q)/sqrt2, q' = (p-q)/sqrt2 maps the block onto a SOC.
void project_rsoc(Eigen::Ref<Eigen::VectorXd> x) {
    const int d = static_cast<int>(x.size());
    if (d == 2) {
        // 2pq >= 0, p,q >= 0 is just the nonnegative quadrant
        x = x.cwiseMax(0.0);
        return;
    }
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Eigen::VectorXd w(d);
    w(0) = (x(0) + x(1)) * inv_sqrt2;
    w(1) = (x(0) - x(1)) * inv_sqrt2;
    w.tail(d - 2) = x.tail(d - 2);
    project_soc(w);
    x(0) = (w(0) + w(1)) * inv_sqrt2;
    x(1) = (w(0) - w(1)) * inv_sqrt2;
    x.tail(d - 2) = w.tail(d - 2);
}

bool in_exp_primal(double r, double s, double t, double thresh) {
    if (s > 0) {
        // accept when the defect divided by the constraint gradient (an
        // approximate distance to the boundary surface) is below thresh
        const double E = std::exp(r / s);
        const double q = 1.0 + (1.0 - r / s) * (1.0 - r / s);
        if (std::isfinite(E)) {
            const double dn = E >= 1.0 ? (s - t / E) / std::sqrt(q + 1.0 / (E * E))
                                       : (s * E - t) / std::max(1.0, std::sqrt(E * E * q + 1.0));
            if (dn <= thresh) return true;
        }
    }
    return r <= thresh && std::abs(s) <= thresh && t >= -thresh;
}

bool in_exp_polar(double r, double s, double t, double thresh) {
    // -v in Kexp^*  <=>  v in the polar cone
    if (r > 0) {
        const double E = std::exp(s / r);
        const double e1 = std::exp(1.0);
        const double q = 1.0 + (1.0 - s / r) * (1.0 - s / r);
        if (std::isfinite(E)) {
            const double dn = E >= 1.0
                                  ? (r + e1 * t / E) / std::sqrt(q + e1 * e1 / (E * E))
                                  : (r * E + e1 * t) /
                                        std::max(1.0, std::sqrt(E * E * q + e1 * e1));
            if (dn <= thresh) return true;
        }
    }
    return std::abs(r) <= thresh && s <= thresh && t <= thresh;
}

double exp_newton_1d(double rho, double y_hat, double z_hat) {
    double t = std::max(-z_hat, 1e-9);
    for (int i = 0; i < kExpMaxIters; ++i) {
        const double tr = t / rho;
        const double f = t * (t + z_hat) / (rho * rho) - y_hat / rho + std::log(tr) + 1.0;
        const double fp = (2.0 * t + z_hat) / (rho * rho) + 1.0 / t;
        t = t - f / fp;
        if (t <= -z_hat) return 0.0;
        if (t <= 0.0) return z_hat;
        if (std::abs(f) < kExpTol) break;
    }
    return t + z_hat;
}

Eigen::Vector3d exp_solve_fixed_rho(const Eigen::Vector3d& v, double rho) {
    Eigen::Vector3d x;
    x(2) = exp_newton_1d(rho, v(1), v(2));
    x(1) = (x(2) - v(2)) * x(2) / rho;
    x(0) = v(0) - rho;
    return x;
}

double exp_grad(const Eigen::Vector3d& v, double rho, Eigen::Vector3d& x) {
    x = exp_solve_fixed_rho(v, rho);
    if (x(1) <= 1e-12) return x(0);
    return x(0) + x(1) * std::log(x(1) / x(2));
}

// Polish the projection on the smooth boundary piece x = (s u, s, s e^u),
// s > 0: Newton on the squared distance in the (u, s) chart.
Eigen::Vector3d exp_polish(const Eigen::Vector3d& v, Eigen::Vector3d x) {
    if (!(x(1) > 1e-300)) return x;
    double u = x(0) / x(1), s = x(1);
    auto value = [&](double uu, double ss) {
        const double E = std::exp(uu);
        const double a = ss * uu - v(0), b = ss - v(1), c = ss * E - v(2);
        return a * a + b * b + c * c;
    };
    double fcur = value(u, s);
    for (int it = 0; it < 60; ++it) {
        const double E = std::exp(u);
        const double a = s * u - v(0), b = s - v(1), c = s * E - v(2);
        const double gu = a * s + c * s * E;
        const double gs = a * u + b + c * E;
        const double huu = s * s + s * s * E * E + c * s * E;
        const double hus = a + c * E + s * (u + E * E);
        const double hss = u * u + 1.0 + E * E;
        const double det = huu * hss - hus * hus;
        double du, ds;
        if (std::abs(det) > 1e-300) {
            du = -(hss * gu - hus * gs) / det;
            ds = -(huu * gs - hus * gu) / det;
        } else {
            du = -gu;
            ds = -gs;
        }
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            const double un = u + step * du, sn = s + step * ds;
            if (sn > 0.0) {
                const double fn = value(un, sn);
                if (fn <= fcur) {
                    u = un;
                    s = sn;
                    fcur = fn;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!moved) break;
        if (std::abs(gu) + std::abs(gs) < 1e-14 * (1.0 + v.norm()) * (1.0 + v.norm())) break;
    }
    return {s * u, s, s * std::exp(u)};
}

// Same idea in the (u, z) chart x = (z u e^{-u}, z e^{-u}, z), z > 0,
// which is well conditioned when x2 dominates x1.
Eigen::Vector3d exp_polish2(const Eigen::Vector3d& v, const Eigen::Vector3d& x0) {
    if (!(x0(2) > 1e-300) || !(x0(1) > 1e-300)) return x0;
    double u = std::log(x0(2) / x0(1)), z = x0(2);
    auto value = [&](double uu, double zz) {
        const double E = std::exp(-uu);
        const double a = zz * uu * E - v(0), b = zz * E - v(1), c = zz - v(2);
        return a * a + b * b + c * c;
    };
    double fcur = value(u, z);
    for (int it = 0; it < 60; ++it) {
        const double E = std::exp(-u);
        const double a = z * u * E - v(0), b = z * E - v(1), c = z - v(2);
        const double gu = a * z * E * (1.0 - u) - b * z * E;
        const double gz = a * u * E + b * E + c;
        const double huu = z * E * (1.0 - u) * (z * E * (1.0 - u)) + a * z * E * (u - 2.0) +
                           z * E * z * E + b * z * E;
        const double huz = u * E * z * E * (1.0 - u) + a * E * (1.0 - u) - E * z * E - b * E;
        const double hzz = u * E * u * E + E * E + 1.0;
        const double det = huu * hzz - huz * huz;
        double du, dz;
        if (std::abs(det) > 1e-300) {
            du = -(hzz * gu - huz * gz) / det;
            dz = -(huu * gz - huz * gu) / det;
        } else {
            du = -gu;
            dz = -gz;
        }
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            const double un = u + step * du, zn = z + step * dz;
            if (zn > 0.0) {
                const double fn = value(un, zn);
                if (fn <= fcur) {
                    u = un;
                    z = zn;
                    fcur = fn;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!moved) break;
        if (std::abs(gu) + std::abs(gz) < 1e-16 * (1.0 + v.norm()) * (1.0 + v.norm())) break;
    }
    const double E = std::exp(-u);
    return {z * u * E, z * E, z};
}

// Solve the projection KKT system directly: x = (su, s, s e^u) on the
// smooth boundary, v - x = -lambda n(u) with outward normal
// n(u) = (e^u, e^u(1-u), -1). Newton in (u, s, lambda); quadratically
// accurate even where the squared distance is flat to machine precision.
bool exp_kkt_newton(const Eigen::Vector3d& v, double u0, double s0, Eigen::Vector3d* out,
                    double* lambda_out) {
    double u = u0, s = s0;
    double lam = s * std::exp(u) - v(2);
    auto residual = [&](double uu, double ss, double ll) {
        const double E = std::exp(uu);
        return Eigen::Vector3d(ss * uu + ll * E - v(0), ss + ll * E * (1.0 - uu) - v(1),
                               ss * E - ll - v(2));
    };
    Eigen::Vector3d F = residual(u, s, lam);
    double fn = F.norm();
    const double scale = std::max(1.0, v.norm());
    for (int it = 0; it < 100 && fn > 1e-14 * scale; ++it) {
        const double E = std::exp(u);
        Eigen::Matrix3d J;
        J << s + lam * E, u, E,
             -lam * u * E, 1.0, E * (1.0 - u),
             s * E, E, -1.0;
        Eigen::Vector3d d = J.fullPivLu().solve(-F);
        if (!d.allFinite()) return false;
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            const double un = u + step * d(0), sn = s + step * d(1), ln = lam + step * d(2);
            if (sn > 0.0 && std::isfinite(std::exp(un))) {
                Eigen::Vector3d Fn = residual(un, sn, ln);
                if (Fn.norm() < fn) {
                    u = un;
                    s = sn;
                    lam = ln;
                    F = Fn;
                    fn = Fn.norm();
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    if (fn > 1e-11 * scale || !(s > 0.0) || lam < -1e-11 * scale) return false;
    *out = Eigen::Vector3d(s * u, s, s * std::exp(u));
    *lambda_out = lam;
    return true;
}

// Project w onto the boundary of the dual exponential cone by Gauss-Newton
// on its charts y(u,s) = (-s, -su, s e^{u-1}) and y(u,z) = (-z e^{1-u},
// -z u e^{1-u}, z). Accurate when w is close to the dual cone (small
// residual), which is exactly the regime where the primal charts degenerate.
Eigen::Vector3d exp_dual_boundary(const Eigen::Vector3d& w) {
    auto gauss_newton = [&](auto&& point, auto&& jac, double a0, double b0) {
        double a = a0, b = b0;
        Eigen::Vector3d y = point(a, b);
        double fcur = (y - w).squaredNorm();
        for (int it = 0; it < 60; ++it) {
            Eigen::Matrix<double, 3, 2> J = jac(a, b);
            Eigen::Vector3d r = point(a, b) - w;
            Eigen::Matrix2d JtJ = J.transpose() * J;
            Eigen::Vector2d g = J.transpose() * r;
            JtJ.diagonal().array() += 1e-300;
            Eigen::Vector2d d = -JtJ.ldlt().solve(g);
            double step = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 40; ++ls) {
                const double an = a + step * d(0), bn = b + step * d(1);
                if (bn > 0.0) {
                    Eigen::Vector3d yn = point(an, bn);
                    const double fn = (yn - w).squaredNorm();
                    if (fn <= fcur) {
                        a = an;
                        b = bn;
                        y = yn;
                        fcur = fn;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        return y;
    };

    auto pointA = [](double u, double s) {
        return Eigen::Vector3d(-s, -s * u, s * std::exp(u - 1.0));
    };
    auto jacA = [](double u, double s) {
        Eigen::Matrix<double, 3, 2> J;
        const double E = std::exp(u - 1.0);
        J << 0.0, -1.0, -s, -u, s * E, E;
        return J;
    };
    auto pointB = [](double u, double z) {
        const double E = std::exp(1.0 - u);
        return Eigen::Vector3d(-z * E, -z * u * E, z);
    };
    auto jacB = [](double u, double z) {
        Eigen::Matrix<double, 3, 2> J;
        const double E = std::exp(1.0 - u);
        J << z * E, -E, z * E * (u - 1.0), -u * E, 0.0, 1.0;
        return J;
    };

    const double s0 = std::max(-w(0), 1e-9);
    const double uA = std::clamp(w(0) < 0 ? w(1) / w(0) : 0.0, -500.0, 500.0);
    Eigen::Vector3d yA = gauss_newton(pointA, jacA, uA, s0);
    const double z0 = std::max(w(2), 1e-12);
    const double uB = std::clamp(1.0 - std::log(std::max(-w(0), 1e-300) / z0), -500.0, 500.0);
    Eigen::Vector3d yB = gauss_newton(pointB, jacB, uB, z0);
    return (yA - w).squaredNorm() <= (yB - w).squaredNorm() ? yA : yB;
}

}  // namespace

Eigen::Vector3d project_exponential(const Eigen::Vector3d& v) {
    const double r = v(0), s = v(1), t = v(2);
    const double scale = std::max(1.0, v.norm());
    const double thresh = 1e-13 * scale;

    if (in_exp_primal(r, s, t, thresh)) return v;
    if (in_exp_polar(r, s, t, thresh)) return Eigen::Vector3d::Zero();
    if (r < 0 && s < 0) return {r, 0.0, std::max(t, 0.0)};

    // Bisection on the dual multiplier rho; the inner solve recovers the
    // projection for a fixed rho by a 1-D Newton iteration.
    Eigen::Vector3d x;
    double lb = 0.0, ub = 0.125;
    while (exp_grad(v, ub, x) > 0) {
        lb = ub;
        ub *= 2.0;
        if (ub > 1e30) break;
    }
    double rho = 0.5 * (lb + ub);
    for (int i = 0; i < kExpMaxIters; ++i) {
        rho = 0.5 * (lb + ub);
        const double g = exp_grad(v, rho, x);
        if (g > 0)
            lb = rho;
        else
            ub = rho;
        if (ub - lb < kExpTol * std::max(1.0, rho)) break;
    }
    x = exp_solve_fixed_rho(v, 0.5 * (lb + ub));

    // The bisection iterate degrades when the optimal multiplier is tiny
    // or huge, so refine by solving the projection KKT system exactly from
    // several starts; fall back to distance-polished candidates and the ray
    // face {r <= 0, s = 0, t >= 0} when the smooth system has no solution.
    const Eigen::Vector3d face{std::min(r, 0.0), 0.0, std::max(t, 0.0)};
    const double face_d = (face - v).squaredNorm();

    bool have_kkt = false;
    Eigen::Vector3d xk;
    double dk = 0.0;
    auto try_kkt = [&](const Eigen::Vector3d& start) {
        if (!start.allFinite() || !(start(1) > 1e-300)) return;
        Eigen::Vector3d cand;
        double lam;
        if (exp_kkt_newton(v, start(0) / start(1), start(1), &cand, &lam)) {
            const double d = (cand - v).squaredNorm();
            if (!have_kkt || d < dk) {
                have_kkt = true;
                xk = cand;
                dk = d;
            }
        }
    };
    const double s0 = std::max(s, 1e-9);
    const double u0 = std::clamp(t > thresh ? std::log(t / s0) : r / s0, -500.0, 30.0);
    const Eigen::Vector3d chart_guess{s0 * u0, s0, s0 * std::exp(u0)};
    try_kkt(x);
    try_kkt(exp_polish(v, x));
    try_kkt(exp_polish2(v, x));
    try_kkt(chart_guess);
    try_kkt(exp_polish(v, chart_guess));
    try_kkt(exp_polish2(v, chart_guess));
    if (s > 0 && r < 0) try_kkt({r, s, s * std::exp(r / s)});
    if (!have_kkt) {
        // apex regime: recover a start through the Moreau pair
        try_kkt(v + exp_dual_boundary(-v));
    }
    if (have_kkt && dk <= face_d + 1e-9 * scale * scale) {
        if (xk(1) < 0) xk(1) = 0;
        if (xk(2) < 0) xk(2) = 0;
        return xk;
    }

    Eigen::Vector3d best = face;
    double best_d = face_d;
    auto consider = [&](const Eigen::Vector3d& cand) {
        if (!cand.allFinite()) return;
        const double d = (cand - v).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = cand;
        }
    };
    consider(exp_polish(v, x));
    consider(exp_polish2(v, x));
    consider(exp_polish(v, chart_guess));
    consider(exp_polish2(v, chart_guess));
    if (best(1) < 0) best(1) = 0;
    if (best(2) < 0) best(2) = 0;
    return best;
}

namespace {

void project_block(const ConeBlock& blk, Eigen::Ref<Eigen::VectorXd> x) {
    switch (blk.type) {
        case BlockType::Zero: x.setZero(); break;
        case BlockType::Free: break;
        case BlockType::Nonneg: project_nonneg(x); break;
        case BlockType::SecondOrder: project_soc(x); break;
        case BlockType::RotatedSecondOrder: project_rsoc(x); break;
        case BlockType::Exponential: {
            Eigen::Vector3d p = project_exponential(Eigen::Vector3d(x(0), x(1), x(2)));
            x(0) = p(0); x(1) = p(1); x(2) = p(2);
            break;
        }
        case BlockType::ExponentialDual: {
            // Moreau: Pi_{K*}(v) = v + Pi_K(-v)
            Eigen::Vector3d neg(-x(0), -x(1), -x(2));
            Eigen::Vector3d p = project_exponential(neg);
            x(0) += p(0); x(1) += p(1); x(2) += p(2);
            break;
        }
    }
}

}  // namespace

Eigen::VectorXd project_serial(const Cone& cone, const Eigen::VectorXd& v) {
    if (v.size() != cone.dim()) throw std::invalid_argument("project: dimension mismatch");
    Eigen::VectorXd x = v;
    int off = 0;
    for (const auto& blk : cone.blocks()) {
        project_block(blk, x.segment(off, blk.dim));
        off += blk.dim;
    }
    return x;
}

Eigen::VectorXd project(const Cone& cone, const Eigen::VectorXd& v) {
    if (v.size() != cone.dim()) throw std::invalid_argument("project: dimension mismatch");
    Eigen::VectorXd x = v;
    const auto& blocks = cone.blocks();
    const int nb = static_cast<int>(blocks.size());
    std::vector<int> offsets(nb);
    int off = 0;
    for (int i = 0; i < nb; ++i) {
        offsets[i] = off;
        off += blocks[i].dim;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (nb > 64)
#endif
    for (int i = 0; i < nb; ++i) {
        project_block(blocks[i], x.segment(offsets[i], blocks[i].dim));
    }
    return x;
}

MembershipReport membership(const Cone& cone, const Eigen::VectorXd& v, double tol) {
    if (v.size() != cone.dim()) throw std::invalid_argument("membership: dimension mismatch");
    MembershipReport rep{true, -1, 0.0};
    int off = 0, idx = 0;
    for (const auto& blk : cone.blocks()) {
        Eigen::VectorXd seg = v.segment(off, blk.dim);
        Eigen::VectorXd proj = seg;
        project_block(blk, proj);
        const double dist = (seg - proj).norm();
        if (dist > rep.worst_violation) {
            rep.worst_violation = dist;
            rep.worst_block = idx;
        }
        off += blk.dim;
        ++idx;
    }
    rep.inside = rep.worst_violation <= tol;
    if (rep.inside) rep.worst_block = -1;
    return rep;
}

}  // namespace riskhorizon
