// Benchmark: parallel cone projection against the serial reference.
// Not registered with ctest; build and run the `bench_cones` target directly.
#include <chrono>
#include <cstdio>
#include <random>

#include "riskhorizon/cones.hpp"

using namespace riskhorizon;
using Clock = std::chrono::steady_clock;

namespace {

Cone mixed_cone(int groups) {
    Cone cone;
    for (int g = 0; g < groups; ++g) {
        cone.append(BlockType::Nonneg, 40);
        cone.append(BlockType::SecondOrder, 12);
        cone.append(BlockType::RotatedSecondOrder, 8);
        cone.append(BlockType::Exponential, 3);
        cone.append(BlockType::Zero, 5);
    }
    return cone;
}

double time_ms(int reps, const auto& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best,
                        std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    return best;
}

}  // namespace

int main() {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 2.0);
    std::printf("%10s %10s %12s %12s %9s %10s\n", "groups", "dim", "serial_ms", "parallel_ms",
                "speedup", "max_diff");
    for (int groups : {8, 64, 512, 4096}) {
        const Cone cone = mixed_cone(groups);
        Eigen::VectorXd v(cone.dim());
        for (int i = 0; i < v.size(); ++i) v(i) = nd(rng);

        Eigen::VectorXd ps, pp;
        const double ts = time_ms(5, [&] { ps = project_serial(cone, v); });
        const double tp = time_ms(5, [&] { pp = project(cone, v); });
        std::printf("%10d %10d %12.3f %12.3f %8.2fx %10.2e\n", groups,
                    static_cast<int>(cone.dim()), ts, tp, ts / tp,
                    (ps - pp).cwiseAbs().maxCoeff());
    }
    return 0;
}
