#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "riskhorizon/scenario_tree.hpp"

using namespace riskhorizon;
using Eigen::VectorXd;

namespace {

VectorXd probs2(double a, double b) {
    VectorXd p(2);
    p << a, b;
    return p;
}

void check_invariants(const ScenarioTree& tree) {
    for (int t = 0; t <= tree.num_stages(); ++t) {
        CHECK(tree.stage_probs(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (int i = 0; i < tree.num_nodes(); ++i) {
        // prob equals the product of conditional probabilities along the path
        double p = 1.0;
        int j = i;
        while (tree.ancestor(j) >= 0) {
            const int a = tree.ancestor(j);
            auto [cb, ce] = tree.children(a);
            p *= tree.cond_prob(a)(j - cb);
            j = a;
        }
        CHECK(tree.prob(i) == doctest::Approx(p).epsilon(1e-12));
        if (!tree.is_leaf(i)) {
            VectorXd cp = tree.cond_prob(i);
            CHECK(cp.sum() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(cp.minCoeff() > 0.0);
        }
    }
}

}  // namespace

TEST_CASE("iid binary tree of depth 4") {
    auto tree = build_iid_tree(probs2(0.2, 0.8), 4);
    CHECK(tree.num_nodes() == 31);
    CHECK(tree.num_leaves() == 16);
    // the all-low-branch leaf is node 15 in stage-major order
    CHECK(tree.prob(15) == doctest::Approx(0.0016).epsilon(1e-14));
    auto [b, e] = tree.stage_nodes(4);
    CHECK(b == 15);
    CHECK(e == 31);
    auto [cb, ce] = tree.children(0);
    CHECK(ce - cb == 2);
    CHECK(tree.cond_prob(0)(0) == doctest::Approx(0.2));
    CHECK(tree.cond_prob(0)(1) == doctest::Approx(0.8));
    check_invariants(tree);
}

TEST_CASE("degenerate single-outcome chain") {
    VectorXd p(1);
    p << 1.0;
    auto tree = build_iid_tree(p, 3);
    CHECK(tree.num_nodes() == 4);
    for (int i = 0; i < 4; ++i) CHECK(tree.prob(i) == 1.0);
}

TEST_CASE("uniform binary tree node count and leaf probabilities") {
    auto tree = build_iid_tree(probs2(0.5, 0.5), 2);
    CHECK(tree.num_nodes() == 7);
    auto [b, e] = tree.stage_nodes(2);
    for (int i = b; i < e; ++i) CHECK(tree.prob(i) == doctest::Approx(0.25));
}

TEST_CASE("iid node count formula") {
    for (int k = 2; k <= 4; ++k) {
        for (int N = 1; N <= 4; ++N) {
            VectorXd p = VectorXd::Constant(k, 1.0 / k);
            auto tree = build_iid_tree(p, N);
            const long expected = (static_cast<long>(std::pow(k, N + 1)) - 1) / (k - 1);
            CHECK(tree.num_nodes() == expected);
        }
    }
}

TEST_CASE("iid tree input validation") {
    CHECK_THROWS(build_iid_tree(probs2(0.0, 1.0), 2));
    CHECK_THROWS(build_iid_tree(probs2(-0.1, 1.1), 2));
    CHECK_THROWS(build_iid_tree(probs2(0.3, 0.8), 2));
    CHECK_THROWS(build_iid_tree(probs2(0.5, 0.5), 0));
}

TEST_CASE("stopped Markov tree with one branching stage") {
    MarkovModel model;
    model.num_modes = 2;
    model.transition = Eigen::MatrixXd::Constant(2, 2, 0.5);
    model.initial_mode = 0;
    auto tree = build_stopped_markov_tree(model, 3, 1);
    CHECK(tree.num_leaves() == 2);
    // every node at stage >= 1 chains with conditional probability 1
    for (int t = 1; t < 3; ++t) {
        auto [b, e] = tree.stage_nodes(t);
        for (int i = b; i < e; ++i) {
            CHECK(tree.num_children(i) == 1);
            CHECK(tree.cond_prob(i)(0) == doctest::Approx(1.0));
            auto [cb, ce] = tree.children(i);
            CHECK(tree.event(cb).mode == tree.event(i).mode);
        }
    }
    check_invariants(tree);
}

TEST_CASE("full branching stopped Markov tree") {
    MarkovModel model;
    model.num_modes = 4;
    model.transition = Eigen::MatrixXd::Constant(4, 4, 0.25);
    model.initial_mode = 2;
    auto tree = build_stopped_markov_tree(model, 7, 7);
    CHECK(tree.num_leaves() == 16384);  // 4^7
    check_invariants(tree);
}

TEST_CASE("zero transition entries produce no child nodes") {
    MarkovModel model;
    model.num_modes = 3;
    model.transition.resize(3, 3);
    model.transition << 0.5, 0.5, 0.0,
                        0.2, 0.3, 0.5,
                        0.0, 0.0, 1.0;
    model.initial_mode = 0;
    auto tree = build_stopped_markov_tree(model, 2, 2);
    // enumerate positive-probability mode paths of length 2
    int count = 0;
    for (int w0 = 0; w0 < 3; ++w0) {
        if (model.transition(0, w0) == 0.0) continue;
        for (int w1 = 0; w1 < 3; ++w1) {
            if (model.transition(w0, w1) == 0.0) continue;
            ++count;
        }
    }
    CHECK(tree.num_leaves() == count);
    check_invariants(tree);
}

TEST_CASE("stopped Markov validation") {
    MarkovModel model;
    model.num_modes = 2;
    model.transition = Eigen::MatrixXd::Constant(2, 2, 0.6);  // rows sum to 1.2
    model.initial_mode = 0;
    CHECK_THROWS(build_stopped_markov_tree(model, 3, 1));
    model.transition = Eigen::MatrixXd::Constant(2, 2, 0.5);
    CHECK_THROWS(build_stopped_markov_tree(model, 3, 4));  // t0 > N
}

TEST_CASE("stage and node range errors") {
    auto tree = build_iid_tree(probs2(0.5, 0.5), 2);
    CHECK_THROWS(tree.stage_nodes(3));
    CHECK_THROWS(tree.stage_nodes(-1));
    CHECK_THROWS(tree.children(99));
}

TEST_CASE("json round trip is value exact") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    double p0 = u(rng);
    auto tree = build_iid_tree(probs2(p0, 1.0 - p0), 3);
    auto back = ScenarioTree::from_json(tree.to_json());
    REQUIRE(back.num_nodes() == tree.num_nodes());
    for (int i = 0; i < tree.num_nodes(); ++i) {
        CHECK(back.prob(i) == tree.prob(i));  // bitwise
        CHECK(back.stage(i) == tree.stage(i));
        CHECK(back.ancestor(i) == tree.ancestor(i));
        CHECK(back.event(i).mode == tree.event(i).mode);
    }
}
