#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace riskhorizon {

// Disturbance attached to the edge into a node: a mode index and an
// optional real payload. The root carries no event.
struct Event {
    int mode = -1;
    std::optional<Eigen::VectorXd> payload;
};

// Stage-major rooted tree. All nodes of stage t precede all nodes of
// stage t+1; per-stage offsets make every stage a contiguous slice.
// Immutable after construction.
class ScenarioTree {
  public:
    struct NodeData {
        int stage;
        int ancestor;  // -1 for root
        double prob;
        Event event;
    };

    ScenarioTree(int num_stages, std::vector<NodeData> nodes);

    int num_stages() const { return num_stages_; }
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int num_leaves() const;

    int stage(int i) const { return nodes_.at(i).stage; }
    int ancestor(int i) const { return nodes_.at(i).ancestor; }
    double prob(int i) const { return nodes_.at(i).prob; }
    const Event& event(int i) const { return nodes_.at(i).event; }
    bool is_leaf(int i) const { return nodes_.at(i).stage == num_stages_; }

    // [begin, end) of node indices at stage t
    std::pair<int, int> stage_nodes(int t) const;
    // [begin, end) of children of node i (empty for leaves)
    std::pair<int, int> children(int i) const;
    int num_children(int i) const;

    // conditional probability vector over children of i
    Eigen::VectorXd cond_prob(int i) const;
    // unconditional probabilities of the nodes at stage t
    Eigen::VectorXd stage_probs(int t) const;

    std::string to_json() const;
    static ScenarioTree from_json(const std::string& text);

  private:
    void validate() const;

    int num_stages_;
    std::vector<NodeData> nodes_;
    std::vector<int> stage_offset_;     // size num_stages+2
    std::vector<int> child_begin_;      // per node
    std::vector<int> child_end_;
};

struct MarkovModel {
    int num_modes;
    Eigen::MatrixXd transition;  // row-stochastic
    int initial_mode;
};

// Full k-ary tree of an iid process with the given outcome probabilities.
ScenarioTree build_iid_tree(const Eigen::VectorXd& outcome_probs, int horizon);

// Tree of a stopped Markov process: nodes at stages < branching_horizon
// branch over the nonzero transition entries of their mode; later nodes
// chain with a single child carrying the same mode.
ScenarioTree build_stopped_markov_tree(const MarkovModel& model, int horizon,
                                       int branching_horizon);

}  // namespace riskhorizon
