#include "riskhorizon/scenario_tree.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace riskhorizon {

namespace {
constexpr double kProbTol = 1e-12;
}

ScenarioTree::ScenarioTree(int num_stages, std::vector<NodeData> nodes)
    : num_stages_(num_stages), nodes_(std::move(nodes)) {
    if (num_stages_ < 1) throw std::invalid_argument("num_stages must be >= 1");
    const int n = static_cast<int>(nodes_.size());
    stage_offset_.assign(num_stages_ + 2, 0);
    for (const auto& nd : nodes_) {
        if (nd.stage < 0 || nd.stage > num_stages_)
            throw std::invalid_argument("node stage out of range");
        stage_offset_[nd.stage + 1]++;
    }
    for (int t = 0; t <= num_stages_; ++t) stage_offset_[t + 1] += stage_offset_[t];

    child_begin_.assign(n, 0);
    child_end_.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        child_begin_[i] = n;
        child_end_[i] = 0;
    }
    for (int i = 0; i < n; ++i) {
        const int a = nodes_[i].ancestor;
        if (a >= 0) {
            child_begin_[a] = std::min(child_begin_[a], i);
            child_end_[a] = std::max(child_end_[a], i + 1);
        }
    }
    for (int i = 0; i < n; ++i) {
        if (child_begin_[i] > child_end_[i]) { child_begin_[i] = 0; child_end_[i] = 0; }
    }
    validate();
}

void ScenarioTree::validate() const {
    const int n = num_nodes();
    if (n == 0 || nodes_[0].stage != 0 || nodes_[0].ancestor != -1)
        throw std::invalid_argument("root must be node 0 at stage 0");
    if (nodes_[0].prob != 1.0)
        throw std::invalid_argument("root probability must be exactly 1");
    for (int i = 1; i < n; ++i) {
        if (nodes_[i].stage != nodes_[i - 1].stage && nodes_[i].stage != nodes_[i - 1].stage + 1)
            throw std::invalid_argument("node indices must be stage-major");
        const int a = nodes_[i].ancestor;
        if (a < 0 || a >= n || nodes_[a].stage != nodes_[i].stage - 1)
            throw std::invalid_argument("ancestor must lie in the previous stage");
        if (!(nodes_[i].prob > 0.0) || nodes_[i].prob > 1.0 + kProbTol)
            throw std::invalid_argument("node probability must lie in (0, 1]");
    }
    for (int i = 0; i < n; ++i) {
        if (child_begin_[i] == child_end_[i]) {
            if (nodes_[i].stage != num_stages_)
                throw std::invalid_argument("non-terminal node without children");
            continue;
        }
        double sum = 0.0;
        for (int c = child_begin_[i]; c < child_end_[i]; ++c) {
            if (nodes_[c].ancestor != i)
                throw std::invalid_argument("children of a node must be contiguous");
            sum += nodes_[c].prob;
        }
        if (std::abs(sum - nodes_[i].prob) > kProbTol * std::max(1.0, nodes_[i].prob))
            throw std::invalid_argument("children probabilities must sum to the parent's");
    }
}

int ScenarioTree::num_leaves() const {
    return stage_offset_[num_stages_ + 1] - stage_offset_[num_stages_];
}

std::pair<int, int> ScenarioTree::stage_nodes(int t) const {
    if (t < 0 || t > num_stages_) throw std::out_of_range("stage out of range");
    return {stage_offset_[t], stage_offset_[t + 1]};
}

std::pair<int, int> ScenarioTree::children(int i) const {
    if (i < 0 || i >= num_nodes()) throw std::out_of_range("node out of range");
    return {child_begin_[i], child_end_[i]};
}

int ScenarioTree::num_children(int i) const {
    auto [b, e] = children(i);
    return e - b;
}

Eigen::VectorXd ScenarioTree::cond_prob(int i) const {
    auto [b, e] = children(i);
    Eigen::VectorXd p(e - b);
    for (int c = b; c < e; ++c) p(c - b) = nodes_[c].prob / nodes_[i].prob;
    return p;
}

Eigen::VectorXd ScenarioTree::stage_probs(int t) const {
    auto [b, e] = stage_nodes(t);
    Eigen::VectorXd p(e - b);
    for (int i = b; i < e; ++i) p(i - b) = nodes_[i].prob;
    return p;
}

std::string ScenarioTree::to_json() const {
    nlohmann::json j;
    j["num_stages"] = num_stages_;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& nd : nodes_) {
        nlohmann::json node;
        node["stage"] = nd.stage;
        if (nd.ancestor < 0) node["ancestor"] = nullptr;
        else node["ancestor"] = nd.ancestor;
        node["prob"] = nd.prob;
        if (nd.event.mode < 0 && !nd.event.payload) {
            node["event"] = nullptr;
        } else {
            nlohmann::json ev;
            ev["mode"] = nd.event.mode;
            if (nd.event.payload) {
                ev["payload"] = std::vector<double>(nd.event.payload->data(),
                                                    nd.event.payload->data() + nd.event.payload->size());
            }
            node["event"] = ev;
        }
        arr.push_back(node);
    }
    j["nodes"] = arr;
    return j.dump(2);
}

ScenarioTree ScenarioTree::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    const int num_stages = j.at("num_stages").get<int>();
    std::vector<NodeData> nodes;
    for (const auto& node : j.at("nodes")) {
        NodeData nd;
        nd.stage = node.at("stage").get<int>();
        nd.ancestor = node.at("ancestor").is_null() ? -1 : node.at("ancestor").get<int>();
        nd.prob = node.at("prob").get<double>();
        if (!node.at("event").is_null()) {
            const auto& ev = node.at("event");
            nd.event.mode = ev.value("mode", -1);
            if (ev.contains("payload")) {
                auto p = ev.at("payload").get<std::vector<double>>();
                nd.event.payload = Eigen::Map<Eigen::VectorXd>(p.data(), p.size());
            }
        }
        nodes.push_back(std::move(nd));
    }
    return ScenarioTree(num_stages, std::move(nodes));
}

ScenarioTree build_iid_tree(const Eigen::VectorXd& outcome_probs, int horizon) {
    const int k = static_cast<int>(outcome_probs.size());
    if (k < 1) throw std::invalid_argument("need at least one outcome");
    for (int i = 0; i < k; ++i) {
        if (!(outcome_probs(i) > 0.0))
            throw std::invalid_argument("outcome probabilities must be strictly positive");
    }
    if (std::abs(outcome_probs.sum() - 1.0) > kProbTol)
        throw std::invalid_argument("outcome probabilities must sum to 1");
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");

    std::vector<ScenarioTree::NodeData> nodes;
    nodes.push_back({0, -1, 1.0, Event{}});
    int prev_begin = 0, prev_end = 1;
    for (int t = 1; t <= horizon; ++t) {
        const int begin = static_cast<int>(nodes.size());
        for (int a = prev_begin; a < prev_end; ++a) {
            for (int w = 0; w < k; ++w) {
                Event ev;
                ev.mode = w;
                nodes.push_back({t, a, nodes[a].prob * outcome_probs(w), ev});
            }
        }
        prev_begin = begin;
        prev_end = static_cast<int>(nodes.size());
    }
    return ScenarioTree(horizon, std::move(nodes));
}

ScenarioTree build_stopped_markov_tree(const MarkovModel& model, int horizon,
                                       int branching_horizon) {
    const int m = model.num_modes;
    if (m < 1 || model.transition.rows() != m || model.transition.cols() != m)
        throw std::invalid_argument("bad Markov model dimensions");
    for (int i = 0; i < m; ++i) {
        if (model.transition.row(i).minCoeff() < 0.0)
            throw std::invalid_argument("transition entries must be nonnegative");
        if (std::abs(model.transition.row(i).sum() - 1.0) > kProbTol)
            throw std::invalid_argument("transition rows must sum to 1");
    }
    if (branching_horizon < 0 || branching_horizon > horizon)
        throw std::invalid_argument("branching horizon must lie in [0, horizon]");
    if (model.initial_mode < 0 || model.initial_mode >= m)
        throw std::invalid_argument("initial mode out of range");

    std::vector<ScenarioTree::NodeData> nodes;
    nodes.push_back({0, -1, 1.0, Event{}});
    int prev_begin = 0, prev_end = 1;
    for (int t = 1; t <= horizon; ++t) {
        const int begin = static_cast<int>(nodes.size());
        const bool branch = (t - 1) < branching_horizon;
        for (int a = prev_begin; a < prev_end; ++a) {
            const int mode_a = nodes[a].event.mode < 0 ? model.initial_mode : nodes[a].event.mode;
            if (branch) {
                for (int w = 0; w < m; ++w) {
                    const double p = model.transition(mode_a, w);
                    if (p <= 0.0) continue;  // zero-probability nodes are not created
                    Event ev;
                    ev.mode = w;
                    nodes.push_back({t, a, nodes[a].prob * p, ev});
                }
            } else {
                Event ev;
                ev.mode = mode_a;
                nodes.push_back({t, a, nodes[a].prob, ev});
            }
        }
        prev_begin = begin;
        prev_end = static_cast<int>(nodes.size());
    }
    return ScenarioTree(horizon, std::move(nodes));
}

}  // namespace riskhorizon
