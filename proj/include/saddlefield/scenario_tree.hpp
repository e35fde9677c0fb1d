#pragma once

// Finite filtered probability space represented as a scenario tree. Level 0
// is the root (time 0); every leaf sits on the last level and carries the
// endowment Sigma_0 and the dividends psi of the J assets.

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saddlefield/errors.hpp"
#include "saddlefield/points.hpp"

namespace saddlefield {

/// Serialized form: interior nodes hold transition probabilities and
/// children, leaves hold sigma0 and psi.
struct TreeNodeSpec {
    std::vector<double> p;
    std::vector<TreeNodeSpec> children;
    double sigma0 = 0.0;
    std::vector<double> psi;

    bool is_leaf() const { return children.empty(); }
    bool operator==(const TreeNodeSpec&) const = default;
};

/// An atom of F_t: node `index` (left to right) on level t.
struct NodeRef {
    int level = 0;
    int index = 0;

    bool operator==(const NodeRef&) const = default;
};

inline std::string to_string(NodeRef n) { return std::to_string(n.level) + ":" + std::to_string(n.index); }

class ScenarioTree {
public:
    struct Leaf {
        double sigma0 = 0.0;
        Vector psi;
        // Unconditional probability of the path from the root.
        double probability = 1.0;
    };

    ScenarioTree() : ScenarioTree(TreeNodeSpec{}) {}

    explicit ScenarioTree(const TreeNodeSpec& root) {
        levels_.emplace_back();
        add_node(root, 0, 1.0, "root");
        int depth = -1;
        for (const auto& n : nodes_) {
            if (n.children.empty()) {
                if (depth < 0) depth = n.level;
                if (n.level != depth) {
                    throw ConfigError("scenario tree: every leaf must be on the final level (found leaves on levels " +
                                      std::to_string(depth) + " and " + std::to_string(n.level) + ")");
                }
            }
        }
        depth_ = depth;
        for (std::size_t id : levels_[static_cast<std::size_t>(depth_)]) {
            const Node& n = nodes_[id];
            if (static_cast<Index>(n.psi.size()) != num_assets_) {
                throw ConfigError("scenario tree: leaf " + n.path + " has " + std::to_string(n.psi.size()) +
                                  " dividends, expected " + std::to_string(num_assets_));
            }
            leaves_.push_back(Leaf{n.sigma0, n.psi, n.path_probability});
        }
    }

    /// Number of time steps; leaves live on level `levels()`.
    int levels() const { return depth_; }
    Index num_assets() const { return num_assets_; }
    std::size_t num_nodes(int level) const { return levels_.at(static_cast<std::size_t>(level)).size(); }
    std::size_t num_leaves() const { return leaves_.size(); }
    const Leaf& leaf(std::size_t k) const { return leaves_.at(k); }
    const std::vector<Leaf>& leaves() const { return leaves_; }

    void validate(NodeRef n) const {
        if (n.level < 0 || n.level > depth_ || n.index < 0 ||
            static_cast<std::size_t>(n.index) >= levels_[static_cast<std::size_t>(n.level)].size()) {
            throw DomainError("scenario tree: node " + to_string(n) + " does not exist");
        }
    }

    bool is_leaf(NodeRef n) const {
        validate(n);
        return n.level == depth_;
    }

    NodeRef root() const { return {0, 0}; }

    /// Leaf index (position on the final level) of a terminal node.
    std::size_t leaf_index(NodeRef n) const {
        if (!is_leaf(n)) throw DomainError("scenario tree: node " + to_string(n) + " is not terminal");
        return static_cast<std::size_t>(n.index);
    }

    std::vector<NodeRef> children(NodeRef n) const {
        const Node& node = at(n);
        std::vector<NodeRef> out;
        for (std::size_t c : node.children) out.push_back({nodes_[c].level, nodes_[c].index});
        return out;
    }

    const std::vector<double>& transition_probabilities(NodeRef n) const { return at(n).probabilities; }

    /// Unconditional probability of reaching n.
    double probability(NodeRef n) const { return at(n).path_probability; }

    /// Terminal leaves below n with their probabilities conditional on n.
    std::vector<std::pair<std::size_t, double>> descendants(NodeRef n) const {
        std::vector<std::pair<std::size_t, double>> out;
        collect(id_of(n), 1.0, out);
        return out;
    }

    TreeNodeSpec to_spec() const { return spec_of(0); }

private:
    struct Node {
        int level = 0;
        int index = 0;
        std::vector<std::size_t> children;
        std::vector<double> probabilities;
        double path_probability = 1.0;
        double sigma0 = 0.0;
        Vector psi;
        std::string path;
    };

    std::size_t add_node(const TreeNodeSpec& spec, int level, double path_probability, std::string path) {
        if (levels_.size() <= static_cast<std::size_t>(level)) levels_.emplace_back();
        const std::size_t id = nodes_.size();
        Node node;
        node.level = level;
        node.index = static_cast<int>(levels_[static_cast<std::size_t>(level)].size());
        node.path_probability = path_probability;
        node.path = path;
        nodes_.push_back(node);
        levels_[static_cast<std::size_t>(level)].push_back(id);

        if (spec.is_leaf()) {
            if (!spec.p.empty()) {
                throw ConfigError("scenario tree: node " + path + " has probabilities but no children");
            }
            if (!std::isfinite(spec.sigma0)) throw ConfigError("scenario tree: leaf " + path + " has non-finite sigma0");
            Vector psi(static_cast<Index>(spec.psi.size()));
            for (std::size_t j = 0; j < spec.psi.size(); ++j) {
                if (!std::isfinite(spec.psi[j])) throw ConfigError("scenario tree: leaf " + path + " has non-finite psi");
                psi[static_cast<Index>(j)] = spec.psi[j];
            }
            if (!num_assets_set_) {
                num_assets_ = psi.size();
                num_assets_set_ = true;
            }
            nodes_[id].sigma0 = spec.sigma0;
            nodes_[id].psi = std::move(psi);
            return id;
        }

        if (spec.p.size() != spec.children.size()) {
            throw ConfigError("scenario tree: node " + path + " has " + std::to_string(spec.p.size()) +
                              " probabilities for " + std::to_string(spec.children.size()) + " children");
        }
        double total = 0.0;
        for (std::size_t k = 0; k < spec.p.size(); ++k) {
            if (!(spec.p[k] > 0.0) || !std::isfinite(spec.p[k])) {
                throw ConfigError("scenario tree: node " + path + " has a non-positive transition probability p[" +
                                  std::to_string(k) + "]");
            }
            total += spec.p[k];
        }
        if (std::abs(total - 1.0) > 1e-12) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "scenario tree: transition probabilities at node " << path << " sum to " << total << ", not 1";
            throw ConfigError(msg.str());
        }
        nodes_[id].probabilities = spec.p;
        for (std::size_t k = 0; k < spec.children.size(); ++k) {
            const std::size_t child = add_node(spec.children[k], level + 1,
                                               path_probability * spec.p[k], path + ".children[" + std::to_string(k) + "]");
            nodes_[id].children.push_back(child);
        }
        return id;
    }

    std::size_t id_of(NodeRef n) const {
        validate(n);
        return levels_[static_cast<std::size_t>(n.level)][static_cast<std::size_t>(n.index)];
    }

    const Node& at(NodeRef n) const { return nodes_[id_of(n)]; }

    void collect(std::size_t id, double prob, std::vector<std::pair<std::size_t, double>>& out) const {
        const Node& n = nodes_[id];
        if (n.children.empty()) {
            out.emplace_back(static_cast<std::size_t>(n.index), prob);
            return;
        }
        for (std::size_t k = 0; k < n.children.size(); ++k) collect(n.children[k], prob * n.probabilities[k], out);
    }

    TreeNodeSpec spec_of(std::size_t id) const {
        const Node& n = nodes_[id];
        TreeNodeSpec spec;
        if (n.children.empty()) {
            spec.sigma0 = n.sigma0;
            spec.psi.assign(n.psi.data(), n.psi.data() + n.psi.size());
            return spec;
        }
        spec.p = n.probabilities;
        for (std::size_t c : n.children) spec.children.push_back(spec_of(c));
        return spec;
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<std::size_t>> levels_;
    std::vector<Leaf> leaves_;
    int depth_ = 0;
    Index num_assets_ = 0;
    bool num_assets_set_ = false;
};

}  // namespace saddlefield
