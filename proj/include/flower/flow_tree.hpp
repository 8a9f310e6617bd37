#pragma once

// Prefix tree over catalog token sequences with exact state flows.
//
// Every title gets an END marker appended so terminal states are unambiguous
// leaves. Leaf flow equals the item's outcome reward, internal flow is the sum
// of child flows, and the root flow is the partition constant Z. The ratio
// F(child)/F(parent) is the token-level process reward.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flower/catalog.hpp"
#include "flower/common.hpp"

namespace flower {

using TokenId = int32_t;
constexpr TokenId kEndTokenId = 0;
constexpr int32_t kNoItem = -1;

struct FlowNode {
    TokenId token = -1;     // token of the incoming edge; kEndTokenId for END leaves; -1 at root
    double flow = 0.0;      // F(s)
    int32_t item = kNoItem; // tree item index iff END leaf
    int32_t edge = -1;      // index of the incoming edge; -1 at root
    int depth = 0;
    const FlowNode* parent = nullptr;
    std::vector<std::unique_ptr<FlowNode>> children;  // END first, then token text order

    bool is_leaf() const { return children.empty(); }
};

enum class RewardVariant { Plain, DivPref, MulPref };

inline std::string reward_variant_name(RewardVariant v) {
    switch (v) {
        case RewardVariant::Plain: return "plain";
        case RewardVariant::DivPref: return "div";
        case RewardVariant::MulPref: return "mul";
    }
    return "plain";
}

inline RewardVariant reward_variant_from_name(const std::string& name) {
    if (name == "plain") return RewardVariant::Plain;
    if (name == "div") return RewardVariant::DivPref;
    if (name == "mul") return RewardVariant::MulPref;
    fail(ErrorCode::Config, "unknown reward variant: " + name);
}

class FlowTree {
public:
    // Builds the tree from all catalog items with a positive effective reward.
    // eps_floor > 0 lifts zero-reward items into the tree; with the default 0
    // they are excluded (a zero-flow subtree would make the process reward
    // undefined).
    static FlowTree build(const Catalog& catalog,
                          const std::map<std::string, double>& outcome_rewards,
                          double eps_floor = 0.0) {
        FlowTree t;
        t.vocab_.push_back("<END>");

        for (const auto& [item, ci] : catalog.items) {
            auto it = outcome_rewards.find(item);
            if (it == outcome_rewards.end())
                fail(ErrorCode::Config, "missing outcome reward for item '" + item + "'");
            if (it->second < 0.0)
                fail(ErrorCode::Config, "negative outcome reward for item '" + item + "'");
            double r = it->second;
            if (r <= 0.0 && eps_floor > 0.0) r = eps_floor;
            if (r <= 0.0) continue;
            t.item_ids_.push_back(item);
            t.item_rewards_.push_back(r);
            t.item_tokens_.push_back(ci.tokens);
        }
        if (t.item_ids_.empty()) fail(ErrorCode::Domain, "degenerate flow: all rewards are zero");

        t.root_ = std::make_unique<FlowNode>();
        for (size_t i = 0; i < t.item_ids_.size(); ++i) {
            t.item_index_[t.item_ids_[i]] = static_cast<int32_t>(i);
            t.insert_path(static_cast<int32_t>(i));
        }
        t.finalize();
        return t;
    }

    const FlowNode& root() const { return *root_; }
    double z() const { return root_->flow; }
    size_t num_edges() const { return edge_count_; }
    size_t num_items() const { return item_ids_.size(); }
    size_t vocab_size() const { return vocab_.size(); }

    const std::vector<std::string>& item_ids() const { return item_ids_; }
    const std::string& item_id(int32_t index) const { return item_ids_.at(index); }
    double item_reward(int32_t index) const { return item_rewards_.at(index); }

    int32_t find_item(const std::string& item_id) const {
        auto it = item_index_.find(item_id);
        return it == item_index_.end() ? kNoItem : it->second;
    }

    const std::string& token_text(TokenId id) const { return vocab_.at(id); }

    TokenId find_token(const std::string& text) const {
        auto it = token_ids_.find(text);
        return it == token_ids_.end() ? -1 : it->second;
    }

    const FlowNode* find_child(const FlowNode& node, TokenId token) const {
        for (const auto& c : node.children)
            if (c->token == token) return c.get();
        return nullptr;
    }

    // R_p(s, a) = F(s') / F(s)
    double process_reward(const FlowNode& state, TokenId action) const {
        const FlowNode* child = find_child(state, action);
        if (!child) fail(ErrorCode::Domain, "invalid action: token is not a child of this state");
        if (!(state.flow > 0.0)) fail(ErrorCode::Domain, "singular state: zero flow");
        return child->flow / state.flow;
    }

    // Root-to-leaf node sequence for an item (leaf is the END node).
    std::vector<const FlowNode*> item_path(int32_t item_index) const {
        std::vector<const FlowNode*> path;
        const FlowNode* n = leaf_of_item_.at(item_index);
        while (n) {
            path.push_back(n);
            n = n->parent;
        }
        std::reverse(path.begin(), path.end());
        return path;
    }

    const FlowNode* item_leaf(int32_t item_index) const { return leaf_of_item_.at(item_index); }

    // Sum of log process rewards along the item's path; telescopes to
    // log(R_o(y) / Z).
    double path_log_reward(const std::string& item_id) const {
        int32_t idx = find_item(item_id);
        if (idx == kNoItem) {
            fail(ErrorCode::Domain, "item '" + item_id + "' not in flow tree (unknown or zero reward)");
        }
        return path_log_reward(idx);
    }

    double path_log_reward(int32_t item_index) const {
        auto path = item_path(item_index);
        double sum = 0.0;
        for (size_t i = 1; i < path.size(); ++i) {
            if (!(path[i - 1]->flow > 0.0)) fail(ErrorCode::Domain, "zero flow on item path");
            sum += std::log(path[i]->flow / path[i - 1]->flow);
        }
        return sum;
    }

    // JSONL debug dump: one {"path": [...], "flow": f} line per node in
    // DFS order (END rendered as null). Child order makes this path-sorted.
    void dump_jsonl(std::ostream& os) const {
        std::vector<nlohmann::json> path;
        dump_node(os, *root_, path);
    }

private:
    FlowTree() = default;

    TokenId intern(const std::string& text) {
        auto it = token_ids_.find(text);
        if (it != token_ids_.end()) return it->second;
        TokenId id = static_cast<TokenId>(vocab_.size());
        vocab_.push_back(text);
        token_ids_.emplace(text, id);
        return id;
    }

    void insert_path(int32_t item_index) {
        FlowNode* node = root_.get();
        std::vector<TokenId> ids;
        for (const auto& tok : item_tokens_[item_index]) ids.push_back(intern(tok));
        ids.push_back(kEndTokenId);
        for (TokenId id : ids) {
            FlowNode* next = nullptr;
            for (auto& c : node->children)
                if (c->token == id) { next = c.get(); break; }
            if (!next) {
                auto child = std::make_unique<FlowNode>();
                child->token = id;
                child->parent = node;
                child->depth = node->depth + 1;
                next = child.get();
                node->children.push_back(std::move(child));
            }
            node = next;
        }
        node->item = item_index;
        node->flow = item_rewards_[item_index];
    }

    // Sorts children (END first, then token text), assigns DFS edge indices,
    // sums flows bottom-up, and records item leaves.
    void finalize() {
        leaf_of_item_.assign(item_ids_.size(), nullptr);
        edge_count_ = 0;
        finalize_node(*root_);
        if (!(root_->flow > 0.0)) fail(ErrorCode::Domain, "degenerate flow: root flow is zero");
    }

    void finalize_node(FlowNode& node) {
        std::sort(node.children.begin(), node.children.end(),
                  [this](const auto& a, const auto& b) {
                      if (a->token == kEndTokenId || b->token == kEndTokenId)
                          return a->token == kEndTokenId && b->token != kEndTokenId;
                      return vocab_[a->token] < vocab_[b->token];
                  });
        for (auto& c : node.children) {
            c->edge = static_cast<int32_t>(edge_count_++);
            finalize_node(*c);
        }
        if (node.is_leaf()) {
            leaf_of_item_[node.item] = &node;
        } else {
            double sum = 0.0;
            for (const auto& c : node.children) sum += c->flow;
            node.flow = sum;
        }
    }

    void dump_node(std::ostream& os, const FlowNode& node, std::vector<nlohmann::json>& path) const {
        nlohmann::json line;
        line["path"] = path;
        line["flow"] = node.flow;
        os << line.dump() << "\n";
        for (const auto& c : node.children) {
            path.push_back(c->token == kEndTokenId ? nlohmann::json(nullptr)
                                                   : nlohmann::json(vocab_[c->token]));
            dump_node(os, *c, path);
            path.pop_back();
        }
    }

    std::unique_ptr<FlowNode> root_;
    std::vector<std::string> vocab_;  // [0] = END
    std::unordered_map<std::string, TokenId> token_ids_;
    std::vector<std::string> item_ids_;          // sorted by item_id (catalog order)
    std::vector<double> item_rewards_;
    std::vector<std::vector<std::string>> item_tokens_;
    std::unordered_map<std::string, int32_t> item_index_;
    std::vector<const FlowNode*> leaf_of_item_;
    size_t edge_count_ = 0;
};

// Builds the tree with outcome rewards = train frequencies.
inline FlowTree build_prefix_tree(const Catalog& catalog, double eps_floor = 0.0) {
    std::map<std::string, double> rewards;
    for (const auto& [item, ci] : catalog.items)
        rewards[item] = static_cast<double>(ci.frequency);
    return FlowTree::build(catalog, rewards, eps_floor);
}

inline FlowTree build_prefix_tree(const Catalog& catalog,
                                  const std::map<std::string, double>& outcome_rewards,
                                  double eps_floor = 0.0) {
    return FlowTree::build(catalog, outcome_rewards, eps_floor);
}

// Personalized process-reward term for one edge.
//   Plain:   log R_p
//   DivPref: log R_p / p_ui
//   MulPref: log(R_p * p_ui)
inline double personalized_log_reward(RewardVariant variant, double log_rp, double p_ui) {
    if (variant == RewardVariant::Plain) return log_rp;
    if (!(p_ui > 0.0)) fail(ErrorCode::Domain, "preference score must be positive");
    if (variant == RewardVariant::DivPref) return log_rp / p_ui;
    return log_rp + std::log(p_ui);
}

}  // namespace flower
