#pragma once

// Autoregressive policy over prefix-tree edges: a per-edge bias, optionally
// plus a per-edge weight vector dotted with a context encoding of the user
// history. The tabular part alone can represent every tree-stochastic policy,
// including the exact flow solution.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flower/common.hpp"
#include "flower/flow_tree.hpp"

namespace flower {

enum class PolicyMode { Tabular, Contextual };

inline std::string policy_mode_name(PolicyMode m) {
    return m == PolicyMode::Tabular ? "tabular" : "contextual";
}

inline PolicyMode policy_mode_from_name(const std::string& name) {
    if (name == "tabular") return PolicyMode::Tabular;
    if (name == "contextual") return PolicyMode::Contextual;
    fail(ErrorCode::Config, "unknown policy mode: " + name);
}

using Context = std::vector<double>;  // empty = history-free / tabular

struct PolicyParams {
    PolicyMode mode = PolicyMode::Tabular;
    int dim = 0;                 // d; 0 in tabular mode
    std::vector<double> bias;    // one per tree edge
    std::vector<double> weight;  // edge-major [edge * dim + k], contextual only
    std::vector<double> embed;   // item-major [item * dim + k], contextual only

    double* weight_row(int32_t edge) { return weight.data() + static_cast<size_t>(edge) * dim; }
    const double* weight_row(int32_t edge) const {
        return weight.data() + static_cast<size_t>(edge) * dim;
    }
    double* embed_row(int32_t item) { return embed.data() + static_cast<size_t>(item) * dim; }
    const double* embed_row(int32_t item) const {
        return embed.data() + static_cast<size_t>(item) * dim;
    }
};

// Biases start at zero (uniform policy at every node); weights and embeddings
// i.i.d. uniform in [-0.01, 0.01] from the run seed.
inline PolicyParams init_params(const FlowTree& tree, PolicyMode mode, int dim, uint64_t seed) {
    PolicyParams p;
    p.mode = mode;
    p.bias.assign(tree.num_edges(), 0.0);
    if (mode == PolicyMode::Contextual) {
        if (dim < 1) fail(ErrorCode::Config, "contextual policy requires dim >= 1");
        p.dim = dim;
        Rng rng(seed);
        p.weight.resize(tree.num_edges() * static_cast<size_t>(dim));
        p.embed.resize(tree.num_items() * static_cast<size_t>(dim));
        for (auto& w : p.weight) w = rng.uniform(-0.01, 0.01);
        for (auto& e : p.embed) e = rng.uniform(-0.01, 0.01);
    }
    return p;
}

// Tabular parameters realizing the exact flow optimum: b_e = log F(child)/F(parent).
inline PolicyParams flow_optimal_params(const FlowTree& tree) {
    PolicyParams p;
    p.mode = PolicyMode::Tabular;
    p.bias.assign(tree.num_edges(), 0.0);
    std::vector<const FlowNode*> stack{&tree.root()};
    while (!stack.empty()) {
        const FlowNode* n = stack.back();
        stack.pop_back();
        for (const auto& c : n->children) {
            p.bias[c->edge] = std::log(c->flow / n->flow);
            stack.push_back(c.get());
        }
    }
    return p;
}

// Mean of embeddings of history items present in the tree; empty (or fully
// unknown) history yields the zero vector. Unknown items are skipped, not
// errors: valid/test histories may contain items absent from train.
inline Context encode_context(std::span<const std::string> history, const FlowTree& tree,
                              const PolicyParams& params, size_t* skipped = nullptr) {
    if (skipped) *skipped = 0;
    if (params.mode == PolicyMode::Tabular) return {};
    Context ctx(params.dim, 0.0);
    size_t kept = 0;
    for (const auto& item : history) {
        int32_t idx = tree.find_item(item);
        if (idx == kNoItem) {
            if (skipped) ++*skipped;
            continue;
        }
        const double* row = params.embed_row(idx);
        for (int k = 0; k < params.dim; ++k) ctx[k] += row[k];
        ++kept;
    }
    if (kept > 0)
        for (auto& v : ctx) v /= static_cast<double>(kept);
    return ctx;
}

namespace detail {

inline double edge_logit(const PolicyParams& params, int32_t edge, const Context& ctx) {
    double l = params.bias[edge];
    if (params.mode == PolicyMode::Contextual && !ctx.empty()) {
        const double* w = params.weight_row(edge);
        for (int k = 0; k < params.dim; ++k) l += w[k] * ctx[k];
    }
    return l;
}

}  // namespace detail

// Softmax over the node's child edges (max-subtracted), order matching
// node.children. temperature scales logits before normalizing.
inline std::vector<double> next_token_dist(const FlowNode& node, const Context& ctx,
                                           const PolicyParams& params, double temperature = 1.0) {
    if (node.is_leaf()) fail(ErrorCode::Domain, "next_token_dist: state is a leaf");
    if (!(temperature > 0.0)) fail(ErrorCode::Config, "temperature must be positive");
    std::vector<double> out(node.children.size());
    double max_logit = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < node.children.size(); ++i) {
        out[i] = detail::edge_logit(params, node.children[i]->edge, ctx) / temperature;
        max_logit = std::max(max_logit, out[i]);
    }
    double sum = 0.0;
    for (auto& v : out) {
        v = std::exp(v - max_logit);
        sum += v;
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Sum of log next-token probabilities along the item's path, END edge included.
inline double seq_log_prob(int32_t item_index, const Context& ctx, const PolicyParams& params,
                           const FlowTree& tree, double temperature = 1.0) {
    auto path = tree.item_path(item_index);
    double sum = 0.0;
    for (size_t i = 0; i + 1 < path.size(); ++i) {
        auto dist = next_token_dist(*path[i], ctx, params, temperature);
        for (size_t c = 0; c < path[i]->children.size(); ++c) {
            if (path[i]->children[c].get() == path[i + 1]) {
                sum += std::log(dist[c]);
                break;
            }
        }
    }
    return sum;
}

inline double seq_log_prob(const std::string& item_id, const Context& ctx,
                           const PolicyParams& params, const FlowTree& tree,
                           double temperature = 1.0) {
    int32_t idx = tree.find_item(item_id);
    if (idx == kNoItem) fail(ErrorCode::Domain, "unknown item '" + item_id + "'");
    return seq_log_prob(idx, ctx, params, tree, temperature);
}

// Constrained ancestral sampling: descends from the root drawing one child per
// node until an END leaf. Always lands on a catalog item.
inline int32_t sample_title_index(const FlowTree& tree, const Context& ctx,
                                  const PolicyParams& params, double temperature, Rng& rng) {
    const FlowNode* node = &tree.root();
    while (!node->is_leaf()) {
        auto dist = next_token_dist(*node, ctx, params, temperature);
        double u = rng.next_double();
        double acc = 0.0;
        size_t pick = dist.size() - 1;
        for (size_t i = 0; i + 1 < dist.size(); ++i) {
            acc += dist[i];
            if (u < acc) { pick = i; break; }
        }
        node = node->children[pick].get();
    }
    return node->item;
}

inline const std::string& sample_title(const FlowTree& tree, const Context& ctx,
                                       const PolicyParams& params, double temperature, Rng& rng) {
    return tree.item_id(sample_title_index(tree, ctx, params, temperature, rng));
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------
// JSON map from edge path (END rendered as null) to (b, u) plus the embedding
// table. nlohmann serializes doubles with shortest round-trip formatting, so
// load is bit-exact.

namespace detail {

inline void collect_edge_paths(const FlowTree& tree, const FlowNode& node,
                               std::vector<nlohmann::json>& path,
                               std::vector<std::pair<nlohmann::json, int32_t>>& out) {
    for (const auto& c : node.children) {
        path.push_back(c->token == kEndTokenId ? nlohmann::json(nullptr)
                                               : nlohmann::json(tree.token_text(c->token)));
        out.emplace_back(nlohmann::json(path), c->edge);
        collect_edge_paths(tree, *c, path, out);
        path.pop_back();
    }
}

}  // namespace detail

inline void save_checkpoint(const PolicyParams& params, const FlowTree& tree,
                            const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["mode"] = policy_mode_name(params.mode);
    j["dim"] = params.dim;

    std::vector<nlohmann::json> prefix;
    std::vector<std::pair<nlohmann::json, int32_t>> edges;
    detail::collect_edge_paths(tree, tree.root(), prefix, edges);
    nlohmann::json edge_list = nlohmann::json::array();
    for (const auto& [p, e] : edges) {
        nlohmann::json entry;
        entry["path"] = p;
        entry["b"] = params.bias[e];
        if (params.mode == PolicyMode::Contextual) {
            entry["u"] = std::vector<double>(params.weight_row(e), params.weight_row(e) + params.dim);
        }
        edge_list.push_back(std::move(entry));
    }
    j["edges"] = std::move(edge_list);

    if (params.mode == PolicyMode::Contextual) {
        nlohmann::json emb = nlohmann::json::object();
        for (size_t i = 0; i < tree.num_items(); ++i) {
            emb[tree.item_id(static_cast<int32_t>(i))] = std::vector<double>(
                params.embed_row(static_cast<int32_t>(i)),
                params.embed_row(static_cast<int32_t>(i)) + params.dim);
        }
        j["embeddings"] = std::move(emb);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

inline PolicyParams load_checkpoint(const FlowTree& tree, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::Parse, "checkpoint is not valid json: " + path);
    if (!j.contains("version") || j["version"].get<int>() != 1)
        fail(ErrorCode::Parse, "unsupported checkpoint version in " + path);

    PolicyParams p;
    p.mode = policy_mode_from_name(j["mode"].get<std::string>());
    p.dim = j["dim"].get<int>();
    p.bias.assign(tree.num_edges(), 0.0);
    if (p.mode == PolicyMode::Contextual) {
        p.weight.assign(tree.num_edges() * static_cast<size_t>(p.dim), 0.0);
        p.embed.assign(tree.num_items() * static_cast<size_t>(p.dim), 0.0);
    }

    size_t seen = 0;
    for (const auto& entry : j["edges"]) {
        const FlowNode* node = &tree.root();
        for (const auto& step : entry["path"]) {
            TokenId id = step.is_null() ? kEndTokenId : tree.find_token(step.get<std::string>());
            const FlowNode* child = id < 0 ? nullptr : tree.find_child(*node, id);
            if (!child) fail(ErrorCode::Parse, "checkpoint edge path not found in tree");
            node = child;
        }
        p.bias[node->edge] = entry["b"].get<double>();
        if (p.mode == PolicyMode::Contextual) {
            auto u = entry["u"].get<std::vector<double>>();
            if (static_cast<int>(u.size()) != p.dim)
                fail(ErrorCode::Parse, "checkpoint weight dim mismatch");
            std::copy(u.begin(), u.end(), p.weight_row(node->edge));
        }
        ++seen;
    }
    if (seen != tree.num_edges())
        fail(ErrorCode::Parse, "checkpoint edge count does not match tree");

    if (p.mode == PolicyMode::Contextual) {
        for (const auto& [item, row] : j["embeddings"].items()) {
            int32_t idx = tree.find_item(item);
            if (idx == kNoItem) fail(ErrorCode::Parse, "checkpoint embedding for unknown item");
            auto v = row.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != p.dim)
                fail(ErrorCode::Parse, "checkpoint embedding dim mismatch");
            std::copy(v.begin(), v.end(), p.embed_row(idx));
        }
    }
    return p;
}

}  // namespace flower
