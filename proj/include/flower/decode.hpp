#pragma once

// Constrained decoding over the prefix tree: exact top-K by best-first search
// and sampling without replacement. Every emitted item is a catalog member by
// construction.

#include <algorithm>
#include <cstdint>
#include <queue>
#include <vector>

#include "flower/common.hpp"
#include "flower/flow_tree.hpp"
#include "flower/policy.hpp"

namespace flower {

struct ScoredItem {
    int32_t item = kNoItem;
    double score = 0.0;  // sequence log-probability at the decode temperature
};

struct RankedList {
    std::vector<ScoredItem> entries;  // rank order
    int k = 0;
};

// Exact top-K by sequence log-probability under the temperature-scaled
// per-node softmax. Best-first search is admissible here: extending a prefix
// can only decrease its log-probability, so leaves pop in descending order.
// Ties broken by item_id.
inline RankedList generate_topk(const FlowTree& tree, const Context& ctx,
                                const PolicyParams& params, int k, double temperature = 1.0) {
    if (k < 1) fail(ErrorCode::Config, "k must be >= 1");
    if (!(temperature > 0.0)) fail(ErrorCode::Config, "temperature must be positive");
    const size_t want = std::min(static_cast<size_t>(k), tree.num_items());

    struct Frontier {
        double logp;
        uint64_t order;
        const FlowNode* node;
    };
    auto worse = [](const Frontier& a, const Frontier& b) {
        if (a.logp != b.logp) return a.logp < b.logp;
        return a.order > b.order;
    };
    std::priority_queue<Frontier, std::vector<Frontier>, decltype(worse)> pq(worse);
    uint64_t order = 0;
    pq.push({0.0, order++, &tree.root()});

    std::vector<ScoredItem> found;  // arrives in non-increasing score order
    while (!pq.empty()) {
        if (found.size() >= want && pq.top().logp < found[want - 1].score) break;
        Frontier f = pq.top();
        pq.pop();
        if (f.node->is_leaf()) {
            found.push_back({f.node->item, f.logp});
            continue;
        }
        auto dist = next_token_dist(*f.node, ctx, params, temperature);
        for (size_t i = 0; i < f.node->children.size(); ++i) {
            pq.push({f.logp + std::log(dist[i]), order++, f.node->children[i].get()});
        }
    }

    std::sort(found.begin(), found.end(), [&tree](const ScoredItem& a, const ScoredItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return tree.item_id(a.item) < tree.item_id(b.item);
    });
    found.resize(std::min(found.size(), want));
    return {std::move(found), k};
}

// Sampling without replacement: repeated constrained sampling, skipping
// duplicates, until K distinct items or the resample cap (100*K); any
// remaining slots are filled from the top-K remainder. Entries keep sampling
// order; scores are the items' sequence log-probabilities.
inline RankedList sample_list(const FlowTree& tree, const Context& ctx,
                              const PolicyParams& params, int k, double temperature, Rng& rng) {
    if (k < 1) fail(ErrorCode::Config, "k must be >= 1");
    const size_t want = std::min(static_cast<size_t>(k), tree.num_items());
    std::vector<bool> seen(tree.num_items(), false);
    std::vector<ScoredItem> entries;
    const long cap = 100L * k;
    for (long attempt = 0; attempt < cap && entries.size() < want; ++attempt) {
        int32_t idx = sample_title_index(tree, ctx, params, temperature, rng);
        if (seen[idx]) continue;
        seen[idx] = true;
        entries.push_back({idx, seq_log_prob(idx, ctx, params, tree, temperature)});
    }
    if (entries.size() < want) {
        auto top = generate_topk(tree, ctx, params,
                                 static_cast<int>(std::min(want + entries.size(), tree.num_items())),
                                 temperature);
        for (const auto& e : top.entries) {
            if (entries.size() >= want) break;
            if (!seen[e.item]) {
                seen[e.item] = true;
                entries.push_back(e);
            }
        }
    }
    return {std::move(entries), k};
}

}  // namespace flower
