#pragma once

// Shared test fixtures: the TinyCat catalog, random catalog generation, and a
// two-cluster interaction log.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "flower/catalog.hpp"
#include "flower/common.hpp"
#include "flower/flow_tree.hpp"

namespace testing {

// Three items with word tokens: "A B" (freq 2), "A C" (freq 1), "D" (freq 3).
inline flower::Catalog tiny_catalog() {
    flower::Catalog cat;
    cat.tokenizer_id = flower::TokenizerId::Word;
    cat.items["iAB"] = {"A B", {"A", "B"}, 2};
    cat.items["iAC"] = {"A C", {"A", "C"}, 1};
    cat.items["iD"] = {"D", {"D"}, 3};
    return cat;
}

inline flower::Catalog single_item_catalog(const std::string& title = "X", int64_t freq = 5) {
    flower::Catalog cat;
    cat.tokenizer_id = flower::TokenizerId::Word;
    cat.items["only"] = {title, flower::tokenize(title, flower::TokenizerId::Word), freq};
    return cat;
}

// Random catalog with distinct token sequences drawn from a small vocabulary
// (so prefixes overlap) and integer frequencies in [1, max_reward].
inline flower::Catalog random_catalog(flower::Rng& rng, size_t max_items = 500,
                                      int64_t max_reward = 10000, size_t vocab = 12,
                                      size_t max_len = 8) {
    static const char* words[] = {"Back", "to", "the", "Future", "Life",  "School",
                                  "II",   "of", "a",   "Night",  "Star",  "Dawn",
                                  "Red",  "Sea", "Old", "Moon"};
    size_t n_items = 1 + rng.next_below(max_items);
    flower::Catalog cat;
    cat.tokenizer_id = flower::TokenizerId::Word;
    std::set<std::vector<std::string>> seen;
    int id = 0;
    while (cat.items.size() < n_items) {
        size_t len = 1 + rng.next_below(max_len);
        std::vector<std::string> tokens;
        for (size_t t = 0; t < len; ++t) tokens.push_back(words[rng.next_below(vocab)]);
        if (!seen.insert(tokens).second) continue;
        std::string title;
        for (size_t t = 0; t < tokens.size(); ++t) {
            if (t) title += ' ';
            title += tokens[t];
        }
        char buf[16];
        std::snprintf(buf, sizeof(buf), "i%04d", id++);
        cat.items[buf] = {title, tokens, 1 + static_cast<int64_t>(rng.next_below(max_reward))};
    }
    return cat;
}

// Two user clusters with disjoint item vocabularies: cluster A users interact
// only with A-items, cluster B with B-items. Within-cluster popularity decays
// with item index.
inline std::vector<flower::InteractionRecord> two_cluster_log(int items_per_cluster = 10,
                                                              int users_per_cluster = 20,
                                                              int interactions_per_user = 12,
                                                              uint64_t seed = 11) {
    flower::Rng rng(seed);
    std::vector<flower::InteractionRecord> log;
    int64_t ts = 1000;
    for (int cluster = 0; cluster < 2; ++cluster) {
        const char tag = cluster == 0 ? 'A' : 'B';
        std::vector<double> weights(items_per_cluster);
        for (int i = 0; i < items_per_cluster; ++i) weights[i] = 1.0 / (1.0 + i);
        for (int u = 0; u < users_per_cluster; ++u) {
            char user[16];
            std::snprintf(user, sizeof(user), "u%c%03d", tag, u);
            for (int j = 0; j < interactions_per_user; ++j) {
                int pick = static_cast<int>(rng.categorical(weights));
                char item[16], title[32];
                std::snprintf(item, sizeof(item), "i%c%02d", tag, pick);
                std::snprintf(title, sizeof(title), "%ctitle %d", tag, pick);
                log.push_back({user, item, title, ts++});
            }
        }
    }
    // interleave clusters in time so the chronological split covers both
    flower::Rng shuffler(seed + 1);
    shuffler.shuffle(log);
    for (size_t i = 0; i < log.size(); ++i) log[i].timestamp = 1000 + static_cast<int64_t>(i);
    return log;
}

}  // namespace testing
