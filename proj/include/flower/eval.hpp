#pragma once

// Evaluation metrics: accuracy (HR@K, NDCG@K), fairness (DGU@K, MGU@K, group
// histograms), diversity (word entropy, type-token ratio), and distribution
// mismatch (KL both directions, JS). Entropy and divergences are in bits.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flower/catalog.hpp"
#include "flower/common.hpp"

namespace flower {

constexpr double kKlSmoothing = 1e-9;

inline double log2_safe(double x) { return std::log2(x); }

// ---------------------------------------------------------------------------
// accuracy
// ---------------------------------------------------------------------------

// HR = mean of [target in list]; NDCG = mean of 1/log2(1+rank), rank 1-based,
// 0 when absent (single-target ideal DCG is 1).
inline std::pair<double, double> hr_ndcg(const std::vector<std::vector<std::string>>& recs,
                                         const std::vector<std::string>& targets) {
    if (recs.size() != targets.size())
        fail(ErrorCode::Config, "hr_ndcg: lists and targets differ in length");
    if (recs.empty()) return {0.0, 0.0};
    double hits = 0.0, gain = 0.0;
    for (size_t u = 0; u < recs.size(); ++u) {
        for (size_t r = 0; r < recs[u].size(); ++r) {
            if (recs[u][r] == targets[u]) {
                hits += 1.0;
                gain += 1.0 / std::log2(2.0 + static_cast<double>(r));
                break;
            }
        }
    }
    double n = static_cast<double>(recs.size());
    return {hits / n, gain / n};
}

// ---------------------------------------------------------------------------
// fairness
// ---------------------------------------------------------------------------

// Share of each popularity group among all top-K slots pooled over users
// (with multiplicity).
inline std::vector<double> recommended_group_shares(
    const std::vector<std::vector<std::string>>& recs, const GroupAssignment& groups) {
    std::vector<double> counts(groups.num_groups, 0.0);
    double total = 0.0;
    for (const auto& list : recs) {
        for (const auto& item : list) {
            auto it = groups.group_of.find(item);
            if (it == groups.group_of.end())
                fail(ErrorCode::Domain, "recommended item '" + item + "' has no group");
            counts[it->second] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0.0)
        for (auto& c : counts) c /= total;
    return counts;
}

inline std::vector<double> group_deviations(const std::vector<std::vector<std::string>>& recs,
                                            const GroupAssignment& groups) {
    auto r = recommended_group_shares(recs, groups);
    std::vector<double> d(r.size());
    for (size_t g = 0; g < r.size(); ++g) d[g] = std::abs(r[g] - groups.history_share[g]);
    return d;
}

// DGU = max deviation, MGU = mean deviation between recommended and
// historical group shares.
inline std::pair<double, double> dgu_mgu(const std::vector<std::vector<std::string>>& recs,
                                         const GroupAssignment& groups) {
    auto d = group_deviations(recs, groups);
    double mx = 0.0, mean = 0.0;
    for (double v : d) {
        mx = std::max(mx, v);
        mean += v;
    }
    mean /= static_cast<double>(d.size());
    return {mx, mean};
}

struct GroupHistogram {
    std::vector<double> recommended;  // r_g
    std::vector<double> historical;   // h_g
};

inline GroupHistogram group_histogram(const std::vector<std::vector<std::string>>& recs,
                                      const GroupAssignment& groups) {
    return {recommended_group_shares(recs, groups), groups.history_share};
}

// ---------------------------------------------------------------------------
// diversity
// ---------------------------------------------------------------------------

// Pools every word occurrence across all recommended titles (one per list
// slot, with multiplicity). H is Shannon entropy in bits of the word
// distribution; TTR is unique words over total words.
inline std::pair<double, double> diversity(const std::vector<std::vector<std::string>>& recs,
                                           const Catalog& catalog) {
    std::map<std::string, double> word_counts;
    double total = 0.0;
    for (const auto& list : recs) {
        for (const auto& item : list) {
            auto it = catalog.items.find(item);
            if (it == catalog.items.end())
                fail(ErrorCode::Domain, "recommended item '" + item + "' not in catalog");
            for (const auto& w : tokenize(it->second.title, TokenizerId::Word)) {
                word_counts[w] += 1.0;
                total += 1.0;
            }
        }
    }
    if (total == 0.0) fail(ErrorCode::Domain, "diversity: no words in recommendations");
    double h = 0.0;
    for (const auto& [w, c] : word_counts) {
        double p = c / total;
        h -= p * std::log2(p);
    }
    double ttr = static_cast<double>(word_counts.size()) / total;
    return {h, ttr};
}

// ---------------------------------------------------------------------------
// distribution mismatch
// ---------------------------------------------------------------------------

struct Divergences {
    double kl_t_r = 0.0;  // KL(target || generated)
    double kl_r_t = 0.0;  // KL(generated || target)
    double js = 0.0;
};

// KL uses additive smoothing (delta = 1e-9) on the support union so disjoint
// supports stay finite; JS uses the unsmoothed mixture. All values in bits.
inline Divergences distribution_mismatch(const std::map<std::string, double>& target_counts,
                                         const std::map<std::string, double>& generated_counts) {
    double tot_t = 0.0, tot_g = 0.0;
    for (const auto& [k, v] : target_counts) {
        if (v < 0.0) fail(ErrorCode::Domain, "negative count in target distribution");
        tot_t += v;
    }
    for (const auto& [k, v] : generated_counts) {
        if (v < 0.0) fail(ErrorCode::Domain, "negative count in generated distribution");
        tot_g += v;
    }
    if (tot_t <= 0.0 || tot_g <= 0.0)
        fail(ErrorCode::Domain, "distribution_mismatch: zero-total distribution");

    std::set<std::string> support;
    for (const auto& [k, v] : target_counts) support.insert(k);
    for (const auto& [k, v] : generated_counts) support.insert(k);
    const double n = static_cast<double>(support.size());

    auto prob = [](const std::map<std::string, double>& m, const std::string& k, double tot) {
        auto it = m.find(k);
        return it == m.end() ? 0.0 : it->second / tot;
    };

    Divergences d;
    for (const auto& k : support) {
        double p = prob(target_counts, k, tot_t);
        double q = prob(generated_counts, k, tot_g);
        double ps = (p + kKlSmoothing) / (1.0 + n * kKlSmoothing);
        double qs = (q + kKlSmoothing) / (1.0 + n * kKlSmoothing);
        d.kl_t_r += ps * std::log2(ps / qs);
        d.kl_r_t += qs * std::log2(qs / ps);
        double m = 0.5 * (p + q);
        if (p > 0.0) d.js += 0.5 * p * std::log2(p / m);
        if (q > 0.0) d.js += 0.5 * q * std::log2(q / m);
    }
    return d;
}

// Count builders for the two mismatch levels.
inline std::map<std::string, double> title_counts_from_catalog(const Catalog& catalog) {
    std::map<std::string, double> counts;
    for (const auto& [item, ci] : catalog.items)
        if (ci.frequency > 0) counts[item] = static_cast<double>(ci.frequency);
    return counts;
}

inline std::map<std::string, double> title_counts_from_recs(
    const std::vector<std::vector<std::string>>& recs) {
    std::map<std::string, double> counts;
    for (const auto& list : recs)
        for (const auto& item : list) counts[item] += 1.0;
    return counts;
}

// Expands title counts into token counts using the catalog tokenization
// (END marker excluded).
inline std::map<std::string, double> token_counts_from_titles(
    const std::map<std::string, double>& title_counts, const Catalog& catalog) {
    std::map<std::string, double> counts;
    for (const auto& [item, c] : title_counts) {
        auto it = catalog.items.find(item);
        if (it == catalog.items.end()) fail(ErrorCode::Domain, "unknown item '" + item + "'");
        for (const auto& tok : it->second.tokens) counts[tok] += c;
    }
    return counts;
}

// ---------------------------------------------------------------------------
// combined report
// ---------------------------------------------------------------------------

struct MetricsReport {
    int k = 0;
    double hr = 0.0, ndcg = 0.0;
    double dgu = 0.0, mgu = 0.0;
    double entropy_h = 0.0, ttr = 0.0;
    Divergences title_mismatch, token_mismatch;
    GroupHistogram groups;
};

inline MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& recs,
                                     const std::vector<std::string>& targets, int k,
                                     const Catalog& catalog, const GroupAssignment& groups) {
    MetricsReport r;
    r.k = k;
    std::tie(r.hr, r.ndcg) = hr_ndcg(recs, targets);
    std::tie(r.dgu, r.mgu) = dgu_mgu(recs, groups);
    std::tie(r.entropy_h, r.ttr) = diversity(recs, catalog);
    auto target_titles = title_counts_from_catalog(catalog);
    auto rec_titles = title_counts_from_recs(recs);
    r.title_mismatch = distribution_mismatch(target_titles, rec_titles);
    r.token_mismatch = distribution_mismatch(token_counts_from_titles(target_titles, catalog),
                                             token_counts_from_titles(rec_titles, catalog));
    r.groups = group_histogram(recs, groups);
    return r;
}

}  // namespace flower
