#pragma once

// Co-occurrence preference scorer: a deterministic stand-in for a trained
// sequential recommender. Scores are normalized over the catalog, floored, and
// renormalized so DivPref rewards never divide by zero.

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flower/catalog.hpp"
#include "flower/common.hpp"
#include "flower/flow_tree.hpp"

namespace flower {

constexpr double kPrefFloor = 1e-6;

struct PrefModel {
    double alpha = 1.0;  // add-alpha smoothing
    std::unordered_map<std::string, std::unordered_map<std::string, double>> cooc;
    std::unordered_map<std::string, double> item_prior;  // train frequency
};

// Counts adjacent ordered pairs (a -> b) in each user's train sequence.
inline PrefModel fit_prefs(const Dataset& dataset, double alpha = 1.0) {
    if (dataset.train_user_items.empty()) fail(ErrorCode::Domain, "fit_prefs: train split is empty");
    if (!(alpha > 0.0)) fail(ErrorCode::Config, "smoothing alpha must be positive");
    PrefModel m;
    m.alpha = alpha;
    for (const auto& [user, seq] : dataset.train_user_items) {
        for (size_t i = 0; i < seq.size(); ++i) {
            m.item_prior[seq[i]] += 1.0;
            if (i + 1 < seq.size()) m.cooc[seq[i]][seq[i + 1]] += 1.0;
        }
    }
    return m;
}

// p_u over item_ids: raw = alpha + cooc(last -> i), backed off to
// alpha + prior(i) for an empty history; normalized, floored at kPrefFloor,
// renormalized.
inline std::vector<double> pref_scores(const PrefModel& model,
                                       std::span<const std::string> history,
                                       const std::vector<std::string>& item_ids) {
    std::vector<double> raw(item_ids.size(), model.alpha);
    if (history.empty()) {
        for (size_t i = 0; i < item_ids.size(); ++i) {
            auto it = model.item_prior.find(item_ids[i]);
            if (it != model.item_prior.end()) raw[i] += it->second;
        }
    } else {
        auto it = model.cooc.find(history.back());
        if (it != model.cooc.end()) {
            for (size_t i = 0; i < item_ids.size(); ++i) {
                auto jt = it->second.find(item_ids[i]);
                if (jt != it->second.end()) raw[i] += jt->second;
            }
        }
    }
    double total = 0.0;
    for (double v : raw) total += v;
    double floored_total = 0.0;
    for (auto& v : raw) {
        v = std::max(v / total, kPrefFloor);
        floored_total += v;
    }
    for (auto& v : raw) v /= floored_total;
    return raw;
}

inline double pref_score(const PrefModel& model, std::span<const std::string> history,
                         const std::string& item, const std::vector<std::string>& item_ids) {
    auto scores = pref_scores(model, history, item_ids);
    for (size_t i = 0; i < item_ids.size(); ++i)
        if (item_ids[i] == item) return scores[i];
    fail(ErrorCode::Domain, "pref_score: item '" + item + "' not in catalog");
}

// Seam for supplying p_ui to training: either the co-occurrence model or a
// verbatim score file.
class PrefProvider {
public:
    virtual ~PrefProvider() = default;
    // Scores aligned with tree item indices for one example.
    virtual std::vector<double> scores(const Example& ex, const FlowTree& tree) const = 0;
};

class ModelPrefProvider final : public PrefProvider {
public:
    explicit ModelPrefProvider(PrefModel model) : model_(std::move(model)) {}

    std::vector<double> scores(const Example& ex, const FlowTree& tree) const override {
        return pref_scores(model_, ex.history, tree.item_ids());
    }

private:
    PrefModel model_;
};

// Scores loaded from a JSONL override file, renormalized per user over the
// tree's items; items missing from a user's lines get the floor mass.
class OverridePrefProvider final : public PrefProvider {
public:
    using UserScores = std::unordered_map<std::string, std::unordered_map<std::string, double>>;

    explicit OverridePrefProvider(UserScores scores) : scores_(std::move(scores)) {}

    std::vector<double> scores(const Example& ex, const FlowTree& tree) const override {
        const auto& ids = tree.item_ids();
        std::vector<double> out(ids.size(), 0.0);
        auto it = scores_.find(ex.user_id);
        double total = 0.0;
        if (it != scores_.end()) {
            for (size_t i = 0; i < ids.size(); ++i) {
                auto jt = it->second.find(ids[i]);
                if (jt != it->second.end()) out[i] = std::max(jt->second, 0.0);
                total += out[i];
            }
        }
        if (total <= 0.0) {
            for (auto& v : out) v = 1.0 / static_cast<double>(ids.size());
            return out;
        }
        double floored_total = 0.0;
        for (auto& v : out) {
            v = std::max(v / total, kPrefFloor);
            floored_total += v;
        }
        for (auto& v : out) v /= floored_total;
        return out;
    }

private:
    UserScores scores_;
};

}  // namespace flower
