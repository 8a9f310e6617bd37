#pragma once

// Combined SFT + subtrajectory-balance training with exact analytic gradients.
//
// The SubTB objective is evaluated on-policy: each batch example contributes B
// titles sampled from the current constrained policy. Gradients treat that
// sample set as fixed (no gradient through the sampler). All randomness flows
// through one seeded generator, so training traces replay exactly.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "flower/catalog.hpp"
#include "flower/common.hpp"
#include "flower/decode.hpp"
#include "flower/flow_tree.hpp"
#include "flower/policy.hpp"
#include "flower/prefs.hpp"

namespace flower {

constexpr int kGranularityWhole = 0;

struct TrainConfig {
    double lambda = 0.005;
    RewardVariant variant = RewardVariant::Plain;
    int granularity = 1;  // boundary spacing in tokens; kGranularityWhole = whole title
    double learning_rate = 0.1;
    int batch_size = 32;
    int max_epochs = 20;
    int patience = 3;
    int onpolicy_samples = 4;  // B titles per batch example
    uint64_t seed = 0;
    int max_steps = 0;  // > 0: fixed optimizer-step budget, no early stopping
    bool sft_only = false;    // never evaluates the SubTB branch
    bool subtb_only = false;  // debug flag: drops the SFT term entirely
    bool history_free = false;
    PolicyMode mode = PolicyMode::Tabular;
    int embed_dim = 8;
    double momentum = 0.0;
    bool normalize_subtb = false;  // mean over sampled titles and their pairs instead of raw sum
    double train_temperature = 1.0;
};

inline void validate_config(const TrainConfig& cfg) {
    if (cfg.lambda < 0.0) fail(ErrorCode::Config, "lambda must be >= 0");
    if (cfg.granularity < 0) fail(ErrorCode::Config, "granularity must be >= 1 or whole");
    if (!(cfg.learning_rate > 0.0)) fail(ErrorCode::Config, "learning_rate must be positive");
    if (cfg.batch_size < 1) fail(ErrorCode::Config, "batch_size must be >= 1");
    if (cfg.max_steps == 0 && cfg.max_epochs < 1) fail(ErrorCode::Config, "max_epochs must be >= 1");
    if (cfg.patience < 0 || (cfg.max_epochs > 0 && cfg.patience > cfg.max_epochs))
        fail(ErrorCode::Config, "patience must be in [0, max_epochs]");
    if (cfg.onpolicy_samples < 1) fail(ErrorCode::Config, "onpolicy_samples must be >= 1");
    if (cfg.sft_only && cfg.subtb_only)
        fail(ErrorCode::Config, "sft_only and subtb_only are mutually exclusive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        fail(ErrorCode::Config, "momentum must be in [0, 1)");
    if (!(cfg.train_temperature > 0.0)) fail(ErrorCode::Config, "temperature must be positive");
}

// ---------------------------------------------------------------------------
// subtrajectory enumeration
// ---------------------------------------------------------------------------

struct SubtrajectorySet {
    std::vector<int> boundaries;            // 0 = b_0 < ... < b_M = n_edges
    std::vector<std::pair<int, int>> pairs;  // all (b_a, b_b) with a < b
};

// Boundaries at multiples of the granularity plus the trajectory end;
// kGranularityWhole keeps only the full-path pair.
inline SubtrajectorySet enumerate_subtrajectories(int n_edges, int granularity) {
    if (n_edges < 1) fail(ErrorCode::Config, "enumerate_subtrajectories: empty trajectory");
    SubtrajectorySet s;
    if (granularity == kGranularityWhole) {
        s.boundaries = {0, n_edges};
    } else {
        for (int b = 0; b < n_edges; b += granularity) s.boundaries.push_back(b);
        s.boundaries.push_back(n_edges);
    }
    for (size_t a = 0; a < s.boundaries.size(); ++a)
        for (size_t b = a + 1; b < s.boundaries.size(); ++b)
            s.pairs.emplace_back(s.boundaries[a], s.boundaries[b]);
    return s;
}

// ---------------------------------------------------------------------------
// losses and gradients
// ---------------------------------------------------------------------------

struct Gradients {
    std::vector<double> bias, weight, embed;

    explicit Gradients(const PolicyParams& p)
        : bias(p.bias.size(), 0.0), weight(p.weight.size(), 0.0), embed(p.embed.size(), 0.0) {}
};

struct BatchItem {
    const Example* ex = nullptr;
    int32_t target = kNoItem;  // tree item index; may be kNoItem when SFT is off
};

struct OnPolicySample {
    size_t batch_index = 0;
    int32_t item = kNoItem;
};

struct LossBreakdown {
    double sft = 0.0;
    double subtb = 0.0;  // pre-lambda (normalized if configured)
    double total = 0.0;
};

namespace detail {

struct ResolvedExample {
    Context ctx;
    int32_t target = kNoItem;
    const Example* src = nullptr;  // null = fixed context, no embedding gradient
};

inline std::vector<ResolvedExample> resolve_batch(std::span<const BatchItem> batch,
                                                  const PolicyParams& params, const FlowTree& tree,
                                                  const TrainConfig& cfg) {
    std::vector<ResolvedExample> out;
    out.reserve(batch.size());
    for (const auto& b : batch) {
        ResolvedExample r;
        r.target = b.target;
        r.src = b.ex;
        if (params.mode == PolicyMode::Contextual) {
            if (cfg.history_free || !b.ex) {
                r.ctx.assign(params.dim, 0.0);
            } else {
                r.ctx = encode_context(b.ex->history, tree, params);
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Accumulates d(loss)/d(logits) for one path step into bias/weight gradients
// and the shared per-example context gradient.
inline void accumulate_step(const FlowNode& node, size_t chosen, const std::vector<double>& dist,
                            double coeff, bool subtract_prob, const Context& ctx,
                            const PolicyParams& params, Gradients& grad,
                            std::vector<double>& ctx_grad) {
    for (size_t i = 0; i < node.children.size(); ++i) {
        double indicator = i == chosen ? 1.0 : 0.0;
        double g = subtract_prob ? coeff * (indicator - dist[i]) : coeff * (dist[i] - indicator);
        if (g == 0.0) continue;
        int32_t e = node.children[i]->edge;
        grad.bias[e] += g;
        if (params.mode == PolicyMode::Contextual && !ctx.empty()) {
            double* wrow = grad.weight.data() + static_cast<size_t>(e) * params.dim;
            const double* w = params.weight_row(e);
            for (int k = 0; k < params.dim; ++k) {
                wrow[k] += g * ctx[k];
                ctx_grad[k] += g * w[k];
            }
        }
    }
}

// Distributes a context gradient onto the embedding rows of the history items
// that produced the context (mean pooling).
inline void distribute_ctx_grad(const ResolvedExample& r, const std::vector<double>& ctx_grad,
                                const PolicyParams& params, const FlowTree& tree, Gradients& grad) {
    if (params.mode != PolicyMode::Contextual || !r.src) return;
    std::vector<int32_t> kept;
    for (const auto& item : r.src->history) {
        int32_t idx = tree.find_item(item);
        if (idx != kNoItem) kept.push_back(idx);
    }
    if (kept.empty()) return;
    double inv = 1.0 / static_cast<double>(kept.size());
    for (int32_t idx : kept) {
        double* row = grad.embed.data() + static_cast<size_t>(idx) * params.dim;
        for (int k = 0; k < params.dim; ++k) row[k] += inv * ctx_grad[k];
    }
}

// Per-title SubTB sum over subtrajectory pairs; optionally accumulates the
// gradient scaled by grad_scale.
inline double subtb_title(int32_t item, const Context& ctx, const PolicyParams& params,
                          const FlowTree& tree, RewardVariant variant, int granularity,
                          double p_ui, Gradients* grad, double grad_scale,
                          std::vector<double>* ctx_grad) {
    auto path = tree.item_path(item);
    const int n = static_cast<int>(path.size()) - 1;  // edges incl. END

    std::vector<std::vector<double>> dists(n);
    std::vector<size_t> chosen(n);
    std::vector<double> residual(n);  // log pi_t - reward term_t
    for (int t = 0; t < n; ++t) {
        const FlowNode* node = path[t];
        const FlowNode* next = path[t + 1];
        if (!(node->flow > 0.0) || !(next->flow > 0.0))
            fail(ErrorCode::Domain, "subtb_loss: zero flow on item path");
        dists[t] = next_token_dist(*node, ctx, params);
        for (size_t c = 0; c < node->children.size(); ++c)
            if (node->children[c].get() == next) { chosen[t] = c; break; }
        double log_pi = std::log(dists[t][chosen[t]]);
        double log_rp = std::log(next->flow / node->flow);
        residual[t] = log_pi - personalized_log_reward(variant, log_rp, p_ui);
    }

    auto sub = enumerate_subtrajectories(n, granularity);
    double loss = 0.0;
    std::vector<double> w(n, 0.0);  // d(loss)/d(log pi_t)
    for (const auto& [a, b] : sub.pairs) {
        double s = 0.0;
        for (int t = a; t < b; ++t) s += residual[t];
        loss += s * s;
        if (grad)
            for (int t = a; t < b; ++t) w[t] += 2.0 * s;
    }
    if (grad) {
        for (int t = 0; t < n; ++t) {
            if (w[t] == 0.0) continue;
            accumulate_step(*path[t], chosen[t], dists[t], grad_scale * w[t],
                            /*subtract_prob=*/true, ctx, params, *grad, *ctx_grad);
        }
    }
    return loss;
}

// Per-example SFT term (1/T_y) * -log P(target); optionally accumulates the
// gradient scaled by grad_scale.
inline double sft_example(int32_t target, const Context& ctx, const PolicyParams& params,
                          const FlowTree& tree, Gradients* grad, double grad_scale,
                          std::vector<double>* ctx_grad) {
    if (target == kNoItem) fail(ErrorCode::Domain, "sft_loss: target not in flow tree");
    auto path = tree.item_path(target);
    const int n = static_cast<int>(path.size()) - 1;
    const double inv_len = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (int t = 0; t < n; ++t) {
        const FlowNode* node = path[t];
        const FlowNode* next = path[t + 1];
        auto dist = next_token_dist(*node, ctx, params);
        size_t c = 0;
        for (size_t i = 0; i < node->children.size(); ++i)
            if (node->children[i].get() == next) { c = i; break; }
        loss -= inv_len * std::log(dist[c]);
        if (grad) {
            accumulate_step(*node, c, dist, grad_scale * inv_len, /*subtract_prob=*/false, ctx,
                            params, *grad, *ctx_grad);
        }
    }
    return loss;
}

inline size_t pair_count(const FlowTree& tree, int32_t item, int granularity) {
    int n = static_cast<int>(tree.item_path(item).size()) - 1;
    return enumerate_subtrajectories(n, granularity).pairs.size();
}

}  // namespace detail

// SFT cross-entropy with teacher forcing: mean over the batch of
// (1/T_y) * -log P(target), T_y counting the END edge.
inline double sft_loss(const std::vector<std::pair<Context, int32_t>>& batch,
                       const PolicyParams& params, const FlowTree& tree) {
    if (batch.empty()) fail(ErrorCode::Config, "sft_loss: empty batch");
    double sum = 0.0;
    for (const auto& [ctx, target] : batch)
        sum += detail::sft_example(target, ctx, params, tree, nullptr, 0.0, nullptr);
    return sum / static_cast<double>(batch.size());
}

// Sum over subtrajectory pairs of (sum log pi - sum reward term)^2 along the
// item's path, with the backward policy identically 1.
inline double subtb_loss(int32_t item, const Context& ctx, const PolicyParams& params,
                         const FlowTree& tree, RewardVariant variant, int granularity,
                         double p_ui = 1.0) {
    return detail::subtb_title(item, ctx, params, tree, variant, granularity, p_ui, nullptr, 0.0,
                               nullptr);
}

inline double subtb_loss(const std::string& item_id, const Context& ctx,
                         const PolicyParams& params, const FlowTree& tree, RewardVariant variant,
                         int granularity, double p_ui = 1.0) {
    int32_t idx = tree.find_item(item_id);
    if (idx == kNoItem) fail(ErrorCode::Domain, "unknown item '" + item_id + "'");
    return subtb_loss(idx, ctx, params, tree, variant, granularity, p_ui);
}

// General balance term for a single subtrajectory of an item's path, from
// boundary position m to n (edges [m, n)). An adjacent pair reduces to
// (log pi - reward term)^2.
inline double subtb_pair_term(int32_t item, const Context& ctx, const PolicyParams& params,
                              const FlowTree& tree, RewardVariant variant, double p_ui, int m,
                              int n) {
    auto path = tree.item_path(item);
    const int edges = static_cast<int>(path.size()) - 1;
    if (m < 0 || n > edges || m >= n) fail(ErrorCode::Config, "invalid subtrajectory bounds");
    double s = 0.0;
    for (int t = m; t < n; ++t) {
        const FlowNode* node = path[t];
        const FlowNode* next = path[t + 1];
        auto dist = next_token_dist(*node, ctx, params);
        size_t c = 0;
        for (size_t i = 0; i < node->children.size(); ++i)
            if (node->children[i].get() == next) { c = i; break; }
        double log_rp = std::log(next->flow / node->flow);
        s += std::log(dist[c]) - personalized_log_reward(variant, log_rp, p_ui);
    }
    return s * s;
}

// Draws B titles per batch example from the current policy under that
// example's context.
inline std::vector<OnPolicySample> sample_onpolicy(std::span<const BatchItem> batch,
                                                   const PolicyParams& params,
                                                   const FlowTree& tree, const TrainConfig& cfg,
                                                   Rng& rng) {
    auto resolved = detail::resolve_batch(batch, params, tree, cfg);
    std::vector<OnPolicySample> samples;
    samples.reserve(resolved.size() * static_cast<size_t>(cfg.onpolicy_samples));
    for (size_t i = 0; i < resolved.size(); ++i) {
        for (int s = 0; s < cfg.onpolicy_samples; ++s) {
            samples.push_back(
                {i, sample_title_index(tree, resolved[i].ctx, params, cfg.train_temperature, rng)});
        }
    }
    return samples;
}

// Combined loss on a fixed on-policy sample set (the stop-gradient view used
// for both optimization and finite-difference checks). pui, when required by
// the reward variant, is indexed [batch_index][tree item].
inline LossBreakdown flower_loss_with_samples(std::span<const BatchItem> batch,
                                              std::span<const OnPolicySample> samples,
                                              const PolicyParams& params, const FlowTree& tree,
                                              const TrainConfig& cfg,
                                              const std::vector<std::vector<double>>* pui = nullptr,
                                              Gradients* grad = nullptr) {
    if (batch.empty()) fail(ErrorCode::Config, "flower_loss: empty batch");
    auto resolved = detail::resolve_batch(batch, params, tree, cfg);

    LossBreakdown lb;
    std::vector<std::vector<double>> ctx_grads(resolved.size());
    if (grad)
        for (auto& cg : ctx_grads) cg.assign(std::max(params.dim, 1), 0.0);

    if (!cfg.subtb_only) {
        const double inv_batch = 1.0 / static_cast<double>(resolved.size());
        double sum = 0.0;
        for (size_t i = 0; i < resolved.size(); ++i) {
            sum += detail::sft_example(resolved[i].target, resolved[i].ctx, params, tree, grad,
                                       inv_batch, grad ? &ctx_grads[i] : nullptr);
        }
        lb.sft = sum * inv_batch;
    }

    if (!cfg.sft_only && cfg.lambda > 0.0 && !samples.empty()) {
        const double sample_norm =
            cfg.normalize_subtb ? 1.0 / static_cast<double>(samples.size()) : 1.0;
        double sum = 0.0;
        for (const auto& s : samples) {
            const auto& r = resolved[s.batch_index];
            double p_ui = 1.0;
            if (cfg.variant != RewardVariant::Plain) {
                if (!pui) fail(ErrorCode::Config, "preference scores required for this variant");
                p_ui = (*pui)[s.batch_index][s.item];
            }
            double title_norm =
                cfg.normalize_subtb
                    ? 1.0 / static_cast<double>(detail::pair_count(tree, s.item, cfg.granularity))
                    : 1.0;
            double scale = cfg.lambda * sample_norm * title_norm;
            sum += title_norm *
                   detail::subtb_title(s.item, r.ctx, params, tree, cfg.variant, cfg.granularity,
                                       p_ui, grad, scale, grad ? &ctx_grads[s.batch_index] : nullptr);
        }
        lb.subtb = sum * sample_norm;
    }

    if (grad) {
        for (size_t i = 0; i < resolved.size(); ++i)
            detail::distribute_ctx_grad(resolved[i], ctx_grads[i], params, tree, *grad);
    }

    lb.total = lb.sft + cfg.lambda * lb.subtb;
    return lb;
}

// Convenience entry that draws the on-policy samples itself. lambda == 0 (or
// sft_only) short-circuits sampling entirely.
inline LossBreakdown flower_loss(std::span<const BatchItem> batch, const PolicyParams& params,
                                 const FlowTree& tree, const TrainConfig& cfg, Rng& rng,
                                 const std::vector<std::vector<double>>* pui = nullptr) {
    std::vector<OnPolicySample> samples;
    if (!cfg.sft_only && cfg.lambda > 0.0)
        samples = sample_onpolicy(batch, params, tree, cfg, rng);
    return flower_loss_with_samples(batch, samples, params, tree, cfg, pui);
}

// Exact analytic gradient of flower_loss_with_samples at fixed samples.
inline Gradients gradients(std::span<const BatchItem> batch,
                           std::span<const OnPolicySample> samples, const PolicyParams& params,
                           const FlowTree& tree, const TrainConfig& cfg,
                           const std::vector<std::vector<double>>* pui = nullptr) {
    Gradients g(params);
    flower_loss_with_samples(batch, samples, params, tree, cfg, pui, &g);
    return g;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLogRow {
    int epoch = 0;
    long step = 0;  // cumulative optimizer steps
    double sft = 0.0, subtb = 0.0, total = 0.0;
    double valid_ndcg5 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    PolicyParams params;
    std::vector<EpochLogRow> log;
    int best_epoch = -1;
    double best_valid_ndcg5 = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline double validation_ndcg5(const Dataset& ds, const FlowTree& tree,
                               const PolicyParams& params, bool history_free) {
    if (ds.valid.empty()) return std::numeric_limits<double>::quiet_NaN();
    double gain = 0.0;
    for (const auto& ex : ds.valid) {
        Context ctx;
        if (params.mode == PolicyMode::Contextual) {
            ctx = history_free ? Context(params.dim, 0.0)
                               : encode_context(ex.history, tree, params);
        }
        auto top = generate_topk(tree, ctx, params, 5, 1.0);
        for (size_t r = 0; r < top.entries.size(); ++r) {
            if (tree.item_id(top.entries[r].item) == ex.target) {
                gain += 1.0 / std::log2(2.0 + static_cast<double>(r));
                break;
            }
        }
    }
    return gain / static_cast<double>(ds.valid.size());
}

inline void sgd_update(PolicyParams& params, const Gradients& grad, Gradients& velocity,
                       const TrainConfig& cfg) {
    auto apply = [&](std::vector<double>& theta, const std::vector<double>& g,
                     std::vector<double>& v) {
        if (cfg.momentum > 0.0) {
            for (size_t i = 0; i < theta.size(); ++i) {
                v[i] = cfg.momentum * v[i] + g[i];
                theta[i] -= cfg.learning_rate * v[i];
            }
        } else {
            for (size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.learning_rate * g[i];
        }
    };
    apply(params.bias, grad.bias, velocity.bias);
    apply(params.weight, grad.weight, velocity.weight);
    apply(params.embed, grad.embed, velocity.embed);
}

}  // namespace detail

// Mini-batch SGD over the train split. Epoch mode stops early when validation
// NDCG@5 fails to improve for `patience` consecutive epochs and returns the
// best-on-validation parameters; step-budget mode runs exactly max_steps and
// returns the final parameters. Fully deterministic given cfg.seed.
inline TrainResult train(const Dataset& ds, const FlowTree& tree, const TrainConfig& cfg,
                         const PrefProvider* prefs = nullptr,
                         const std::function<void(int, const PolicyParams&)>& epoch_hook = {}) {
    validate_config(cfg);
    const bool need_prefs = cfg.variant != RewardVariant::Plain && !cfg.sft_only && cfg.lambda > 0.0;
    if (need_prefs && !prefs)
        fail(ErrorCode::Config, "reward variant requires a preference provider");

    std::vector<BatchItem> pool;
    for (const auto& ex : ds.train) {
        BatchItem b;
        b.ex = &ex;
        b.target = tree.find_item(ex.target);
        if (b.target == kNoItem && !cfg.subtb_only) continue;  // zero-reward target
        pool.push_back(b);
    }
    if (pool.empty()) fail(ErrorCode::Domain, "no trainable examples");

    PolicyParams params = init_params(tree, cfg.mode, cfg.embed_dim, cfg.seed);
    Gradients velocity(params);
    Rng rng(cfg.seed);

    // Preference vectors depend only on the example, so cache per pool index.
    std::vector<std::vector<double>> pref_cache(need_prefs ? pool.size() : 0);

    TrainResult result;
    PolicyParams best_params = params;
    double best_ndcg = -1.0;
    int best_epoch = -1;
    int bad_epochs = 0;
    long global_step = 0;
    const bool step_mode = cfg.max_steps > 0;
    const long step_budget = step_mode ? cfg.max_steps : std::numeric_limits<long>::max();

    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool done = false;
    for (int epoch = 1; !done && (step_mode || epoch <= cfg.max_epochs); ++epoch) {
        rng.shuffle(order);
        double ep_sft = 0.0, ep_subtb = 0.0, ep_total = 0.0;
        long ep_steps = 0;

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<BatchItem> batch;
            batch.reserve(end - start);
            std::vector<std::vector<double>> pui;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(pool[order[i]]);
                if (need_prefs) {
                    auto& cached = pref_cache[order[i]];
                    if (cached.empty()) cached = prefs->scores(*pool[order[i]].ex, tree);
                    pui.push_back(cached);
                }
            }

            std::vector<OnPolicySample> samples;
            if (!cfg.sft_only && cfg.lambda > 0.0)
                samples = sample_onpolicy(batch, params, tree, cfg, rng);

            Gradients grad(params);
            LossBreakdown lb = flower_loss_with_samples(batch, samples, params, tree, cfg,
                                                        need_prefs ? &pui : nullptr, &grad);
            if (!std::isfinite(lb.total))
                fail(ErrorCode::Domain, "training diverged: non-finite loss at step " +
                                            std::to_string(global_step + 1));
            detail::sgd_update(params, grad, velocity, cfg);

            ep_sft += lb.sft;
            ep_subtb += lb.subtb;
            ep_total += lb.total;
            ++ep_steps;
            ++global_step;
            if (global_step >= step_budget) { done = true; break; }
        }

        EpochLogRow row;
        row.epoch = epoch;
        row.step = global_step;
        row.sft = ep_sft / static_cast<double>(ep_steps);
        row.subtb = ep_subtb / static_cast<double>(ep_steps);
        row.total = ep_total / static_cast<double>(ep_steps);
        row.valid_ndcg5 = detail::validation_ndcg5(ds, tree, params, cfg.history_free);
        result.log.push_back(row);
        if (epoch_hook) epoch_hook(epoch, params);

        if (!step_mode && !ds.valid.empty() && cfg.patience > 0) {
            if (row.valid_ndcg5 > best_ndcg) {
                best_ndcg = row.valid_ndcg5;
                best_params = params;
                best_epoch = epoch;
                bad_epochs = 0;
            } else if (++bad_epochs >= cfg.patience) {
                done = true;
            }
        }
    }

    if (!step_mode && best_epoch >= 0) {
        result.params = std::move(best_params);
        result.best_epoch = best_epoch;
        result.best_valid_ndcg5 = best_ndcg;
    } else {
        result.params = std::move(params);
        result.best_epoch = result.log.empty() ? -1 : result.log.back().epoch;
        result.best_valid_ndcg5 = result.log.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : result.log.back().valid_ndcg5;
    }
    return result;
}

}  // namespace flower
