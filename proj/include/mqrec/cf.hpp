#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "mqrec/adamw.hpp"
#include "mqrec/common.hpp"
#include "mqrec/dataset.hpp"
#include "mqrec/graph.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {

enum class CfMethod { mf_bpr, lightgcn };

/// BPR objective for one triple: -ln sigmoid(positive score - negative score).
inline double bpr_loss(double score_gap) {
    const double sig = 1.0 / (1.0 + std::exp(-score_gap));
    return -std::log(std::max(sig, 1e-300));
}

struct CfTrainConfig {
    CfMethod method = CfMethod::lightgcn;
    std::size_t layers = 3;  // lightgcn only
    std::size_t dim = 64;
    std::size_t epochs = 200;
    std::size_t batch_size = 2048;
    double lr = 1e-3;
    double l2_reg = 1e-4;
    std::uint64_t seed = 1;
    // early stopping on validation HR@20; eval_every = 0 disables it
    std::size_t eval_every = 10;
    std::size_t patience = 3;
};

namespace detail {

inline void init_embeddings(EmbeddingTable& t, std::size_t n, std::size_t m, std::size_t d,
                            std::uint64_t seed) {
    t.user_vectors = Matrixd(n, d);
    t.item_vectors = Matrixd(m, d);
    auto rng = make_rng(seed, 0x63665f69);
    std::normal_distribution<double> dist(0.0, 0.1);
    for (double& x : t.user_vectors.flat()) x = dist(rng);
    for (double& x : t.item_vectors.flat()) x = dist(rng);
}

/// HR@K of the per-user target item under a dot-product scorer with the
/// user's train items excluded from candidates.
inline double cf_hit_rate_at_k(const EmbeddingTable& final_table, const DatasetSplit& split,
                               const std::vector<std::optional<std::uint32_t>>& targets,
                               std::size_t k) {
    const std::size_t d = final_table.dim();
    std::size_t users = 0, hits = 0;
    std::vector<double> scores(split.num_items);
    for (std::size_t u = 0; u < split.num_users; ++u) {
        if (!targets[u]) continue;
        const std::uint32_t target = *targets[u];
        const double* pu = final_table.user_vectors.data() + u * d;
        for (std::size_t i = 0; i < split.num_items; ++i)
            scores[i] = dot({pu, d}, final_table.item_vectors.row(i));
        for (std::uint32_t it : split.train[u]) scores[it] = -1e300;
        const double ts = scores[target];
        std::size_t better = 0;
        for (std::size_t i = 0; i < split.num_items; ++i) {
            if (scores[i] > ts || (scores[i] == ts && i < target)) ++better;
            if (better >= k) break;
        }
        ++users;
        if (better < k) ++hits;
    }
    return users == 0 ? 0.0 : double(hits) / double(users);
}

/// Shared BPR loop. `base` comes in initialized (fresh or warm) and is
/// trained in place; returns the propagated table.
inline EmbeddingTable train_cf_impl(const DatasetSplit& split, const CfTrainConfig& cfg,
                                    EmbeddingTable base, const char* who) {
    const std::size_t n = split.num_users, m = split.num_items, d = cfg.dim;
    const bool use_graph = cfg.method == CfMethod::lightgcn;
    BipartiteGraph graph = build_graph(split);

    std::vector<std::pair<std::uint32_t, std::uint32_t>> positives;
    positives.reserve(split.train_size());
    for (std::size_t u = 0; u < n; ++u)
        for (std::uint32_t it : split.train[u])
            positives.emplace_back(static_cast<std::uint32_t>(u), it);

    const auto interacted = full_histories(split);
    bool has_validation = false;
    for (const auto& v : split.validation)
        if (v) {
            has_validation = true;
            break;
        }

    AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    const auto slot_u = opt.register_param(base.user_vectors.size());
    const auto slot_i = opt.register_param(base.item_vectors.size());

    auto rng = make_rng(cfg.seed, 0x627072);
    std::uniform_int_distribution<std::uint32_t> item_dist(0, static_cast<std::uint32_t>(m - 1));

    auto propagate = [&](const EmbeddingTable& e) {
        return use_graph ? propagate_lightgcn(graph, e, cfg.layers) : e;
    };

    EmbeddingTable best_final;
    double best_hr = -1.0;
    std::size_t evals_since_best = 0;

    Matrixd grad_fu(n, d), grad_fi(m, d);
    std::vector<std::size_t> order(positives.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / double(end - start);
            EmbeddingTable final_table = propagate(base);
            grad_fu.fill(0.0);
            grad_fi.fill(0.0);
            double batch_loss = 0.0;
            for (std::size_t s = start; s < end; ++s) {
                const auto [u, pos] = positives[order[s]];
                std::uint32_t neg = item_dist(rng);
                while (interacted[u].count(neg) > 0) neg = item_dist(rng);
                const double* fu = final_table.user_vectors.data() + std::size_t(u) * d;
                const double* fp = final_table.item_vectors.data() + std::size_t(pos) * d;
                const double* fn = final_table.item_vectors.data() + std::size_t(neg) * d;
                const double gap = dot({fu, d}, {fp, d}) - dot({fu, d}, {fn, d});
                const double sig = 1.0 / (1.0 + std::exp(-gap));
                batch_loss += bpr_loss(gap);
                const double coef = (sig - 1.0) * inv_batch;
                double* gu = grad_fu.data() + std::size_t(u) * d;
                double* gp = grad_fi.data() + std::size_t(pos) * d;
                double* gn = grad_fi.data() + std::size_t(neg) * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gu[k] += coef * (fp[k] - fn[k]);
                    gp[k] += coef * fu[k];
                    gn[k] -= coef * fu[k];
                }
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError(std::string(who) + ": non-finite loss at epoch " +
                                    std::to_string(epoch));
            // adjacency is symmetric, so the backward map through the
            // propagation is the propagation itself applied to gradients
            EmbeddingTable grad0 = propagate({grad_fu, grad_fi});
            for (std::size_t s = start; s < end; ++s) {
                const auto [u, pos] = positives[order[s]];
                const double reg = 2.0 * cfg.l2_reg * inv_batch;
                double* gu = grad0.user_vectors.data() + std::size_t(u) * d;
                const double* eu = base.user_vectors.data() + std::size_t(u) * d;
                double* gp = grad0.item_vectors.data() + std::size_t(pos) * d;
                const double* ep = base.item_vectors.data() + std::size_t(pos) * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gu[k] += reg * eu[k];
                    gp[k] += reg * ep[k];
                }
            }
            opt.begin_step();
            opt.update(slot_u, base.user_vectors.flat(), grad0.user_vectors.flat());
            opt.update(slot_i, base.item_vectors.flat(), grad0.item_vectors.flat());
        }

        if (has_validation && cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            EmbeddingTable final_table = propagate(base);
            const double hr = cf_hit_rate_at_k(final_table, split, split.validation, 20);
            if (hr > best_hr) {
                best_hr = hr;
                best_final = final_table;
                evals_since_best = 0;
            } else if (++evals_since_best >= cfg.patience) {
                return best_final;
            }
        }
    }
    EmbeddingTable final_table = propagate(base);
    if (best_hr >= 0.0) {
        const double hr = cf_hit_rate_at_k(final_table, split, split.validation, 20);
        if (hr <= best_hr) return best_final;
    }
    return final_table;
}

}  // namespace detail

/// Learn the collaborative vectors with the BPR objective
/// -ln sigmoid(score(u,pos) - score(u,neg)) + L2, scores taken on the final
/// (propagated, for lightgcn) embeddings. Deterministic for a fixed seed.
inline EmbeddingTable train_cf(const DatasetSplit& split, const CfTrainConfig& cfg) {
    if (cfg.dim < 1) throw std::invalid_argument("train_cf: dim must be >= 1");
    EmbeddingTable base;
    detail::init_embeddings(base, split.num_users, split.num_items, cfg.dim, cfg.seed);
    return detail::train_cf_impl(split, cfg, std::move(base), "train_cf");
}

/// Refresh the vector database for an enlarged universe: warm-start existing
/// rows from the old table, initialize new rows fresh, retrain on the new
/// split for 20% of the configured epochs. Tokenizers and the query encoder
/// are not involved.
inline EmbeddingTable extend_for_new_entities(const EmbeddingTable& old,
                                              const DatasetSplit& new_split,
                                              const CfTrainConfig& cfg) {
    const std::size_t n_old = old.user_vectors.rows(), m_old = old.item_vectors.rows();
    if (new_split.num_users < n_old || new_split.num_items < m_old)
        throw std::invalid_argument("extend_for_new_entities: universe shrank");
    const std::size_t d = old.dim();

    CfTrainConfig warm = cfg;
    warm.dim = d;
    warm.epochs = std::max<std::size_t>(1, (cfg.epochs * 20) / 100);
    warm.seed = splitmix64(cfg.seed ^ 0x657874656e64ULL);
    warm.eval_every = 0;

    EmbeddingTable base;
    detail::init_embeddings(base, new_split.num_users, new_split.num_items, d, warm.seed);
    for (std::size_t u = 0; u < n_old; ++u)
        for (std::size_t k = 0; k < d; ++k) base.user_vectors(u, k) = old.user_vectors(u, k);
    for (std::size_t i = 0; i < m_old; ++i)
        for (std::size_t k = 0; k < d; ++k) base.item_vectors(i, k) = old.item_vectors(i, k);

    return detail::train_cf_impl(new_split, warm, std::move(base), "extend_for_new_entities");
}

}  // namespace mqrec
