#pragma once

#include <cstdint>
#include <unordered_set>
#include <vector>

#include "mqrec/adamw.hpp"
#include "mqrec/common.hpp"
#include "mqrec/dataset.hpp"
#include "mqrec/graph.hpp"
#include "mqrec/prompts.hpp"
#include "mqrec/query_encoder.hpp"
#include "mqrec/retrieval.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

/// Pairwise ranking loss on cosine scores: positives are pulled to 1,
/// negatives are pushed below the margin and then ignored.
inline double ranking_loss(double score, int label, double margin) {
    if (label == 1) return 1.0 - score;
    if (label == -1) return std::max(0.0, score - margin);
    throw std::invalid_argument("ranking_loss: label must be +1 or -1");
}

inline std::uint32_t sample_negative(std::uint32_t user,
                                     const std::unordered_set<std::uint32_t>& interacted,
                                     std::size_t num_items, std::mt19937_64& rng) {
    (void)user;
    if (interacted.size() >= num_items)
        throw TrainingError("sample_negative: user interacted with every item");
    std::uniform_int_distribution<std::uint32_t> dist(0,
                                                      static_cast<std::uint32_t>(num_items - 1));
    std::uint32_t item = dist(rng);
    while (interacted.count(item) > 0) item = dist(rng);
    return item;
}

/// Spec-shaped convenience overload: derives the user's full interacted set
/// from the split.
inline std::uint32_t sample_negative(std::uint32_t user, const DatasetSplit& split,
                                     std::mt19937_64& rng) {
    std::unordered_set<std::uint32_t> interacted(split.train[user].begin(),
                                                 split.train[user].end());
    if (split.validation[user]) interacted.insert(*split.validation[user]);
    if (split.test[user]) interacted.insert(*split.test[user]);
    return sample_negative(user, interacted, split.num_items, rng);
}

struct RankerTrainConfig {
    std::size_t d_e = 128;
    std::size_t proj_hidden = 256;
    PoolMode mode = PoolMode::mean_pool;
    double margin = 0.1;  // gamma
    double lr = 1e-3;
    double weight_decay = 0.01;  // projection/attention; embeddings stay undecayed
    std::size_t batch = 128;
    std::size_t epochs = 100;
    std::size_t max_history = 100;
    std::size_t max_prompt_len = 512;
    std::uint64_t seed = 1;
    // early stopping on validation HR@20; eval_every = 0 disables it
    std::size_t eval_every = 3;
    std::size_t patience = 3;
};

struct RankerTrainResult {
    QueryEncoderModel model;
    std::vector<double> epoch_losses;  // mean per-example loss
    std::size_t epochs_run = 0;
    double best_val_hr = -1.0;
};

namespace detail {

inline void cosine_grad_accumulate(std::span<const double> z, std::span<const double> q,
                                   double upstream, std::span<double> dz) {
    const double nz = norm2(z), nq = norm2(q);
    const double inv = 1.0 / (nz * nq);
    const double cos = dot(z, q) * inv;
    for (std::size_t j = 0; j < z.size(); ++j)
        dz[j] += upstream * (q[j] * inv - cos * z[j] / (nz * nz));
}

/// Validation HR@20 of the current encoder against the item pool.
inline double ranker_validation_hr(const QueryEncoderModel& model, const DatasetSplit& split,
                                   const std::vector<TokenTuple>& user_tuples,
                                   const std::vector<TokenTuple>& item_tuples,
                                   const TemplateCatalog& catalog, const Vocabulary& vocab,
                                   const RetrievalIndex& index, const RankerTrainConfig& cfg) {
    const auto seen = catalog.seen_ids();
    std::size_t users = 0, hits = 0;
    for (std::size_t u = 0; u < split.num_users; ++u) {
        if (!split.validation[u]) continue;
        auto rng = make_rng(cfg.seed ^ 0x76616cULL, u);
        std::uniform_int_distribution<std::size_t> pick(0, seen.size() - 1);
        const auto& tmpl = catalog.by_id(seen[pick(rng)]);
        std::vector<TokenTuple> hist;
        RenderedPrompt prompt;
        if (tmpl.requires_history) {
            if (split.train[u].empty()) continue;
            auto order = truncate_and_shuffle_history(split.train[u], cfg.max_history,
                                                      splitmix64(cfg.seed ^ u));
            for (auto it : order) hist.push_back(item_tuples[it]);
            prompt = render_prompt(tmpl, user_tuples[u], &hist, vocab, cfg.max_prompt_len);
        } else {
            prompt = render_prompt(tmpl, user_tuples[u], nullptr, vocab, cfg.max_prompt_len);
        }
        const auto h = encode_query(model, prompt);
        const auto z = project_query(model, h);
        std::unordered_set<std::uint32_t> exclude(split.train[u].begin(), split.train[u].end());
        const auto top = topk_retrieve(index, z, 20, &exclude);
        ++users;
        for (const auto& si : top)
            if (si.item == *split.validation[u]) {
                ++hits;
                break;
            }
    }
    return users == 0 ? 0.0 : double(hits) / double(users);
}

}  // namespace detail

/// Stage-2 training: tune the token embeddings, pooling parameters, and
/// projection with the pairwise ranking loss at a fixed 1:1 negative ratio.
/// The tokenizers and the collaborative table are read-only here.
inline RankerTrainResult train_ranker(const DatasetSplit& split,
                                      const MqTokenizerModel& user_tokenizer,
                                      const MqTokenizerModel& item_tokenizer,
                                      const EmbeddingTable& table,
                                      const TemplateCatalog& catalog, const Vocabulary& vocab,
                                      const RankerTrainConfig& cfg) {
    const std::size_t d = table.dim();
    const auto user_tuples = tokenize_batch(user_tokenizer, table.user_vectors);
    const auto item_tuples = tokenize_batch(item_tokenizer, table.item_vectors);

    RankerTrainResult result;
    result.model = make_query_encoder(vocab.size(), cfg.d_e, d, cfg.proj_hidden, cfg.mode,
                                      cfg.seed);
    QueryEncoderModel& model = result.model;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> examples;
    for (std::size_t u = 0; u < split.num_users; ++u)
        for (std::uint32_t it : split.train[u])
            examples.emplace_back(static_cast<std::uint32_t>(u), it);
    if (examples.empty()) throw std::invalid_argument("train_ranker: empty train split");

    const auto interacted = full_histories(split);
    const auto seen_templates = catalog.seen_ids();
    RetrievalIndex index = RetrievalIndex::from_table(table);
    bool has_validation = false;
    for (const auto& v : split.validation)
        if (v) {
            has_validation = true;
            break;
        }

    AdamW emb_opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    AdamW net_opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    const auto emb_slot = emb_opt.register_param(model.token_embeddings.size());
    const auto wq_slot = net_opt.register_param(model.wq.size());
    const auto wk_slot = net_opt.register_param(model.wk.size());
    const auto wv_slot = net_opt.register_param(model.wv.size());
    std::vector<std::size_t> proj_slots;
    model.projection.for_each_param(
        [&](std::span<double> p) { proj_slots.push_back(net_opt.register_param(p.size())); });

    auto rng = make_rng(cfg.seed, 0x726b72);
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    EncoderGrads enc_grads;
    enc_grads.init_like(model);

    QueryEncoderModel best_model = model;
    double best_hr = -1.0;
    std::size_t evals_since_best = 0;
    bool stopped = false;

    for (std::size_t epoch = 0; epoch < cfg.epochs && !stopped; ++epoch) {
        ++result.epochs_run;
        std::shuffle(order.begin(), order.end(), rng);
        std::uniform_int_distribution<std::size_t> pick_template(0, seen_templates.size() - 1);
        double epoch_loss = 0.0;
        std::size_t counted = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t B = std::min(cfg.batch, order.size() - start);
            std::vector<EncodeTrace> traces(B);
            Matrixd H(B, cfg.d_e);
            std::vector<std::uint32_t> pos_items(B), neg_items(B), users(B);

            for (std::size_t b = 0; b < B; ++b) {
                const auto [u, pos] = examples[order[start + b]];
                users[b] = u;
                pos_items[b] = pos;
                neg_items[b] = sample_negative(u, interacted[u], split.num_items, rng);

                const auto& tmpl = catalog.by_id(seen_templates[pick_template(rng)]);
                RenderedPrompt prompt;
                if (tmpl.requires_history) {
                    auto hist_order = truncate_and_shuffle_history(
                        split.train[u], cfg.max_history,
                        splitmix64(cfg.seed ^ (epoch * 0x9e37ULL + u)));
                    std::vector<TokenTuple> hist;
                    hist.reserve(hist_order.size());
                    for (auto it : hist_order) hist.push_back(item_tuples[it]);
                    prompt =
                        render_prompt(tmpl, user_tuples[u], &hist, vocab, cfg.max_prompt_len);
                } else {
                    prompt = render_prompt(tmpl, user_tuples[u], nullptr, vocab,
                                           cfg.max_prompt_len);
                }
                const auto h = encode_query(model, prompt, &traces[b]);
                std::copy(h.begin(), h.end(), H.row(b).begin());
            }

            auto proj_trace = model.projection.forward_trace(H);
            const Matrixd& Z = proj_trace.y;

            Matrixd dZ(B, d);
            const double inv_b = 1.0 / double(B);
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const auto z = Z.row(b);
                const auto qp = table.item_vectors.row(pos_items[b]);
                const auto qn = table.item_vectors.row(neg_items[b]);
                const double sp = cosine_score(z, qp);
                const double sn = cosine_score(z, qn);
                batch_loss += ranking_loss(sp, 1, cfg.margin);
                batch_loss += ranking_loss(sn, -1, cfg.margin);
                detail::cosine_grad_accumulate(z, qp, -1.0 * inv_b, dZ.row(b));
                if (sn > cfg.margin) detail::cosine_grad_accumulate(z, qn, inv_b, dZ.row(b));
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError("train_ranker: non-finite loss at epoch " +
                                    std::to_string(epoch));
            epoch_loss += batch_loss;
            counted += B;

            MlpGrads proj_grads = model.projection.zero_grads();
            auto dH = model.projection.backward(proj_trace, dZ, proj_grads, true);

            enc_grads.token_embeddings.fill(0.0);
            enc_grads.wq.fill(0.0);
            enc_grads.wk.fill(0.0);
            enc_grads.wv.fill(0.0);
            for (std::size_t b = 0; b < B; ++b)
                encode_query_backward(model, traces[b], dH->row(b), enc_grads);

            emb_opt.begin_step();
            emb_opt.update(emb_slot, model.token_embeddings.flat(),
                           enc_grads.token_embeddings.flat());
            net_opt.begin_step();
            if (model.mode == PoolMode::attention_pool) {
                net_opt.update(wq_slot, model.wq.flat(), enc_grads.wq.flat());
                net_opt.update(wk_slot, model.wk.flat(), enc_grads.wk.flat());
                net_opt.update(wv_slot, model.wv.flat(), enc_grads.wv.flat());
            }
            std::size_t slot = 0;
            model.projection.for_each_param_with_grad(
                proj_grads, [&](std::span<double> p, std::span<double> g) {
                    net_opt.update(proj_slots[slot++], p, g);
                });
        }
        result.epoch_losses.push_back(epoch_loss / double(counted));

        if (has_validation && cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            const double hr = detail::ranker_validation_hr(model, split, user_tuples,
                                                           item_tuples, catalog, vocab, index,
                                                           cfg);
            if (hr > best_hr) {
                best_hr = hr;
                best_model = model;
                evals_since_best = 0;
            } else if (++evals_since_best >= cfg.patience) {
                stopped = true;
            }
        }
    }

    if (best_hr >= 0.0) {
        const double hr = detail::ranker_validation_hr(model, split, user_tuples, item_tuples,
                                                       catalog, vocab, index, cfg);
        if (hr <= best_hr) {
            result.model = std::move(best_model);
            result.best_val_hr = best_hr;
            return result;
        }
        result.best_val_hr = hr;
        return result;
    }
    result.best_val_hr = best_hr;
    return result;
}

}  // namespace mqrec
