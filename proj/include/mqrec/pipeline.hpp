#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "mqrec/artifact.hpp"
#include "mqrec/cf.hpp"
#include "mqrec/config.hpp"
#include "mqrec/dataset.hpp"
#include "mqrec/metrics.hpp"
#include "mqrec/prompts.hpp"
#include "mqrec/query_encoder.hpp"
#include "mqrec/ranker.hpp"
#include "mqrec/retrieval.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

inline std::uint64_t dataset_hash(const InteractionDataset& ds) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        h = fnv1a64_bytes(&u, sizeof(u), h);
        for (std::uint32_t it : ds.history[u]) h = fnv1a64_bytes(&it, sizeof(it), h);
    }
    return h;
}

/// Everything the serving path needs: the vector database, the two frozen
/// tokenizers, the vocabulary/templates, the query encoder, and the exact
/// retrieval pool.
struct TrainedPipeline {
    Config cfg;
    DatasetSplit split;
    std::vector<std::string> user_raw_ids, item_raw_ids;
    EmbeddingTable table;
    MqTokenizerModel user_tokenizer, item_tokenizer;
    TemplateCatalog catalog;
    Vocabulary vocab;
    QueryEncoderModel query;
    RetrievalIndex index;
    std::vector<TokenTuple> user_tuples, item_tuples;

    std::uint32_t template_for(std::uint32_t user, Protocol protocol,
                               std::uint64_t seed) const {
        switch (protocol) {
            case Protocol::unseen_prompt:
                return catalog.unseen_id();
            case Protocol::user_id_only:
                return catalog.user_id_only_id();
            case Protocol::standard:
            case Protocol::unseen_user: {
                const auto seen = catalog.seen_ids();
                auto rng = make_rng(seed ^ 0x746d706cULL, user);
                std::uniform_int_distribution<std::size_t> pick(0, seen.size() - 1);
                std::uint32_t tid = seen[pick(rng)];
                if (catalog.by_id(tid).requires_history && split.train[user].empty())
                    tid = catalog.user_id_only_id();
                return tid;
            }
        }
        throw std::invalid_argument("template_for: unknown protocol");
    }

    RenderedPrompt render_for(std::uint32_t user, std::uint32_t template_id,
                              std::uint64_t seed) const {
        const auto& tmpl = catalog.by_id(template_id);
        if (!tmpl.requires_history)
            return render_prompt(tmpl, user_tuples[user], nullptr, vocab,
                                 cfg.vocab_max_prompt_len);
        auto order = truncate_and_shuffle_history(split.train[user], cfg.data_max_history,
                                                  splitmix64(seed ^ user));
        std::vector<TokenTuple> hist;
        hist.reserve(order.size());
        for (auto it : order) hist.push_back(item_tuples[it]);
        return render_prompt(tmpl, user_tuples[user], &hist, vocab, cfg.vocab_max_prompt_len);
    }

    /// Prompt -> hidden state -> projected preference vector.
    std::vector<double> query_vector(std::uint32_t user, Protocol protocol,
                                     std::uint64_t seed) const {
        const auto prompt = render_for(user, template_for(user, protocol, seed), seed);
        return project_query(query, encode_query(query, prompt));
    }

    std::vector<ScoredItem> retrieve(std::span<const double> z, std::size_t n,
                                     std::uint32_t user) const {
        if (!cfg.eval_exclude_train || split.train[user].empty())
            return topk_retrieve(index, z, n);
        std::unordered_set<std::uint32_t> exclude(split.train[user].begin(),
                                                  split.train[user].end());
        return topk_retrieve(index, z, n, &exclude);
    }

    std::vector<std::uint32_t> rank_for_user(std::uint32_t user, Protocol protocol,
                                             std::size_t n, std::uint64_t seed) const {
        const auto z = query_vector(user, protocol, seed);
        const auto scored = retrieve(z, n, user);
        std::vector<std::uint32_t> out;
        out.reserve(scored.size());
        for (const auto& s : scored) out.push_back(s.item);
        return out;
    }

    /// Output lines `raw_user_id<TAB>rank<TAB>raw_item_id<TAB>score`.
    std::vector<std::string> recommend_lines(const std::vector<std::uint32_t>& users,
                                             std::size_t topn, std::uint64_t seed) const {
        std::vector<std::string> lines;
        for (std::uint32_t u : users) {
            const auto z = query_vector(u, Protocol::standard, seed);
            const auto scored = retrieve(z, topn, u);
            for (std::size_t r = 0; r < scored.size(); ++r) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "\t%zu\t", r + 1);
                char score[32];
                std::snprintf(score, sizeof(score), "%.6f", double(scored[r].score));
                lines.push_back(user_raw_ids[u] + buf + item_raw_ids[scored[r].item] + "\t" +
                                score);
            }
        }
        return lines;
    }
};

/// Stage 1 + stage 2 in sequence: collaborative embeddings, the two
/// tokenizers over them, then the query encoder against the frozen
/// tokenizers. Models are snapped to f32 before serving so artifacts are
/// faithful to in-memory behavior.
inline TrainedPipeline train_full_pipeline(const InteractionDataset& ds, const Config& cfg,
                                           bool holdout_unseen = false) {
    TrainedPipeline p;
    p.cfg = cfg;
    p.user_raw_ids = ds.user_raw_ids;
    p.item_raw_ids = ds.item_raw_ids;
    p.split = holdout_unseen
                  ? hold_out_unseen_users(ds, cfg.data_unseen_fraction, cfg.data_use_validation)
                  : leave_one_out_split(ds, cfg.data_use_validation);

    p.table = train_cf(p.split, cfg.cf_config());
    auto snap = [](Matrixd& m) {
        for (double& x : m.flat()) x = double(float(x));
    };
    snap(p.table.user_vectors);
    snap(p.table.item_vectors);

    p.user_tokenizer =
        train_tokenizer(p.table.user_vectors, Side::user, cfg.tokenizer_config(Side::user))
            .model;
    p.item_tokenizer =
        train_tokenizer(p.table.item_vectors, Side::item, cfg.tokenizer_config(Side::item))
            .model;
    p.user_tokenizer.round_to_f32();
    p.item_tokenizer.round_to_f32();

    p.catalog = default_templates();
    p.vocab = build_vocabulary(std::uint32_t(cfg.tokenizer_k), std::uint32_t(cfg.tokenizer_l),
                               catalog_lexicon(p.catalog),
                               std::uint32_t(cfg.vocab_hash_buckets));

    p.query = train_ranker(p.split, p.user_tokenizer, p.item_tokenizer, p.table, p.catalog,
                           p.vocab, cfg.ranker_config())
                  .model;
    p.query.round_to_f32();

    p.user_tuples = tokenize_batch(p.user_tokenizer, p.table.user_vectors);
    p.item_tuples = tokenize_batch(p.item_tokenizer, p.table.item_vectors);
    p.index = RetrievalIndex::from_table(p.table);
    return p;
}

/// The cold-start path: refresh the vector database on the full interaction
/// universe and rebuild the item pool. Tokenizers and the query encoder are
/// reused untouched; entities are re-tokenized through the frozen models.
inline void refresh_for_unseen(TrainedPipeline& p, const InteractionDataset& ds) {
    DatasetSplit full = leave_one_out_split(ds, p.cfg.data_use_validation);
    EmbeddingTable refreshed = extend_for_new_entities(p.table, full, p.cfg.cf_config());
    auto snap = [](Matrixd& m) {
        for (double& x : m.flat()) x = double(float(x));
    };
    snap(refreshed.user_vectors);
    snap(refreshed.item_vectors);

    const auto unseen = p.split.unseen_users;  // keep the protocol bookkeeping
    p.table = std::move(refreshed);
    p.split = std::move(full);
    p.split.unseen_users = unseen;
    p.user_tuples = tokenize_batch(p.user_tokenizer, p.table.user_vectors);
    p.item_tuples = tokenize_batch(p.item_tokenizer, p.table.item_vectors);
    p.index = RetrievalIndex::from_table(p.table);
}

namespace detail {

inline Matrixf vec_to_row(const std::vector<double>& v) {
    Matrixf m(1, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = float(v[i]);
    return m;
}

inline void mlp_to_bundle(ArtifactBundle& b, const std::string& prefix, const Mlp& m) {
    for (int l = 0; l < 3; ++l) {
        b.add_matrix(prefix + ".w" + std::to_string(l), m.weight(l).cast<float>());
        b.add_matrix(prefix + ".b" + std::to_string(l), vec_to_row(m.bias(l)));
    }
}

inline Mlp mlp_from_bundle(const ArtifactBundle& b, const std::string& prefix) {
    const auto& w0 = b.matrix(prefix + ".w0");
    const auto& w1 = b.matrix(prefix + ".w1");
    const auto& w2 = b.matrix(prefix + ".w2");
    Mlp m(w0.rows(), w0.cols(), w1.cols(), w2.cols());
    for (int l = 0; l < 3; ++l) {
        const auto& w = b.matrix(prefix + ".w" + std::to_string(l));
        const auto& bias = b.matrix(prefix + ".b" + std::to_string(l));
        if (w.rows() != m.weight(l).rows() || w.cols() != m.weight(l).cols())
            throw CorruptionError("mlp_from_bundle: layer shape mismatch at " + prefix);
        for (std::size_t i = 0; i < w.size(); ++i) m.weight(l).flat()[i] = double(w.flat()[i]);
        for (std::size_t i = 0; i < bias.size(); ++i) m.bias(l)[i] = double(bias.flat()[i]);
    }
    return m;
}

inline void tokenizer_to_bundle(ArtifactBundle& b, const std::string& prefix,
                                const MqTokenizerModel& t) {
    b.set(prefix + ".kind", t.kind == QuantizerKind::kway ? "kway" : "residual");
    b.set(prefix + ".encoders", std::to_string(t.encoders.size()));
    b.set(prefix + ".beta", std::to_string(t.beta));
    b.set(prefix + ".rho", std::to_string(t.mask.rho));
    b.set(prefix + ".K", std::to_string(t.codebook.K));
    b.set(prefix + ".L", std::to_string(t.codebook.L));
    b.set(prefix + ".code_dim", std::to_string(t.codebook.dim));
    for (std::size_t e = 0; e < t.encoders.size(); ++e)
        mlp_to_bundle(b, prefix + ".enc" + std::to_string(e), t.encoders[e]);
    mlp_to_bundle(b, prefix + ".dec", t.decoder);
    b.add_matrix(prefix + ".codebook", t.codebook.embeddings.cast<float>());
}

inline MqTokenizerModel tokenizer_from_bundle(const ArtifactBundle& b, const std::string& prefix,
                                              Side side) {
    MqTokenizerModel t;
    t.kind = b.get(prefix + ".kind") == "kway" ? QuantizerKind::kway : QuantizerKind::residual;
    t.beta = std::stod(b.get(prefix + ".beta"));
    t.mask.rho = std::stod(b.get(prefix + ".rho"));
    const auto enc_count = std::stoul(b.get(prefix + ".encoders"));
    for (std::size_t e = 0; e < enc_count; ++e)
        t.encoders.push_back(mlp_from_bundle(b, prefix + ".enc" + std::to_string(e)));
    t.decoder = mlp_from_bundle(b, prefix + ".dec");
    const auto K = std::stoul(b.get(prefix + ".K"));
    const auto L = std::stoul(b.get(prefix + ".L"));
    const auto dim = std::stoul(b.get(prefix + ".code_dim"));
    t.codebook = Codebook(K, L, dim, side);
    const auto& cb = b.matrix(prefix + ".codebook");
    if (cb.rows() != K * L || cb.cols() != dim)
        throw CorruptionError("tokenizer_from_bundle: codebook shape mismatch");
    for (std::size_t i = 0; i < cb.size(); ++i)
        t.codebook.embeddings.flat()[i] = double(cb.flat()[i]);
    return t;
}

inline Matrixd to_double(const Matrixf& m) { return m.cast<double>(); }

}  // namespace detail

inline ArtifactBundle pipeline_to_bundle(const TrainedPipeline& p, std::uint64_t data_hash) {
    ArtifactBundle b;
    b.set("dataset_hash", std::to_string(data_hash));
    b.set("users", std::to_string(p.split.num_users));
    b.set("items", std::to_string(p.split.num_items));
    b.set("dim", std::to_string(p.table.dim()));
    b.set("seed", std::to_string(p.cfg.seed));
    b.set("gamma", std::to_string(p.cfg.ranker_margin));
    b.set("pool_mode",
          p.query.mode == PoolMode::mean_pool ? "mean_pool" : "attention_pool");
    b.set("vocab.hash_buckets", std::to_string(p.vocab.hash_buckets));
    b.add_matrix("embeddings.user", p.table.user_vectors.cast<float>());
    b.add_matrix("embeddings.item", p.table.item_vectors.cast<float>());
    detail::tokenizer_to_bundle(b, "tokenizer.user", p.user_tokenizer);
    detail::tokenizer_to_bundle(b, "tokenizer.item", p.item_tokenizer);
    b.add_matrix("query.token_embeddings", p.query.token_embeddings.cast<float>());
    b.add_matrix("query.wq", p.query.wq.cast<float>());
    b.add_matrix("query.wk", p.query.wk.cast<float>());
    b.add_matrix("query.wv", p.query.wv.cast<float>());
    detail::mlp_to_bundle(b, "query.proj", p.query.projection);
    b.user_raw_ids = p.user_raw_ids;
    b.item_raw_ids = p.item_raw_ids;
    b.user_tokens = p.user_tuples;
    b.item_tokens = p.item_tuples;
    return b;
}

/// Rebuild a serving pipeline from a bundle plus the dataset it was trained
/// on (the split is re-derived deterministically from the data and config).
inline TrainedPipeline bundle_to_pipeline(const ArtifactBundle& b, const InteractionDataset& ds,
                                          const Config& cfg) {
    const auto stored_hash = std::stoull(b.get("dataset_hash"));
    if (stored_hash != dataset_hash(ds))
        throw CorruptionError("bundle_to_pipeline: artifacts belong to a different dataset");
    TrainedPipeline p;
    p.cfg = cfg;
    p.user_raw_ids = ds.user_raw_ids;
    p.item_raw_ids = ds.item_raw_ids;
    p.split = leave_one_out_split(ds, cfg.data_use_validation);
    p.table.user_vectors = detail::to_double(b.matrix("embeddings.user"));
    p.table.item_vectors = detail::to_double(b.matrix("embeddings.item"));
    p.user_tokenizer = detail::tokenizer_from_bundle(b, "tokenizer.user", Side::user);
    p.item_tokenizer = detail::tokenizer_from_bundle(b, "tokenizer.item", Side::item);
    p.catalog = default_templates();
    p.vocab = build_vocabulary(std::uint32_t(p.user_tokenizer.codebook.K),
                               std::uint32_t(p.user_tokenizer.codebook.L),
                               catalog_lexicon(p.catalog),
                               std::uint32_t(std::stoul(b.get("vocab.hash_buckets"))));
    p.query.mode =
        b.get("pool_mode") == "mean_pool" ? PoolMode::mean_pool : PoolMode::attention_pool;
    p.query.token_embeddings = detail::to_double(b.matrix("query.token_embeddings"));
    p.query.wq = detail::to_double(b.matrix("query.wq"));
    p.query.wk = detail::to_double(b.matrix("query.wk"));
    p.query.wv = detail::to_double(b.matrix("query.wv"));
    p.query.projection = detail::mlp_from_bundle(b, "query.proj");
    p.user_tuples = tokenize_batch(p.user_tokenizer, p.table.user_vectors);
    p.item_tuples = tokenize_batch(p.item_tokenizer, p.table.item_vectors);
    p.index = RetrievalIndex::from_table(p.table);
    return p;
}

}  // namespace mqrec
