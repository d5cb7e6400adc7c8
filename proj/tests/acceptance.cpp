// Acceptance suite: one pass/fail line per criterion. Exits non-zero if any
// criterion fails. Criteria with stated runtime budgets enforce them here.

#include <cstdarg>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>

#include "mqrec/ablation.hpp"
#include "mqrec/evaluate.hpp"
#include "mqrec/grad.hpp"
#include "mqrec/pipeline.hpp"
#include "mqrec/synth.hpp"

using namespace mqrec;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure(what);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Harness {
    int failures = 0;

    void criterion(int num, const std::string& name, const std::function<std::string()>& fn) {
        const auto t0 = clock_type::now();
        std::string detail;
        bool ok = true;
        try {
            detail = fn();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        std::printf("[%s] criterion %2d (%6.1fs) %s%s%s\n", ok ? "PASS" : "FAIL", num,
                    seconds_since(t0), name.c_str(), detail.empty() ? "" : " -- ",
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

// toy end-task pipeline over the 8-cluster fixture, parameterized by the
// masking ratio; returns HR@10
double fixture_pipeline_hr10(const synth::ClusteredVectors& items, double rho) {
    const std::size_t n_users = 160, hist_len = 12, d = items.vectors.cols();
    auto users = synth::make_clustered_vectors(n_users, d, 8, 0.15, 77);  // same centers

    std::vector<std::vector<std::uint32_t>> cluster_items(8);
    for (std::size_t i = 0; i < items.vectors.rows(); ++i)
        cluster_items[items.labels[i]].push_back(static_cast<std::uint32_t>(i));

    DatasetSplit split;
    split.num_users = n_users;
    split.num_items = items.vectors.rows();
    split.train.resize(n_users);
    split.validation.resize(n_users);
    split.test.resize(n_users);
    auto rng = make_rng(314, 1);
    for (std::size_t u = 0; u < n_users; ++u) {
        const auto& members = cluster_items[users.labels[u]];
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        std::set<std::uint32_t> chosen;
        while (chosen.size() < hist_len) chosen.insert(members[pick(rng)]);
        std::vector<std::uint32_t> h(chosen.begin(), chosen.end());
        std::shuffle(h.begin(), h.end(), rng);
        split.test[u] = h.back();
        h.pop_back();
        split.train[u] = std::move(h);
    }

    EmbeddingTable table{users.vectors, items.vectors};

    TokenizerTrainConfig tok;
    tok.K = 3;
    tok.L = 16;
    tok.code_dim = 16;
    tok.hidden = 64;
    tok.rho = rho;
    tok.epochs = 40;
    tok.min_epochs = 40;
    tok.seed = 5;
    auto user_tok = train_tokenizer(table.user_vectors, Side::user, tok).model;
    auto item_tok = train_tokenizer(table.item_vectors, Side::item, tok).model;
    user_tok.round_to_f32();
    item_tok.round_to_f32();

    auto catalog = default_templates();
    auto vocab = build_vocabulary(3, 16, catalog_lexicon(catalog), 512);

    RankerTrainConfig rk;
    rk.d_e = 64;
    rk.proj_hidden = 64;
    rk.margin = 0.1;
    rk.lr = 2e-3;
    rk.batch = 128;
    rk.epochs = 12;
    rk.eval_every = 0;
    rk.seed = 9;
    auto ranker = train_ranker(split, user_tok, item_tok, table, catalog, vocab, rk);

    TrainedPipeline p;
    p.cfg = Config{};
    p.split = split;
    p.table = table;
    p.user_tokenizer = std::move(user_tok);
    p.item_tokenizer = std::move(item_tok);
    p.catalog = catalog;
    p.vocab = vocab;
    p.query = std::move(ranker.model);
    p.user_tuples = tokenize_batch(p.user_tokenizer, table.user_vectors);
    p.item_tuples = tokenize_batch(p.item_tokenizer, table.item_vectors);
    p.index = RetrievalIndex::from_table(table);

    auto report = evaluate(p, split, Protocol::standard, {10}, 21, 2);
    return report.hr_at(10);
}

}  // namespace

int main() {
    Harness h;
    const auto corpus_path = fs::temp_directory_path() / "mqrec_acceptance_corpus.tsv";

    // ---- 1: quantization oracle -------------------------------------------
    h.criterion(1, "quantize_nearest equals the exhaustive-scan oracle (K=3, L=512)", [&] {
        const auto t0 = clock_type::now();
        Codebook cb(3, 512, 32, Side::item);
        auto rng = make_rng(101, 0);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (double& x : cb.embeddings.flat()) x = dist(rng);
        // duplicate some codewords so the tie-break path is exercised
        for (std::size_t l = 0; l < 16; ++l) {
            auto src = cb.codeword(1, 500 + l);
            std::copy(src.begin(), src.end(), cb.codeword(1, l).begin());
        }
        std::size_t checked = 0;
        for (int q = 0; q < 1000; ++q) {
            std::vector<double> a(32);
            for (double& x : a) x = dist(rng);
            const std::size_t k = q % 3;
            const auto got = quantize_nearest(cb, k, a);
            std::size_t best = 0;
            double best_d = squared_distance(std::span<const double>(a), cb.codeword(k, 0));
            for (std::size_t l = 1; l < 512; ++l) {
                const double dd =
                    squared_distance(std::span<const double>(a), cb.codeword(k, l));
                if (dd < best_d) {
                    best_d = dd;
                    best = l;
                }
            }
            require(got.code == best, fmt("query %d: code %u != oracle %zu", q, got.code, best));
            ++checked;
        }
        const double secs = seconds_since(t0);
        require(secs < 5.0, fmt("runtime %.2fs exceeds 5s budget", secs));
        return fmt("%zu queries exact, %.2fs", checked, secs);
    });

    // ---- 2: gradient correctness ------------------------------------------
    h.criterion(2, "finite differences confirm encoder/decoder/projection/embedding grads", [&] {
        const auto t0 = clock_type::now();
        double worst = 0.0;

        // encoder + decoder through the tokenizer losses
        MqTokenizerModel m;
        m.kind = QuantizerKind::kway;
        for (int k = 0; k < 2; ++k) {
            m.encoders.push_back(Mlp::make(16, 24, 24, 8, 301 + k));
            for (int l = 0; l < 3; ++l) {
                auto brng = make_rng(400 + k * 3 + l, 0);
                std::uniform_real_distribution<double> d(-0.1, 0.1);
                for (double& b : m.encoders[k].bias(l)) b = d(brng);
            }
        }
        m.decoder = Mlp::make(8, 24, 24, 16, 310);
        for (int l = 0; l < 3; ++l) {
            auto brng = make_rng(420 + l, 0);
            std::uniform_real_distribution<double> d(-0.1, 0.1);
            for (double& b : m.decoder.bias(l)) b = d(brng);
        }
        m.codebook = Codebook(2, 12, 8, Side::item);
        {
            auto rng = make_rng(311, 0);
            std::normal_distribution<double> dist(0.0, 1.0);
            for (double& x : m.codebook.embeddings.flat()) x = dist(rng);
        }
        std::vector<double> v(16), vm(16);
        {
            auto rng = make_rng(312, 0);
            std::normal_distribution<double> dist(0.0, 1.0);
            for (std::size_t j = 0; j < 16; ++j) v[j] = vm[j] = dist(rng);
        }
        MqLossGradients grads;
        MqRoutingAudit audit;
        compute_mq_losses(m, v, vm, &grads, &audit);
        const auto codes = tokenize_entity(m, vm);

        for (std::size_t k = 0; k < 2; ++k) {
            auto cm_loss = [&]() {
                auto latents = encode_kway(m, vm);
                double s = 0.0;
                for (std::size_t kk = 0; kk < 2; ++kk)
                    s += squared_distance(std::span<const double>(latents[kk]),
                                          m.codebook.codeword(kk, codes.codes[kk]));
                return s;
            };
            m.encoders[k].for_each_param_with_grad(
                audit.encoders_cm_only[k], [&](std::span<double> p, std::span<double> g) {
                    worst = std::max(worst, finite_difference_check(cm_loss, p, g, 1e-5));
                });
        }
        auto recon_loss = [&]() {
            auto r = decode_from_tokens(m, codes);
            return squared_distance(std::span<const double>(v), std::span<const double>(r));
        };
        m.decoder.for_each_param_with_grad(
            grads.decoder, [&](std::span<double> p, std::span<double> g) {
                worst = std::max(worst, finite_difference_check(recon_loss, p, g, 1e-5));
            });

        // projection + token embeddings through the ranking loss
        for (PoolMode mode : {PoolMode::mean_pool, PoolMode::attention_pool}) {
            auto qm = make_query_encoder(64, 12, 10, 16, mode, 317);
            auto brng = make_rng(318, std::uint64_t(mode));
            std::uniform_real_distribution<double> d(-0.2, 0.2);
            for (int l = 0; l < 3; ++l)
                for (double& b : qm.projection.bias(l)) b = d(brng);
            RenderedPrompt prompt;
            prompt.token_ids = {3, 17, 40, 55, 9};
            std::vector<double> q_pos(10), q_neg(10);
            for (double& x : q_pos) x = d(brng) + 0.4;
            for (double& x : q_neg) x = d(brng) + 0.35;
            const double gamma = 0.05;
            auto loss = [&]() {
                auto hh = encode_query(qm, prompt);
                auto z = project_query(qm, hh);
                return ranking_loss(cosine_score(z, q_pos), 1, gamma) +
                       ranking_loss(cosine_score(z, q_neg), -1, gamma);
            };
            EncodeTrace trace;
            auto hh = encode_query(qm, prompt, &trace);
            Matrixd H(1, 12);
            std::copy(hh.begin(), hh.end(), H.row(0).begin());
            auto proj_trace = qm.projection.forward_trace(H);
            auto z = proj_trace.y.row(0);
            require(cosine_score(z, q_neg) > gamma, "negative score below margin at init");
            Matrixd dZ(1, 10);
            detail::cosine_grad_accumulate(z, q_pos, -1.0, dZ.row(0));
            detail::cosine_grad_accumulate(z, q_neg, 1.0, dZ.row(0));
            MlpGrads proj_grads = qm.projection.zero_grads();
            auto dH = qm.projection.backward(proj_trace, dZ, proj_grads, true);
            EncoderGrads eg;
            eg.init_like(qm);
            encode_query_backward(qm, trace, dH->row(0), eg);
            qm.projection.for_each_param_with_grad(
                proj_grads, [&](std::span<double> p, std::span<double> g) {
                    worst = std::max(worst, finite_difference_check(loss, p, g, 1e-5));
                });
            worst = std::max(worst, finite_difference_check(loss, qm.token_embeddings.flat(),
                                                            eg.token_embeddings.flat(), 1e-5));
        }

        const double secs = seconds_since(t0);
        require(worst < 1e-4, fmt("max relative error %.3g >= 1e-4", worst));
        require(secs < 30.0, fmt("runtime %.1fs exceeds 30s budget", secs));
        return fmt("max relative error %.2e", worst);
    });

    // ---- 3: gradient routing ----------------------------------------------
    h.criterion(3, "sg blocks cb->encoder and cm->codebook; straight-through is bit-identical",
                [&] {
                    auto rng = make_rng(500, 0);
                    std::normal_distribution<double> dist(0.0, 1.0);
                    for (int trial = 0; trial < 50; ++trial) {
                        MqTokenizerModel m;
                        m.kind = QuantizerKind::kway;
                        for (int k = 0; k < 3; ++k)
                            m.encoders.push_back(Mlp::make(12, 16, 16, 6, 600 + trial * 7 + k));
                        m.decoder = Mlp::make(6, 16, 16, 12, 610 + trial);
                        m.codebook = Codebook(3, 8, 6, Side::user);
                        for (double& x : m.codebook.embeddings.flat()) x = dist(rng);
                        std::vector<double> v(12), vm(12);
                        for (std::size_t j = 0; j < 12; ++j) {
                            v[j] = dist(rng);
                            vm[j] = (j % 4 == 0) ? 0.0 : v[j];
                        }
                        MqLossGradients grads;
                        MqRoutingAudit audit;
                        compute_mq_losses(m, v, vm, &grads, &audit);
                        for (const auto& g : audit.encoders_from_cb)
                            require(g.all_zero(), "cb leaked gradient into encoder parameters");
                        for (double x : audit.codebook_from_cm.flat())
                            require(x == 0.0, "cm leaked gradient into the codebook");
                        for (std::size_t k = 0; k < 3; ++k) {
                            const auto& up = audit.grad_at_selected_codeword[k];
                            const auto& down = audit.grad_at_encoder_output[k];
                            require(up.size() == down.size(), "straight-through arity mismatch");
                            require(std::memcmp(up.data(), down.data(),
                                                up.size() * sizeof(double)) == 0,
                                    "straight-through gradients are not bit-identical");
                        }
                    }
                    return std::string("50 random models audited");
                });

    // ---- 4: loss identity ---------------------------------------------------
    h.criterion(4, "L_MQ = L_recon + L_cb + beta*L_cm to the last ulp on 1000 inputs", [&] {
        MqTokenizerModel m;
        m.kind = QuantizerKind::kway;
        for (int k = 0; k < 3; ++k) m.encoders.push_back(Mlp::make(16, 24, 24, 8, 700 + k));
        m.decoder = Mlp::make(8, 24, 24, 16, 710);
        m.codebook = Codebook(3, 32, 8, Side::item);
        m.beta = 0.25;
        auto rng = make_rng(711, 0);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (double& x : m.codebook.embeddings.flat()) x = dist(rng);
        for (int i = 0; i < 1000; ++i) {
            std::vector<double> v(16), vm(16);
            for (std::size_t j = 0; j < 16; ++j) {
                v[j] = dist(rng);
                vm[j] = (j % 5 == 0) ? 0.0 : v[j];
            }
            const auto rep = compute_mq_losses(m, v, vm);
            const double recomposed = rep.recon + rep.cb + m.beta * rep.cm;
            require(rep.total == recomposed, fmt("identity off at input %d", i));
            require(rep.recon >= 0.0 && rep.cb >= 0.0 && rep.cm >= 0.0, "negative loss term");
        }
        return std::string("1000 inputs, identity exact");
    });

    // ---- 5: tokenizer learning on the 8-cluster fixture ---------------------
    auto fixture = synth::make_clustered_vectors(2000, 32, 8, 0.15, 77);
    h.criterion(5, "fixture tokenizer: recon MSE <= 10% of start, cluster token sharing >= 2x",
                [&] {
                    const auto t0 = clock_type::now();
                    TokenizerTrainConfig cfg;
                    cfg.K = 3;
                    cfg.L = 16;
                    cfg.code_dim = 16;
                    cfg.hidden = 64;
                    cfg.rho = 0.2;
                    cfg.batch = 128;
                    cfg.epochs = 60;
                    cfg.min_epochs = 40;
                    cfg.seed = 5;
                    auto result = train_tokenizer(fixture.vectors, Side::item, cfg);
                    const double ratio = result.final_recon_mse / result.initial_recon_mse;

                    auto tuples = tokenize_batch(result.model, fixture.vectors);
                    std::size_t same_pairs = 0, same_share = 0;
                    std::size_t cross_pairs = 0, cross_share = 0;
                    for (std::size_t a = 0; a < tuples.size(); ++a)
                        for (std::size_t b = a + 1; b < tuples.size(); ++b) {
                            bool share = false;
                            for (std::size_t k = 0; k < 3; ++k)
                                if (tuples[a].codes[k] == tuples[b].codes[k]) share = true;
                            if (fixture.labels[a] == fixture.labels[b]) {
                                ++same_pairs;
                                same_share += share ? 1 : 0;
                            } else {
                                ++cross_pairs;
                                cross_share += share ? 1 : 0;
                            }
                        }
                    const double same_rate = double(same_share) / double(same_pairs);
                    const double cross_rate = double(cross_share) / double(cross_pairs);
                    const double secs = seconds_since(t0);
                    require(ratio <= 0.10, fmt("recon MSE ratio %.3f > 0.10", ratio));
                    require(same_rate >= 2.0 * cross_rate,
                            fmt("sharing %.3f vs cross %.3f (< 2x)", same_rate, cross_rate));
                    require(secs < 120.0, fmt("runtime %.1fs exceeds 2min budget", secs));
                    return fmt("MSE ratio %.3f, share %.3f vs %.3f (%.1fx)", ratio, same_rate,
                               cross_rate, same_rate / std::max(cross_rate, 1e-12));
                });

    // ---- 6: masking ablation trend ------------------------------------------
    h.criterion(6, "toy end-task HR@10 at rho=0.2 >= rho=0.8", [&] {
        const double hr_small = fixture_pipeline_hr10(fixture, 0.2);
        const double hr_large = fixture_pipeline_hr10(fixture, 0.8);
        require(hr_small >= hr_large,
                fmt("HR@10 %.4f at rho=0.2 < %.4f at rho=0.8", hr_small, hr_large));
        return fmt("HR@10 %.4f (rho=0.2) vs %.4f (rho=0.8)", hr_small, hr_large);
    });

    // ---- shared corpus + baseline for 7/8/11 --------------------------------
    synth::SynthCorpusConfig scale;  // benchmark-scale defaults
    auto corpus = synth::make_clustered_interactions(scale);
    synth::write_tsv(corpus, corpus_path.string());
    auto ds = load_interactions(corpus_path.string(), InteractionFormat::tsv);
    Config cfg;
    cfg.data_path = corpus_path.string();
    DatasetSplit split = leave_one_out_split(ds, cfg.data_use_validation);
    EmbeddingTable baseline_table;

    h.criterion(7, "LightGCN baseline (d=64, 3 layers) HR@20 >= 0.05 at benchmark scale", [&] {
        const auto t0 = clock_type::now();
        require(ds.num_users() == 1090 && ds.num_items() == 3646 &&
                    ds.num_interactions() == 37080,
                "corpus scale mismatch");
        baseline_table = train_cf(split, cfg.cf_config());
        for (double& x : baseline_table.user_vectors.flat()) x = double(float(x));
        for (double& x : baseline_table.item_vectors.flat()) x = double(float(x));
        CfScorePipeline pipe{baseline_table, split, true};
        auto report = evaluate(pipe, split, Protocol::standard, {20}, cfg.seed);
        const double secs = seconds_since(t0);
        require(report.hr_at(20) >= 0.05, fmt("HR@20 %.4f < 0.05", report.hr_at(20)));
        require(secs < 600.0, fmt("runtime %.0fs exceeds 10min budget", secs));
        return fmt("HR@20 %.4f over %zu users", report.hr_at(20), report.user_count);
    });

    TrainedPipeline pipeline;
    h.criterion(8, "end-to-end pipeline HR@20 >= 0.03 hard floor (target 0.055)", [&] {
        require(!baseline_table.user_vectors.empty(), "baseline table unavailable");
        pipeline.cfg = cfg;
        pipeline.split = split;
        pipeline.user_raw_ids = ds.user_raw_ids;
        pipeline.item_raw_ids = ds.item_raw_ids;
        pipeline.table = baseline_table;
        pipeline.user_tokenizer = train_tokenizer(baseline_table.user_vectors, Side::user,
                                                  cfg.tokenizer_config(Side::user))
                                      .model;
        pipeline.item_tokenizer = train_tokenizer(baseline_table.item_vectors, Side::item,
                                                  cfg.tokenizer_config(Side::item))
                                      .model;
        pipeline.user_tokenizer.round_to_f32();
        pipeline.item_tokenizer.round_to_f32();
        pipeline.catalog = default_templates();
        pipeline.vocab = build_vocabulary(std::uint32_t(cfg.tokenizer_k),
                                          std::uint32_t(cfg.tokenizer_l),
                                          catalog_lexicon(pipeline.catalog),
                                          std::uint32_t(cfg.vocab_hash_buckets));
        auto rk_cfg = cfg.ranker_config();
        rk_cfg.epochs = 15;
        rk_cfg.eval_every = 5;
        auto rk = train_ranker(split, pipeline.user_tokenizer, pipeline.item_tokenizer,
                               pipeline.table, pipeline.catalog, pipeline.vocab, rk_cfg);
        pipeline.query = std::move(rk.model);
        pipeline.query.round_to_f32();
        pipeline.user_tuples =
            tokenize_batch(pipeline.user_tokenizer, pipeline.table.user_vectors);
        pipeline.item_tuples =
            tokenize_batch(pipeline.item_tokenizer, pipeline.table.item_vectors);
        pipeline.index = RetrievalIndex::from_table(pipeline.table);

        auto report = evaluate(pipeline, split, Protocol::standard, {20}, cfg.seed, 2);
        const double hr = report.hr_at(20);
        require(hr >= 0.03, fmt("HR@20 %.4f below the 0.03 hard floor", hr));
        // the paper-scale headline (0.0936) needs the out-of-scope fine-tuned
        // T5 backbone; this compact pipeline asserts the desk-scale floor
        return fmt("HR@20 %.4f (target 0.055 %s; T5-backbone headline out of scope)", hr,
                   hr >= 0.055 ? "met" : "missed");
    });

    // ---- 9: unseen-entity protocol ------------------------------------------
    h.criterion(9, "cold-start refresh beats random for unseen users with frozen models", [&] {
        Config ucfg = cfg;
        ucfg.cf_epochs = 60;
        ucfg.tokenizer_epochs = 30;
        ucfg.tokenizer_min_epochs = 20;
        ucfg.ranker_epochs = 8;
        ucfg.ranker_eval_every = 0;
        auto p = train_full_pipeline(ds, ucfg, /*holdout_unseen=*/true);
        require(p.split.unseen_users.size() == 55,
                fmt("expected ceil(0.05*1090)=55 unseen users, got %zu",
                    p.split.unseen_users.size()));
        const auto tok_hash_u = p.user_tokenizer.param_hash();
        const auto tok_hash_i = p.item_tokenizer.param_hash();
        const auto query_hash = p.query.param_hash();

        refresh_for_unseen(p, ds);

        require(p.user_tokenizer.param_hash() == tok_hash_u, "user tokenizer changed");
        require(p.item_tokenizer.param_hash() == tok_hash_i, "item tokenizer changed");
        require(p.query.param_hash() == query_hash, "query encoder changed");

        auto report = evaluate(p, p.split, Protocol::unseen_user, {20}, ucfg.seed, 2);
        const double random_expectation = 20.0 / double(ds.num_items());
        require(report.hr_at(20) > random_expectation,
                fmt("unseen HR@20 %.4f <= random %.4f", report.hr_at(20), random_expectation));
        return fmt("unseen HR@20 %.4f over %zu users (random %.4f), hashes frozen",
                   report.hr_at(20), report.user_count, random_expectation);
    });

    // ---- 10: retrieval exactness + latency ----------------------------------
    h.criterion(10, "topk equals full sort on a 39,387-item pool; < 50 ms/query", [&] {
        const std::size_t m = 39387, d = 64;
        EmbeddingTable t;
        t.user_vectors = Matrixd(1, d);
        t.item_vectors = Matrixd(m, d);
        auto rng = make_rng(901, 0);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (double& x : t.item_vectors.flat()) x = dist(rng);
        auto index = RetrievalIndex::from_table(t);

        double total_ms = 0.0;
        std::vector<ScoredItem> all(m);
        for (int q = 0; q < 1000; ++q) {
            std::vector<double> z(d);
            for (double& x : z) x = dist(rng);
            const auto t0 = clock_type::now();
            auto got = topk_retrieve(index, z, 20);
            total_ms +=
                std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();

            // full-sort oracle on the same float scores
            const double norm = norm2(z);
            std::vector<float> zn(d);
            for (std::size_t j = 0; j < d; ++j) zn[j] = float(z[j] / norm);
            for (std::size_t row = 0; row < m; ++row) {
                float s = 0.0f;
                const float* v = index.row_data(row);
                for (std::size_t j = 0; j < d; ++j) s += zn[j] * v[j];
                all[row] = {index.id_at(row), s};
            }
            std::sort(all.begin(), all.end(), [](const ScoredItem& a, const ScoredItem& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.item < b.item;
            });
            for (std::size_t i = 0; i < got.size(); ++i)
                require(got[i].item == all[i].item && got[i].score == all[i].score,
                        fmt("query %d diverges from the oracle at rank %zu", q, i));
        }
        const double per_query = total_ms / 1000.0;
        require(per_query < 50.0, fmt("retrieval %.2f ms/query >= 50 ms", per_query));
        return fmt("1000 queries exact, %.3f ms/query single-thread", per_query);
    });

    // ---- 11: metric fixtures + monotonicity ----------------------------------
    h.criterion(11, "metric fixtures match hand values; HR/NDCG monotone over the test set",
                [&] {
                    std::vector<std::uint32_t> ranked{5, 3, 7};
                    require(hit_ratio_at_k(ranked, 7, 2) == 0, "HR fixture 1");
                    require(hit_ratio_at_k(ranked, 7, 3) == 1, "HR fixture 2");
                    require(hit_ratio_at_k(ranked, 9, 10) == 0, "HR fixture 3");
                    require(ndcg_at_k(ranked, 5, 1) == 1.0, "NDCG rank 1");
                    require(std::abs(ndcg_at_k(ranked, 7, 3) - 0.5) < 1e-12,
                            "NDCG rank 3 = 0.5");
                    std::vector<std::uint32_t> twelve(12);
                    for (std::uint32_t i = 0; i < 12; ++i) twelve[i] = i;
                    require(ndcg_at_k(twelve, 10, 10) == 0.0, "NDCG rank 11 cutoff 10");

                    require(!baseline_table.user_vectors.empty(), "baseline table unavailable");
                    CfScorePipeline pipe{baseline_table, split, true};
                    std::size_t users_checked = 0;
                    for (std::size_t u = 0; u < split.num_users; ++u) {
                        if (!split.test[u]) continue;
                        auto full =
                            pipe.rank_for_user(std::uint32_t(u), Protocol::standard, 30, 1);
                        double prev_hr = 0.0, prev_nd = 0.0;
                        for (std::size_t k : {std::size_t(10), std::size_t(20), std::size_t(30)}) {
                            const double hr = hit_ratio_at_k(full, *split.test[u], k);
                            const double nd = ndcg_at_k(full, *split.test[u], k);
                            require(hr >= prev_hr && nd >= prev_nd,
                                    fmt("metric not monotone for user %zu", u));
                            require(nd <= hr + 1e-12, fmt("NDCG > HR for user %zu", u));
                            prev_hr = hr;
                            prev_nd = nd;
                        }
                        ++users_checked;
                    }
                    return fmt("fixtures exact; monotone over %zu test users", users_checked);
                });

    // ---- 12: persistence ------------------------------------------------------
    h.criterion(12, "artifact save/load round trip is bitwise; corruption detected", [&] {
        require(!pipeline.table.user_vectors.empty(), "pipeline unavailable");
        const auto dir = fs::temp_directory_path() / "mqrec_acceptance_bundle";
        fs::remove_all(dir);
        auto bundle = pipeline_to_bundle(pipeline, dataset_hash(ds));
        save_bundle(dir.string(), bundle);
        auto back = load_bundle(dir.string());
        for (const auto& [name, m] : bundle.matrices) {
            const auto& loaded = back.matrix(name);
            require(loaded.rows() == m.rows() && loaded.cols() == m.cols(),
                    "shape mismatch after round trip: " + name);
            require(std::memcmp(loaded.data(), m.data(), m.size() * sizeof(float)) == 0,
                    "payload differs after round trip: " + name);
        }
        auto restored = bundle_to_pipeline(back, ds, cfg);
        for (std::size_t u = 0; u < 100; ++u)
            require(restored.user_tuples[u] == pipeline.user_tuples[u],
                    "tokenization changed across the round trip");

        // flip one payload byte of a matrix file
        const auto victim = dir / "embeddings.item.mqm";
        {
            std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
            f.seekg(24 + 33);
            char byte;
            f.read(&byte, 1);
            byte = char(byte ^ 0x10);
            f.seekp(24 + 33);
            f.write(&byte, 1);
        }
        bool threw = false;
        try {
            (void)read_matrix_file(victim.string());
        } catch (const CorruptionError&) {
            threw = true;
        }
        require(threw, "corrupted payload was not detected");

        {
            std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
            f.write("ZZZZ", 4);
        }
        threw = false;
        try {
            (void)read_matrix_file(victim.string());
        } catch (const FormatError&) {
            threw = true;
        }
        require(threw, "bad magic was not detected");
        fs::remove_all(dir);
        return fmt("%zu matrices bitwise, corruption + magic detected",
                   bundle.matrices.size());
    });

    fs::remove(corpus_path);
    if (h.failures == 0) {
        std::printf("acceptance: all 12 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria FAILED\n", h.failures);
    return 1;
}
