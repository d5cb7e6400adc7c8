// mqrec command-line interface: data ingestion, staged training, top-K
// recommendation, evaluation protocols, quantizer ablations, and latency
// benchmarking over a saved artifact directory.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mqrec/ablation.hpp"
#include "mqrec/evaluate.hpp"
#include "mqrec/pipeline.hpp"
#include "mqrec/synth.hpp"

namespace fs = std::filesystem;
using namespace mqrec;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "artifacts";
    std::uint64_t seed = 0;
    const CLI::Option* seed_opt = nullptr;

    bool seed_set() const { return seed_opt != nullptr && seed_opt->count() > 0; }

    Config config() const {
        Config cfg = config_path.empty() ? Config{} : load_config(config_path);
        if (seed_set()) cfg.seed = seed;
        return cfg;
    }
};

InteractionDataset load_data(const Config& cfg) {
    if (cfg.data_path.empty())
        throw std::invalid_argument("data.path is not set (pass --config with data.path)");
    return load_interactions(cfg.data_path, cfg.format());
}

ArtifactBundle load_out_bundle(const GlobalArgs& g) { return load_bundle(g.out_dir); }

DatasetSplit split_for(const Config& cfg, const InteractionDataset& ds, bool holdout) {
    return holdout ? hold_out_unseen_users(ds, cfg.data_unseen_fraction, cfg.data_use_validation)
                   : leave_one_out_split(ds, cfg.data_use_validation);
}

Matrixd matrix_from_bundle_f64(const ArtifactBundle& b, const std::string& name) {
    return b.matrix(name).cast<double>();
}

int run(int argc, char** argv) {
    CLI::App app{"mqrec: masked vector-quantized ID tokens for generative retrieval"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    app.add_option("--config", g.config_path, "configuration file (key = value lines)");
    app.add_option("--out", g.out_dir, "artifact directory")->capture_default_str();
    g.seed_opt = app.add_option("--seed", g.seed, "override the config seed");

    // ---- ingest ----------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "parse an interaction log and report stats");
    std::string ingest_input, ingest_format = "tsv";
    ingest->add_option("--input", ingest_input, "interaction file")->required();
    ingest->add_option("--format", ingest_format, "tsv | movielens")->capture_default_str();
    ingest->callback([&]() {
        const auto fmt =
            ingest_format == "movielens" ? InteractionFormat::movielens_dat
                                         : InteractionFormat::tsv;
        auto ds = load_interactions(ingest_input, fmt);
        std::cout << "users = " << ds.num_users() << "\n";
        std::cout << "items = " << ds.num_items() << "\n";
        std::cout << "interactions = " << ds.num_interactions() << "\n";
        std::cout << "dataset_hash = " << dataset_hash(ds) << "\n";
    });

    // ---- synth-data ------------------------------------------------------
    auto* synth_cmd =
        app.add_subcommand("synth-data", "generate a clustered implicit-feedback corpus");
    synth::SynthCorpusConfig scfg;
    std::string synth_out = "interactions.tsv";
    synth_cmd->add_option("--users", scfg.users)->capture_default_str();
    synth_cmd->add_option("--items", scfg.items)->capture_default_str();
    synth_cmd->add_option("--interactions", scfg.interactions)->capture_default_str();
    synth_cmd->add_option("--clusters", scfg.clusters)->capture_default_str();
    synth_cmd->add_option("--output", synth_out, "output TSV path")->capture_default_str();
    synth_cmd->callback([&]() {
        if (g.seed_set()) scfg.seed = g.seed;
        auto corpus = synth::make_clustered_interactions(scfg);
        synth::write_tsv(corpus, synth_out);
        std::cout << "wrote " << corpus.records.size() << " interactions to " << synth_out
                  << "\n";
    });

    // ---- init-config -----------------------------------------------------
    auto* init_cfg = app.add_subcommand("init-config", "write the default configuration");
    std::string cfg_out = "mqrec.conf";
    init_cfg->add_option("--output", cfg_out)->capture_default_str();
    init_cfg->callback([&]() {
        std::ofstream out(cfg_out);
        out << default_config_text();
        std::cout << "wrote " << cfg_out << "\n";
    });

    // ---- train-cf --------------------------------------------------------
    auto* train_cf_cmd =
        app.add_subcommand("train-cf", "learn collaborative embeddings (stage 0)");
    bool holdout = false;
    train_cf_cmd->add_flag("--holdout-unseen", holdout,
                           "exclude the least-active users for the cold-start protocol");
    train_cf_cmd->callback([&]() {
        auto cfg = g.config();
        auto ds = load_data(cfg);
        auto split = split_for(cfg, ds, holdout);
        auto table = train_cf(split, cfg.cf_config());
        for (double& x : table.user_vectors.flat()) x = double(float(x));
        for (double& x : table.item_vectors.flat()) x = double(float(x));

        ArtifactBundle b;
        b.set("dataset_hash", std::to_string(dataset_hash(ds)));
        b.set("holdout_unseen", holdout ? "true" : "false");
        b.set("users", std::to_string(split.num_users));
        b.set("items", std::to_string(split.num_items));
        b.set("dim", std::to_string(table.dim()));
        b.set("seed", std::to_string(cfg.seed));
        b.add_matrix("embeddings.user", table.user_vectors.cast<float>());
        b.add_matrix("embeddings.item", table.item_vectors.cast<float>());
        save_bundle(g.out_dir, b);
        std::cout << "embeddings saved to " << g.out_dir << "\n";
    });

    // ---- train-tokenizer ---------------------------------------------------
    auto* train_tok_cmd =
        app.add_subcommand("train-tokenizer", "train the user and item tokenizers (stage 1)");
    train_tok_cmd->callback([&]() {
        auto cfg = g.config();
        auto b = load_out_bundle(g);
        EmbeddingTable table{matrix_from_bundle_f64(b, "embeddings.user"),
                             matrix_from_bundle_f64(b, "embeddings.item")};
        auto user_res =
            train_tokenizer(table.user_vectors, Side::user, cfg.tokenizer_config(Side::user));
        auto item_res =
            train_tokenizer(table.item_vectors, Side::item, cfg.tokenizer_config(Side::item));
        user_res.model.round_to_f32();
        item_res.model.round_to_f32();

        detail::tokenizer_to_bundle(b, "tokenizer.user", user_res.model);
        detail::tokenizer_to_bundle(b, "tokenizer.item", item_res.model);
        b.set("vocab.hash_buckets", std::to_string(cfg.vocab_hash_buckets));
        b.user_tokens = tokenize_batch(user_res.model, table.user_vectors);
        b.item_tokens = tokenize_batch(item_res.model, table.item_vectors);
        // raw ids for the token maps come from the dataset
        auto ds = load_data(cfg);
        b.user_raw_ids = ds.user_raw_ids;
        b.item_raw_ids = ds.item_raw_ids;
        save_bundle(g.out_dir, b);
        std::cout << "user recon mse: " << user_res.initial_recon_mse << " -> "
                  << user_res.final_recon_mse << " (" << user_res.epochs_run << " epochs)\n";
        std::cout << "item recon mse: " << item_res.initial_recon_mse << " -> "
                  << item_res.final_recon_mse << " (" << item_res.epochs_run << " epochs)\n";
        std::cout << "tokenizers saved to " << g.out_dir << "\n";
    });

    // ---- train-ranker ------------------------------------------------------
    auto* train_ranker_cmd =
        app.add_subcommand("train-ranker", "tune the query encoder (stage 2)");
    train_ranker_cmd->callback([&]() {
        auto cfg = g.config();
        auto ds = load_data(cfg);
        auto b = load_out_bundle(g);
        const bool was_holdout = b.has("holdout_unseen") && b.get("holdout_unseen") == "true";
        auto split = split_for(cfg, ds, was_holdout);
        EmbeddingTable table{matrix_from_bundle_f64(b, "embeddings.user"),
                             matrix_from_bundle_f64(b, "embeddings.item")};
        auto user_tok = detail::tokenizer_from_bundle(b, "tokenizer.user", Side::user);
        auto item_tok = detail::tokenizer_from_bundle(b, "tokenizer.item", Side::item);
        auto catalog = default_templates();
        auto vocab = build_vocabulary(std::uint32_t(user_tok.codebook.K),
                                      std::uint32_t(user_tok.codebook.L),
                                      catalog_lexicon(catalog),
                                      std::uint32_t(cfg.vocab_hash_buckets));
        auto result =
            train_ranker(split, user_tok, item_tok, table, catalog, vocab, cfg.ranker_config());
        result.model.round_to_f32();
        b.set("gamma", std::to_string(cfg.ranker_margin));
        b.set("pool_mode",
              result.model.mode == PoolMode::mean_pool ? "mean_pool" : "attention_pool");
        b.add_matrix("query.token_embeddings", result.model.token_embeddings.cast<float>());
        b.add_matrix("query.wq", result.model.wq.cast<float>());
        b.add_matrix("query.wk", result.model.wk.cast<float>());
        b.add_matrix("query.wv", result.model.wv.cast<float>());
        detail::mlp_to_bundle(b, "query.proj", result.model.projection);
        save_bundle(g.out_dir, b);
        std::cout << "ranker trained for " << result.epochs_run << " epochs";
        if (result.best_val_hr >= 0.0) std::cout << ", val hr@20 = " << result.best_val_hr;
        std::cout << "\nquery encoder saved to " << g.out_dir << "\n";
    });

    // ---- recommend ---------------------------------------------------------
    auto* recommend_cmd = app.add_subcommand("recommend", "emit top-K recommendations as TSV");
    std::vector<std::string> rec_users;
    std::size_t rec_topk = 20;
    recommend_cmd->add_option("--user", rec_users, "raw user id (repeatable; default: all)");
    recommend_cmd->add_option("--topk", rec_topk)->capture_default_str();
    recommend_cmd->callback([&]() {
        auto cfg = g.config();
        auto ds = load_data(cfg);
        auto pipeline = bundle_to_pipeline(load_out_bundle(g), ds, cfg);
        std::vector<std::uint32_t> users;
        if (rec_users.empty()) {
            for (std::uint32_t u = 0; u < ds.num_users(); ++u) users.push_back(u);
        } else {
            for (const auto& raw : rec_users) {
                auto it = ds.user_index.find(raw);
                if (it == ds.user_index.end())
                    throw std::invalid_argument("unknown user id '" + raw + "'");
                users.push_back(it->second);
            }
        }
        for (const auto& line : pipeline.recommend_lines(users, rec_topk, cfg.seed))
            std::cout << line << "\n";
    });

    // ---- evaluate ----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("evaluate", "score a trained pipeline");
    std::string protocol_s = "standard";
    std::size_t eval_threads = 1;
    eval_cmd->add_option("--protocol", protocol_s,
                         "standard | unseen_prompt | unseen_user | user_id_only")
        ->capture_default_str();
    eval_cmd->add_option("--threads", eval_threads)->capture_default_str();
    eval_cmd->callback([&]() {
        auto cfg = g.config();
        auto ds = load_data(cfg);
        auto b = load_out_bundle(g);
        Protocol protocol = Protocol::standard;
        if (protocol_s == "unseen_prompt") protocol = Protocol::unseen_prompt;
        else if (protocol_s == "unseen_user") protocol = Protocol::unseen_user;
        else if (protocol_s == "user_id_only") protocol = Protocol::user_id_only;
        else if (protocol_s != "standard")
            throw std::invalid_argument("unknown protocol '" + protocol_s + "'");

        auto pipeline = bundle_to_pipeline(b, ds, cfg);
        const bool was_holdout = b.has("holdout_unseen") && b.get("holdout_unseen") == "true";
        if (was_holdout) {
            auto holdout_split = split_for(cfg, ds, true);
            pipeline.split = holdout_split;
            if (protocol == Protocol::unseen_user) {
                // cold-start path: refresh only the vector database and pool
                refresh_for_unseen(pipeline, ds);
                pipeline.split.unseen_users = holdout_split.unseen_users;
            }
        } else if (protocol == Protocol::unseen_user) {
            throw std::invalid_argument(
                "unseen_user protocol needs artifacts trained with --holdout-unseen");
        }
        auto report = evaluate(pipeline, pipeline.split, protocol, cfg.eval_cutoffs, cfg.seed,
                               eval_threads);
        std::cout << report.to_table() << "\n" << report.to_kv();
    });

    // ---- ablate ------------------------------------------------------------
    auto* ablate_cmd =
        app.add_subcommand("ablate", "tokenize with a substitution quantizer and report");
    std::string ablate_mode = "kmeans", ablate_side = "item";
    ablate_cmd->add_option("--mode", ablate_mode, "vq_single | rq_residual | kmeans")
        ->capture_default_str();
    ablate_cmd->add_option("--side", ablate_side, "user | item")->capture_default_str();
    ablate_cmd->callback([&]() {
        auto cfg = g.config();
        auto b = load_out_bundle(g);
        const Side side = ablate_side == "user" ? Side::user : Side::item;
        auto vectors = matrix_from_bundle_f64(
            b, side == Side::user ? "embeddings.user" : "embeddings.item");
        AblationMode mode;
        if (ablate_mode == "vq_single") mode = AblationMode::vq_single;
        else if (ablate_mode == "rq_residual") mode = AblationMode::rq_residual;
        else if (ablate_mode == "kmeans") mode = AblationMode::kmeans;
        else throw std::invalid_argument("unknown ablation mode '" + ablate_mode + "'");

        auto result = ablation_quantize(mode, vectors, side, cfg.tokenizer_config(side));
        std::cout << "mode = " << ablate_mode << "\n";
        std::cout << "recon_mse = " << result.recon_mse << "\n";
        const std::string path =
            g.out_dir + "/ablate_" + ablate_mode + "_" + ablate_side + ".txt";
        auto ds = load_data(cfg);
        detail::write_token_map(path, side,
                                side == Side::user ? ds.user_raw_ids : ds.item_raw_ids,
                                result.tokens);
        std::cout << "token map written to " << path << "\n";
    });

    // ---- bench -------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "per-user inference latency");
    std::size_t bench_users = 256, bench_threads = 1, bench_topk = 20;
    bench_cmd->add_option("--users", bench_users)->capture_default_str();
    bench_cmd->add_option("--threads", bench_threads)->capture_default_str();
    bench_cmd->add_option("--topk", bench_topk)->capture_default_str();
    bench_cmd->callback([&]() {
        auto cfg = g.config();
        auto ds = load_data(cfg);
        auto pipeline = bundle_to_pipeline(load_out_bundle(g), ds, cfg);
        std::vector<std::uint32_t> users;
        for (std::uint32_t u = 0; u < std::min<std::size_t>(bench_users, ds.num_users()); ++u)
            users.push_back(u);
        auto report = benchmark_inference(pipeline, users, bench_topk, bench_threads, cfg.seed);
        std::cout << report.to_kv();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
