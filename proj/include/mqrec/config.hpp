#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mqrec/cf.hpp"
#include "mqrec/common.hpp"
#include "mqrec/dataset.hpp"
#include "mqrec/ranker.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

/// Every tunable of the pipeline, with its default. The config file is
/// line-oriented `key = value` text; `#` starts a comment.
struct Config {
    std::uint64_t seed = 1;

    std::string data_path;
    std::string data_format = "tsv";  // tsv | movielens
    std::size_t data_max_history = 100;
    bool data_use_validation = true;
    double data_unseen_fraction = 0.05;

    std::string cf_method = "lightgcn";  // lightgcn | mf_bpr
    std::size_t cf_dim = 64;
    std::size_t cf_layers = 3;
    std::size_t cf_epochs = 200;
    std::size_t cf_batch = 2048;
    double cf_lr = 1e-3;
    double cf_l2 = 1e-4;
    std::size_t cf_eval_every = 10;
    std::size_t cf_patience = 3;

    std::size_t tokenizer_k = 3;
    std::size_t tokenizer_l = 256;
    std::size_t tokenizer_code_dim = 32;
    std::size_t tokenizer_hidden = 128;
    double tokenizer_rho = 0.2;
    std::string tokenizer_resample = "per_epoch";  // per_epoch | per_step
    double tokenizer_beta = 0.25;
    double tokenizer_lr = 1e-3;
    double tokenizer_weight_decay = 0.01;
    std::size_t tokenizer_batch = 128;
    std::size_t tokenizer_epochs = 100;
    std::size_t tokenizer_dead_code_interval = 10;
    std::size_t tokenizer_eval_every = 5;
    std::size_t tokenizer_plateau_patience = 2;
    std::size_t tokenizer_min_epochs = 20;

    std::size_t vocab_hash_buckets = 4096;
    std::size_t vocab_max_prompt_len = 512;

    std::size_t ranker_embed_dim = 128;
    std::size_t ranker_proj_hidden = 256;
    std::string ranker_pool = "mean_pool";  // mean_pool | attention_pool
    double ranker_margin = 0.1;             // gamma
    double ranker_lr = 1e-3;
    double ranker_weight_decay = 0.01;
    std::size_t ranker_batch = 128;
    std::size_t ranker_epochs = 100;
    std::size_t ranker_eval_every = 3;
    std::size_t ranker_patience = 3;

    std::vector<std::size_t> eval_cutoffs{10, 20, 30};
    bool eval_exclude_train = true;

    CfTrainConfig cf_config() const {
        CfTrainConfig c;
        if (cf_method == "lightgcn")
            c.method = CfMethod::lightgcn;
        else if (cf_method == "mf_bpr")
            c.method = CfMethod::mf_bpr;
        else
            throw ParseError("config: unknown cf.method '" + cf_method + "'");
        c.layers = cf_layers;
        c.dim = cf_dim;
        c.epochs = cf_epochs;
        c.batch_size = cf_batch;
        c.lr = cf_lr;
        c.l2_reg = cf_l2;
        c.seed = seed;
        c.eval_every = cf_eval_every;
        c.patience = cf_patience;
        return c;
    }

    TokenizerTrainConfig tokenizer_config(Side side) const {
        TokenizerTrainConfig c;
        c.kind = QuantizerKind::kway;
        c.K = tokenizer_k;
        c.L = tokenizer_l;
        c.code_dim = tokenizer_code_dim;
        c.hidden = tokenizer_hidden;
        c.rho = tokenizer_rho;
        if (tokenizer_resample == "per_epoch")
            c.resample = MaskConfig::Resample::per_epoch;
        else if (tokenizer_resample == "per_step")
            c.resample = MaskConfig::Resample::per_step;
        else
            throw ParseError("config: unknown tokenizer.resample '" + tokenizer_resample + "'");
        c.beta = tokenizer_beta;
        c.lr = tokenizer_lr;
        c.weight_decay = tokenizer_weight_decay;
        c.batch = tokenizer_batch;
        c.epochs = tokenizer_epochs;
        c.seed = splitmix64(seed ^ (side == Side::user ? 0x75736572ULL : 0x6974656dULL));
        c.dead_code_interval = tokenizer_dead_code_interval;
        c.eval_every = tokenizer_eval_every;
        c.plateau_patience = tokenizer_plateau_patience;
        c.min_epochs = tokenizer_min_epochs;
        return c;
    }

    RankerTrainConfig ranker_config() const {
        RankerTrainConfig c;
        c.d_e = ranker_embed_dim;
        c.proj_hidden = ranker_proj_hidden;
        if (ranker_pool == "mean_pool")
            c.mode = PoolMode::mean_pool;
        else if (ranker_pool == "attention_pool")
            c.mode = PoolMode::attention_pool;
        else
            throw ParseError("config: unknown ranker.pool '" + ranker_pool + "'");
        c.margin = ranker_margin;
        c.lr = ranker_lr;
        c.weight_decay = ranker_weight_decay;
        c.batch = ranker_batch;
        c.epochs = ranker_epochs;
        c.max_history = data_max_history;
        c.max_prompt_len = vocab_max_prompt_len;
        c.seed = splitmix64(seed ^ 0x72616e6bULL);
        c.eval_every = ranker_eval_every;
        c.patience = ranker_patience;
        return c;
    }

    InteractionFormat format() const {
        if (data_format == "tsv") return InteractionFormat::tsv;
        if (data_format == "movielens") return InteractionFormat::movielens_dat;
        throw ParseError("config: unknown data.format '" + data_format + "'");
    }
};

namespace detail {

inline bool apply_config_entry(Config& c, const std::string& key, const std::string& value) {
    auto u64 = [&] { return std::stoull(value); };
    auto f64 = [&] { return std::stod(value); };
    auto flag = [&] {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw ParseError("config: boolean expected for " + key);
    };
    if (key == "seed") c.seed = u64();
    else if (key == "data.path") c.data_path = value;
    else if (key == "data.format") c.data_format = value;
    else if (key == "data.max_history") c.data_max_history = u64();
    else if (key == "data.use_validation") c.data_use_validation = flag();
    else if (key == "data.unseen_fraction") c.data_unseen_fraction = f64();
    else if (key == "cf.method") c.cf_method = value;
    else if (key == "cf.dim") c.cf_dim = u64();
    else if (key == "cf.layers") c.cf_layers = u64();
    else if (key == "cf.epochs") c.cf_epochs = u64();
    else if (key == "cf.batch") c.cf_batch = u64();
    else if (key == "cf.lr") c.cf_lr = f64();
    else if (key == "cf.l2") c.cf_l2 = f64();
    else if (key == "cf.eval_every") c.cf_eval_every = u64();
    else if (key == "cf.patience") c.cf_patience = u64();
    else if (key == "tokenizer.k") c.tokenizer_k = u64();
    else if (key == "tokenizer.l") c.tokenizer_l = u64();
    else if (key == "tokenizer.code_dim") c.tokenizer_code_dim = u64();
    else if (key == "tokenizer.hidden") c.tokenizer_hidden = u64();
    else if (key == "tokenizer.rho") c.tokenizer_rho = f64();
    else if (key == "tokenizer.resample") c.tokenizer_resample = value;
    else if (key == "tokenizer.beta") c.tokenizer_beta = f64();
    else if (key == "tokenizer.lr") c.tokenizer_lr = f64();
    else if (key == "tokenizer.weight_decay") c.tokenizer_weight_decay = f64();
    else if (key == "tokenizer.batch") c.tokenizer_batch = u64();
    else if (key == "tokenizer.epochs") c.tokenizer_epochs = u64();
    else if (key == "tokenizer.dead_code_interval") c.tokenizer_dead_code_interval = u64();
    else if (key == "tokenizer.eval_every") c.tokenizer_eval_every = u64();
    else if (key == "tokenizer.plateau_patience") c.tokenizer_plateau_patience = u64();
    else if (key == "tokenizer.min_epochs") c.tokenizer_min_epochs = u64();
    else if (key == "vocab.hash_buckets") c.vocab_hash_buckets = u64();
    else if (key == "vocab.max_prompt_len") c.vocab_max_prompt_len = u64();
    else if (key == "ranker.embed_dim") c.ranker_embed_dim = u64();
    else if (key == "ranker.proj_hidden") c.ranker_proj_hidden = u64();
    else if (key == "ranker.pool") c.ranker_pool = value;
    else if (key == "ranker.margin") c.ranker_margin = f64();
    else if (key == "ranker.lr") c.ranker_lr = f64();
    else if (key == "ranker.weight_decay") c.ranker_weight_decay = f64();
    else if (key == "ranker.batch") c.ranker_batch = u64();
    else if (key == "ranker.epochs") c.ranker_epochs = u64();
    else if (key == "ranker.eval_every") c.ranker_eval_every = u64();
    else if (key == "ranker.patience") c.ranker_patience = u64();
    else if (key == "eval.cutoffs") {
        c.eval_cutoffs.clear();
        std::istringstream iss(value);
        std::string tok;
        while (std::getline(iss, tok, ',')) c.eval_cutoffs.push_back(std::stoull(tok));
        if (c.eval_cutoffs.empty()) throw ParseError("config: eval.cutoffs empty");
    } else if (key == "eval.exclude_train")
        c.eval_exclude_train = flag();
    else
        return false;
    return true;
}

}  // namespace detail

inline Config parse_config(std::istream& in, const std::string& origin) {
    Config c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ": missing '=' at line " + std::to_string(line_no));
        auto trim = [](std::string s) {
            const auto s0 = s.find_first_not_of(" \t");
            const auto s1 = s.find_last_not_of(" \t");
            return s0 == std::string::npos ? std::string() : s.substr(s0, s1 - s0 + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError(origin + ": empty key or value at line " + std::to_string(line_no));
        try {
            if (!detail::apply_config_entry(c, key, value))
                throw ParseError(origin + ": unknown key '" + key + "' at line " +
                                 std::to_string(line_no));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError(origin + ": bad value for '" + key + "' at line " +
                             std::to_string(line_no));
        }
    }
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_config: cannot open '" + path + "'");
    return parse_config(in, path);
}

/// Emit the full default configuration, suitable as a starting point.
inline std::string default_config_text() {
    Config c;
    std::ostringstream out;
    out << "# mqrec configuration (key = value, '#' comments)\n";
    out << "seed = " << c.seed << "\n\n";
    out << "data.path = " << (c.data_path.empty() ? "interactions.tsv" : c.data_path) << "\n";
    out << "data.format = " << c.data_format << "\n";
    out << "data.max_history = " << c.data_max_history << "\n";
    out << "data.use_validation = " << (c.data_use_validation ? "true" : "false") << "\n";
    out << "data.unseen_fraction = " << c.data_unseen_fraction << "\n\n";
    out << "cf.method = " << c.cf_method << "\n";
    out << "cf.dim = " << c.cf_dim << "\n";
    out << "cf.layers = " << c.cf_layers << "\n";
    out << "cf.epochs = " << c.cf_epochs << "\n";
    out << "cf.batch = " << c.cf_batch << "\n";
    out << "cf.lr = " << c.cf_lr << "\n";
    out << "cf.l2 = " << c.cf_l2 << "\n";
    out << "cf.eval_every = " << c.cf_eval_every << "\n";
    out << "cf.patience = " << c.cf_patience << "\n\n";
    out << "tokenizer.k = " << c.tokenizer_k << "\n";
    out << "tokenizer.l = " << c.tokenizer_l << "\n";
    out << "tokenizer.code_dim = " << c.tokenizer_code_dim << "\n";
    out << "tokenizer.hidden = " << c.tokenizer_hidden << "\n";
    out << "tokenizer.rho = " << c.tokenizer_rho << "\n";
    out << "tokenizer.resample = " << c.tokenizer_resample << "\n";
    out << "tokenizer.beta = " << c.tokenizer_beta << "\n";
    out << "tokenizer.lr = " << c.tokenizer_lr << "\n";
    out << "tokenizer.weight_decay = " << c.tokenizer_weight_decay << "\n";
    out << "tokenizer.batch = " << c.tokenizer_batch << "\n";
    out << "tokenizer.epochs = " << c.tokenizer_epochs << "\n";
    out << "tokenizer.dead_code_interval = " << c.tokenizer_dead_code_interval << "\n";
    out << "tokenizer.eval_every = " << c.tokenizer_eval_every << "\n";
    out << "tokenizer.plateau_patience = " << c.tokenizer_plateau_patience << "\n";
    out << "tokenizer.min_epochs = " << c.tokenizer_min_epochs << "\n\n";
    out << "vocab.hash_buckets = " << c.vocab_hash_buckets << "\n";
    out << "vocab.max_prompt_len = " << c.vocab_max_prompt_len << "\n\n";
    out << "ranker.embed_dim = " << c.ranker_embed_dim << "\n";
    out << "ranker.proj_hidden = " << c.ranker_proj_hidden << "\n";
    out << "ranker.pool = " << c.ranker_pool << "\n";
    out << "ranker.margin = " << c.ranker_margin << "\n";
    out << "ranker.lr = " << c.ranker_lr << "\n";
    out << "ranker.weight_decay = " << c.ranker_weight_decay << "\n";
    out << "ranker.batch = " << c.ranker_batch << "\n";
    out << "ranker.epochs = " << c.ranker_epochs << "\n";
    out << "ranker.eval_every = " << c.ranker_eval_every << "\n";
    out << "ranker.patience = " << c.ranker_patience << "\n\n";
    out << "eval.cutoffs = 10,20,30\n";
    out << "eval.exclude_train = " << (c.eval_exclude_train ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace mqrec
