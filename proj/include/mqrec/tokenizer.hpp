#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mqrec/adamw.hpp"
#include "mqrec/codebook.hpp"
#include "mqrec/common.hpp"
#include "mqrec/grad.hpp"
#include "mqrec/matrix.hpp"
#include "mqrec/mlp.hpp"

namespace mqrec {

struct MaskConfig {
    enum class Resample { per_epoch, per_step };
    double rho = 0.2;
    Resample resample = Resample::per_epoch;
    std::uint64_t seed = 1;
};

/// An entity's discrete ID: one codeword index per sub-codebook.
struct TokenTuple {
    Side side = Side::item;
    std::vector<std::uint16_t> codes;

    bool operator==(const TokenTuple& o) const { return side == o.side && codes == o.codes; }
};

struct MqLossReport {
    double recon = 0.0;
    double cb = 0.0;
    double cm = 0.0;
    double total = 0.0;
};

/// kway is the K-parallel-encoder model; residual is the ablation variant
/// with a single encoder and K codebooks quantizing successive residuals.
enum class QuantizerKind { kway, residual };

struct MqTokenizerModel {
    QuantizerKind kind = QuantizerKind::kway;
    std::vector<Mlp> encoders;  // K for kway, 1 for residual
    Mlp decoder;
    Codebook codebook;
    MaskConfig mask;
    double beta = 0.25;

    std::size_t input_dim() const { return decoder.out_dim(); }

    std::uint64_t param_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](std::span<const double> v) {
            h = fnv1a64_bytes(v.data(), v.size() * sizeof(double), h);
        };
        for (const Mlp& e : encoders)
            for (int l = 0; l < 3; ++l) {
                mix(e.weight(l).flat());
                mix(std::span<const double>(e.bias(l)));
            }
        for (int l = 0; l < 3; ++l) {
            mix(decoder.weight(l).flat());
            mix(std::span<const double>(decoder.bias(l)));
        }
        mix(codebook.embeddings.flat());
        return h;
    }

    /// Snap every parameter to its float32 value. Serving artifacts are
    /// stored at 32 bits; doing this once after training makes tokenization
    /// identical before and after a save/load round trip.
    void round_to_f32() {
        auto snap = [](std::span<double> v) {
            for (double& x : v) x = double(float(x));
        };
        for (Mlp& e : encoders)
            e.for_each_param([&](std::span<double> p) { snap(p); });
        decoder.for_each_param([&](std::span<double> p) { snap(p); });
        snap(codebook.embeddings.flat());
    }
};

/// Element-wise Bernoulli masking: each entry is zeroed with probability rho.
/// No rescaling of the surviving entries.
inline std::vector<double> apply_mask(std::span<const double> v, const MaskConfig& cfg,
                                      std::mt19937_64& rng) {
    std::vector<double> out(v.begin(), v.end());
    if (cfg.rho <= 0.0) return out;
    std::bernoulli_distribution masked(std::min(cfg.rho, 1.0));
    for (double& x : out)
        if (masked(rng)) x = 0.0;
    return out;
}

/// Run the K encoders (one for the residual kind) on a single vector.
inline std::vector<std::vector<double>> encode_kway(const MqTokenizerModel& model,
                                                    std::span<const double> v) {
    Matrixd x(1, v.size());
    std::copy(v.begin(), v.end(), x.row(0).begin());
    std::vector<std::vector<double>> out;
    out.reserve(model.encoders.size());
    for (const Mlp& enc : model.encoders) {
        Matrixd y = enc.forward(x);
        out.emplace_back(y.row(0).begin(), y.row(0).end());
    }
    return out;
}

/// Inference-time tokenization: masking disabled, the raw collaborative
/// vector goes straight into the encoders.
inline TokenTuple tokenize_entity(const MqTokenizerModel& model, std::span<const double> v) {
    TokenTuple t;
    t.side = model.codebook.side;
    t.codes.resize(model.codebook.K);
    if (model.kind == QuantizerKind::kway) {
        const auto latents = encode_kway(model, v);
        for (std::size_t k = 0; k < model.codebook.K; ++k)
            t.codes[k] = quantize_nearest(model.codebook, k, latents[k]).code;
    } else {
        auto latents = encode_kway(model, v);
        std::vector<double> res = std::move(latents[0]);
        for (std::size_t k = 0; k < model.codebook.K; ++k) {
            const auto q = quantize_nearest(model.codebook, k, res);
            t.codes[k] = q.code;
            for (std::size_t j = 0; j < res.size(); ++j) res[j] -= q.embedding[j];
        }
    }
    return t;
}

inline std::vector<TokenTuple> tokenize_batch(const MqTokenizerModel& model, const Matrixd& rows) {
    std::vector<TokenTuple> out(rows.rows());
    if (model.kind == QuantizerKind::kway) {
        for (auto& t : out) {
            t.side = model.codebook.side;
            t.codes.resize(model.codebook.K);
        }
        for (std::size_t k = 0; k < model.codebook.K; ++k) {
            Matrixd latents = model.encoders[k].forward(rows);
            for (std::size_t b = 0; b < rows.rows(); ++b)
                out[b].codes[k] = quantize_nearest(model.codebook, k, latents.row(b)).code;
        }
    } else {
        for (std::size_t b = 0; b < rows.rows(); ++b) out[b] = tokenize_entity(model, rows.row(b));
    }
    return out;
}

/// Reconstruct an input vector from its discrete tokens: pool the selected
/// codeword embeddings (mean for kway, sum for residual) and decode.
inline std::vector<double> decode_from_tokens(const MqTokenizerModel& model, const TokenTuple& t) {
    const auto& cb = model.codebook;
    if (t.codes.size() != cb.K)
        throw std::invalid_argument("decode_from_tokens: token count mismatch");
    std::vector<double> pooled(cb.dim, 0.0);
    for (std::size_t k = 0; k < cb.K; ++k) {
        if (t.codes[k] >= cb.L)
            throw std::invalid_argument("decode_from_tokens: code index out of range");
        const auto c = cb.codeword(k, t.codes[k]);
        for (std::size_t j = 0; j < cb.dim; ++j) pooled[j] += c[j];
    }
    if (model.kind == QuantizerKind::kway) {
        const double inv_k = 1.0 / double(cb.K);
        for (double& x : pooled) x *= inv_k;
    }
    Matrixd x(1, cb.dim);
    std::copy(pooled.begin(), pooled.end(), x.row(0).begin());
    Matrixd y = model.decoder.forward(x);
    return {y.row(0).begin(), y.row(0).end()};
}

struct MqLossGradients {
    std::vector<MlpGrads> encoders;  // d(total)/d(encoder params)
    MlpGrads decoder;                // recon is the only loss reaching the decoder
    Matrixd codebook;                // cb is the only loss reaching the codebook
};

/// Extra gradient bookkeeping for verifying the routing semantics.
struct MqRoutingAudit {
    // the two sides of the straight-through edge, per sub-codebook
    std::vector<std::vector<double>> grad_at_selected_codeword;
    std::vector<std::vector<double>> grad_at_encoder_output;
    // what the stop-gradient operators let through (must be all zero)
    std::vector<MlpGrads> encoders_from_cb;
    Matrixd codebook_from_cm;
    // unweighted commitment gradient, the differentiable path to the encoders
    std::vector<MlpGrads> encoders_cm_only;
};

/// Single-sample losses and exact gradients for the kway model:
///   recon = ||v - r||^2        (straight-through across the quantization)
///   cb    = sum_k ||sg[a_k] - c_k||^2   (updates the codebook only)
///   cm    = sum_k ||a_k - sg[c_k]||^2   (updates the encoders only)
///   total = recon + cb + beta * cm
inline MqLossReport compute_mq_losses(const MqTokenizerModel& model, std::span<const double> v,
                                      std::span<const double> v_masked,
                                      MqLossGradients* grads = nullptr,
                                      MqRoutingAudit* audit = nullptr) {
    const auto& cb = model.codebook;
    const std::size_t K = cb.K, dc = cb.dim, d = v.size();
    if (model.kind != QuantizerKind::kway)
        throw std::invalid_argument("compute_mq_losses: kway model expected");
    if (v_masked.size() != d) throw std::invalid_argument("compute_mq_losses: dim mismatch");

    Matrixd x(1, d);
    std::copy(v_masked.begin(), v_masked.end(), x.row(0).begin());

    std::vector<Mlp::Trace> traces(K);
    std::vector<std::span<const double>> latents(K);
    std::vector<QuantizeResult> selected(K);
    Matrixd pooled(1, dc);
    for (std::size_t k = 0; k < K; ++k) {
        traces[k] = model.encoders[k].forward_trace(x);
        latents[k] = traces[k].y.row(0);
        selected[k] = quantize_nearest(cb, k, latents[k]);
        for (std::size_t j = 0; j < dc; ++j) pooled(0, j) += selected[k].embedding[j];
    }
    const double inv_k = 1.0 / double(K);
    for (double& p : pooled.flat()) p *= inv_k;

    auto dec_trace = model.decoder.forward_trace(pooled);
    const auto r = dec_trace.y.row(0);

    MqLossReport rep;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = v[j] - r[j];
        rep.recon += diff * diff;
    }
    for (std::size_t k = 0; k < K; ++k)
        rep.cb += squared_distance(latents[k], selected[k].embedding);
    rep.cm = rep.cb;  // same value, different gradient routing
    rep.total = rep.recon + rep.cb + model.beta * rep.cm;
    if (!std::isfinite(rep.total)) throw NumericError("compute_mq_losses: non-finite loss");
    if (grads == nullptr) return rep;

    grads->encoders.clear();
    grads->codebook = Matrixd(cb.K * cb.L, dc);

    Matrixd dr(1, d);
    for (std::size_t j = 0; j < d; ++j) dr(0, j) = 2.0 * (r[j] - v[j]);
    grads->decoder = model.decoder.zero_grads();
    auto dpooled = model.decoder.backward(dec_trace, dr, grads->decoder, true);

    if (audit != nullptr) {
        audit->grad_at_selected_codeword.assign(K, {});
        audit->grad_at_encoder_output.assign(K, {});
        audit->encoders_from_cb.clear();
        audit->encoders_cm_only.clear();
        audit->codebook_from_cm = Matrixd(cb.K * cb.L, dc);  // stays zero: sg[c_k]
    }

    for (std::size_t k = 0; k < K; ++k) {
        // recon reaches the encoder through the straight-through estimator:
        // the gradient at the selected codeword is copied to the encoder output
        std::vector<double> at_codeword(dc);
        for (std::size_t j = 0; j < dc; ++j) at_codeword[j] = (*dpooled)(0, j) * inv_k;
        std::vector<double> at_encoder = route_gradient(GradRoute::straight_through, at_codeword);

        // commitment: d/da ||a - sg[c]||^2 = 2 (a - c)
        std::vector<double> cm_up(dc);
        for (std::size_t j = 0; j < dc; ++j)
            cm_up[j] = 2.0 * (latents[k][j] - selected[k].embedding[j]);

        Matrixd da(1, dc);
        for (std::size_t j = 0; j < dc; ++j) da(0, j) = at_encoder[j] + model.beta * cm_up[j];
        MlpGrads eg = model.encoders[k].zero_grads();
        model.encoders[k].backward(traces[k], da, eg);
        grads->encoders.push_back(std::move(eg));

        // codebook: d/dc ||sg[a] - c||^2 = 2 (c - a), only the selected row
        const std::size_t row = k * cb.L + selected[k].code;
        for (std::size_t j = 0; j < dc; ++j)
            grads->codebook(row, j) =
                2.0 * (selected[k].embedding[j] - latents[k][j]);

        if (audit != nullptr) {
            audit->grad_at_selected_codeword[k] = at_codeword;
            audit->grad_at_encoder_output[k] = std::move(at_encoder);
            // cb reaches the encoder only through sg[a_k]: routed to zero
            std::vector<double> cb_up(dc);
            for (std::size_t j = 0; j < dc; ++j)
                cb_up[j] = 2.0 * (latents[k][j] - selected[k].embedding[j]);
            auto blocked = route_gradient(GradRoute::stop_gradient, cb_up);
            Matrixd dblocked(1, dc);
            std::copy(blocked.begin(), blocked.end(), dblocked.row(0).begin());
            MlpGrads zg = model.encoders[k].zero_grads();
            model.encoders[k].backward(traces[k], dblocked, zg);
            audit->encoders_from_cb.push_back(std::move(zg));

            Matrixd dcm(1, dc);
            std::copy(cm_up.begin(), cm_up.end(), dcm.row(0).begin());
            MlpGrads cg = model.encoders[k].zero_grads();
            model.encoders[k].backward(traces[k], dcm, cg);
            audit->encoders_cm_only.push_back(std::move(cg));
        }
    }
    return rep;
}

/// Mean reconstruction error ||v - r||^2 over the given rows, tokenizing
/// without masking. This is the quantity the trainer reports and stops on.
inline double recon_mse(const MqTokenizerModel& model, const Matrixd& rows) {
    double total = 0.0;
    const auto tuples = tokenize_batch(model, rows);
    for (std::size_t b = 0; b < rows.rows(); ++b) {
        const auto r = decode_from_tokens(model, tuples[b]);
        total += squared_distance(rows.row(b), std::span<const double>(r));
    }
    return rows.rows() == 0 ? 0.0 : total / double(rows.rows());
}

struct TokenizerTrainConfig {
    QuantizerKind kind = QuantizerKind::kway;
    std::size_t K = 3;
    std::size_t L = 256;
    std::size_t code_dim = 32;
    std::size_t hidden = 128;
    double rho = 0.2;
    MaskConfig::Resample resample = MaskConfig::Resample::per_epoch;
    double beta = 0.25;
    double lr = 1e-3;
    double weight_decay = 0.01;  // encoders/decoder only; codebook is undecayed
    std::size_t batch = 128;
    std::size_t epochs = 100;
    std::uint64_t seed = 1;
    std::size_t dead_code_interval = 10;  // epochs; 0 disables
    std::size_t eval_every = 5;
    std::size_t plateau_patience = 2;  // consecutive evals with < 0.1% improvement
    std::size_t min_epochs = 20;
};

struct MqTrainResult {
    MqTokenizerModel model;
    double initial_recon_mse = 0.0;
    double final_recon_mse = 0.0;
    std::size_t epochs_run = 0;
};

namespace detail {

// Ring buffer of recent encoder outputs, used to re-seed codewords that went
// a whole epoch without being selected.
struct CodeRing {
    Matrixd buf;
    std::size_t filled = 0;
    std::size_t next = 0;
    void init(std::size_t cap, std::size_t dim) { buf = Matrixd(cap, dim); }
    void push(std::span<const double> v) {
        std::copy(v.begin(), v.end(), buf.row(next).begin());
        next = (next + 1) % buf.rows();
        filled = std::min(filled + 1, buf.rows());
    }
};

inline void sample_codebook_init(Codebook& cb, std::size_t k, const Matrixd& outputs,
                                 std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, outputs.rows() - 1);
    for (std::size_t l = 0; l < cb.L; ++l) {
        const auto src = outputs.row(pick(rng));
        std::copy(src.begin(), src.end(), cb.codeword(k, l).begin());
    }
}

}  // namespace detail

/// Mini-batch AdamW training of a tokenizer over all vectors of one side of
/// the embedding table. Separate invocations build the user and the item
/// tokenizers. Deterministic for a fixed config.
inline MqTrainResult train_tokenizer(const Matrixd& vectors, Side side,
                                     const TokenizerTrainConfig& cfg) {
    if (vectors.rows() == 0) throw std::invalid_argument("train_tokenizer: empty table");
    if (cfg.L < 2) throw std::invalid_argument("train_tokenizer: L must be >= 2");
    const std::size_t N = vectors.rows(), d = vectors.cols();
    const std::size_t K = cfg.K, dc = cfg.code_dim;
    const std::size_t enc_count = cfg.kind == QuantizerKind::kway ? K : 1;

    MqTrainResult result;
    MqTokenizerModel& model = result.model;
    model.kind = cfg.kind;
    model.beta = cfg.beta;
    model.mask = {cfg.rho, cfg.resample, splitmix64(cfg.seed ^ 0x6d61736bULL)};
    for (std::size_t k = 0; k < enc_count; ++k)
        model.encoders.push_back(
            Mlp::make(d, cfg.hidden, cfg.hidden, dc, splitmix64(cfg.seed ^ (0xe1c0de00ULL + k))));
    model.decoder = Mlp::make(dc, cfg.hidden, cfg.hidden, d, splitmix64(cfg.seed ^ 0xdec0deULL));
    model.codebook = Codebook(K, cfg.L, dc, side);

    // codebook entries start from the empirical distribution of initial
    // encoder outputs rather than pure noise
    {
        auto rng = make_rng(cfg.seed, 0xcb1417);
        const std::size_t sample_n = std::min<std::size_t>(N, 1024);
        Matrixd sample(sample_n, d);
        for (std::size_t i = 0; i < sample_n; ++i) {
            const auto src = vectors.row((i * N) / sample_n);
            std::copy(src.begin(), src.end(), sample.row(i).begin());
        }
        if (cfg.kind == QuantizerKind::kway) {
            for (std::size_t k = 0; k < K; ++k) {
                Matrixd outputs = model.encoders[k].forward(sample);
                detail::sample_codebook_init(model.codebook, k, outputs, rng);
            }
        } else {
            Matrixd res = model.encoders[0].forward(sample);
            for (std::size_t k = 0; k < K; ++k) {
                detail::sample_codebook_init(model.codebook, k, res, rng);
                for (std::size_t b = 0; b < res.rows(); ++b) {
                    const auto q = quantize_nearest(model.codebook, k, res.row(b));
                    auto row = res.row(b);
                    for (std::size_t j = 0; j < dc; ++j) row[j] -= q.embedding[j];
                }
            }
        }
    }

    result.initial_recon_mse = recon_mse(model, vectors);

    AdamW net_opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    AdamW cb_opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    std::vector<std::size_t> enc_slots;
    for (std::size_t k = 0; k < enc_count; ++k)
        model.encoders[k].for_each_param(
            [&](std::span<double> p) { enc_slots.push_back(net_opt.register_param(p.size())); });
    std::vector<std::size_t> dec_slots;
    model.decoder.for_each_param(
        [&](std::span<double> p) { dec_slots.push_back(net_opt.register_param(p.size())); });
    const auto cb_slot = cb_opt.register_param(model.codebook.embeddings.size());

    auto mask_rng = make_rng(model.mask.seed, 0);
    auto shuffle_rng = make_rng(cfg.seed, 0x657033);
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) order[i] = i;

    std::vector<detail::CodeRing> rings(K);
    for (auto& r : rings) r.init(256, dc);
    std::vector<std::uint64_t> usage(K * cfg.L, 0);
    std::size_t reset_cursor = 0;

    Matrixd cb_grad(K * cfg.L, dc);
    double last_eval = result.initial_recon_mse;
    std::size_t plateau = 0;

    std::vector<double> epoch_mask;
    auto draw_masks = [&](std::size_t count) {
        epoch_mask.assign(count * d, 1.0);
        if (cfg.rho > 0.0) {
            std::bernoulli_distribution masked(std::min(cfg.rho, 1.0));
            for (double& m : epoch_mask)
                if (masked(mask_rng)) m = 0.0;
        }
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        ++result.epochs_run;
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        if (cfg.resample == MaskConfig::Resample::per_epoch) draw_masks(N);
        std::fill(usage.begin(), usage.end(), 0);

        for (std::size_t start = 0; start < N; start += cfg.batch) {
            const std::size_t B = std::min(N - start, cfg.batch);
            if (cfg.resample == MaskConfig::Resample::per_step) draw_masks(B);

            Matrixd X(B, d), V(B, d);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t row = order[start + b];
                const auto src = vectors.row(row);
                std::copy(src.begin(), src.end(), V.row(b).begin());
                const double* mrow =
                    cfg.resample == MaskConfig::Resample::per_epoch
                        ? epoch_mask.data() + row * d
                        : epoch_mask.data() + b * d;
                for (std::size_t j = 0; j < d; ++j) X(b, j) = src[j] * mrow[j];
            }

            // encode (and, for residual, walk the codebook levels)
            std::vector<Mlp::Trace> traces(enc_count);
            for (std::size_t e = 0; e < enc_count; ++e)
                traces[e] = model.encoders[e].forward_trace(X);

            std::vector<std::uint16_t> codes(B * K);
            Matrixd pooled(B, dc);
            std::vector<Matrixd> latents_per_k;   // kway: A_k; residual: r_{k-1}
            std::vector<Matrixd> selected_per_k;  // chosen codeword embeddings
            latents_per_k.reserve(K);
            selected_per_k.reserve(K);
            if (cfg.kind == QuantizerKind::kway) {
                for (std::size_t k = 0; k < K; ++k) {
                    latents_per_k.push_back(traces[k].y);
                    Matrixd sel(B, dc);
                    for (std::size_t b = 0; b < B; ++b) {
                        const auto q = quantize_nearest(model.codebook, k, traces[k].y.row(b));
                        codes[b * K + k] = q.code;
                        ++usage[k * cfg.L + q.code];
                        std::copy(q.embedding.begin(), q.embedding.end(), sel.row(b).begin());
                        rings[k].push(traces[k].y.row(b));
                    }
                    for (std::size_t i = 0; i < pooled.size(); ++i)
                        pooled.flat()[i] += sel.flat()[i];
                    selected_per_k.push_back(std::move(sel));
                }
                const double inv_k = 1.0 / double(K);
                for (double& p : pooled.flat()) p *= inv_k;
            } else {
                Matrixd res = traces[0].y;
                for (std::size_t k = 0; k < K; ++k) {
                    latents_per_k.push_back(res);
                    Matrixd sel(B, dc);
                    for (std::size_t b = 0; b < B; ++b) {
                        const auto q = quantize_nearest(model.codebook, k, res.row(b));
                        codes[b * K + k] = q.code;
                        ++usage[k * cfg.L + q.code];
                        std::copy(q.embedding.begin(), q.embedding.end(), sel.row(b).begin());
                        rings[k].push(res.row(b));
                        auto rrow = res.row(b);
                        for (std::size_t j = 0; j < dc; ++j) rrow[j] -= q.embedding[j];
                    }
                    for (std::size_t i = 0; i < pooled.size(); ++i)
                        pooled.flat()[i] += sel.flat()[i];
                    selected_per_k.push_back(std::move(sel));
                }
            }

            auto dec_trace = model.decoder.forward_trace(pooled);
            const Matrixd& R = dec_trace.y;

            const double inv_b = 1.0 / double(B);
            Matrixd dR(B, d);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < dR.size(); ++i) {
                const double diff = R.flat()[i] - V.flat()[i];
                batch_loss += diff * diff;
                dR.flat()[i] = 2.0 * diff * inv_b;
            }
            if (!std::isfinite(batch_loss))
                throw TrainingError("train_tokenizer: non-finite loss at epoch " +
                                    std::to_string(epoch));

            MlpGrads dec_g = model.decoder.zero_grads();
            auto dpooled = model.decoder.backward(dec_trace, dR, dec_g, true);

            cb_grad.fill(0.0);
            const double route_scale =
                cfg.kind == QuantizerKind::kway ? 1.0 / double(K) : 1.0;
            std::vector<MlpGrads> enc_g;
            for (std::size_t e = 0; e < enc_count; ++e)
                enc_g.push_back(model.encoders[e].zero_grads());

            Matrixd dA(B, dc);
            if (cfg.kind == QuantizerKind::kway) {
                for (std::size_t k = 0; k < K; ++k) {
                    const Matrixd& A = latents_per_k[k];
                    const Matrixd& C = selected_per_k[k];
                    for (std::size_t i = 0; i < dA.size(); ++i) {
                        const double diff = A.flat()[i] - C.flat()[i];
                        // straight-through recon + beta * commitment
                        dA.flat()[i] =
                            (*dpooled).flat()[i] * route_scale + model.beta * 2.0 * diff * inv_b;
                    }
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t row = k * cfg.L + codes[b * K + k];
                        double* g = cb_grad.data() + row * dc;
                        const double* a = A.data() + b * dc;
                        const double* c = C.data() + b * dc;
                        for (std::size_t j = 0; j < dc; ++j)
                            g[j] += 2.0 * (c[j] - a[j]) * inv_b;
                    }
                    model.encoders[k].backward(traces[k], dA, enc_g[k]);
                }
            } else {
                // dA = dpooled (straight through the whole residual stack)
                //      + 2*beta/B * sum_k r_k, where r_k = r_{k-1} - c_k
                dA = *dpooled;
                for (std::size_t k = 0; k < K; ++k) {
                    const Matrixd& Rk_in = latents_per_k[k];
                    const Matrixd& C = selected_per_k[k];
                    for (std::size_t i = 0; i < dA.size(); ++i) {
                        const double rk = Rk_in.flat()[i] - C.flat()[i];
                        dA.flat()[i] += model.beta * 2.0 * rk * inv_b;
                    }
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t row = k * cfg.L + codes[b * K + k];
                        double* g = cb_grad.data() + row * dc;
                        const double* rin = Rk_in.data() + b * dc;
                        const double* c = C.data() + b * dc;
                        for (std::size_t j = 0; j < dc; ++j)
                            g[j] += 2.0 * (c[j] - rin[j]) * inv_b;
                    }
                }
                model.encoders[0].backward(traces[0], dA, enc_g[0]);
            }

            net_opt.begin_step();
            std::size_t slot = 0;
            for (std::size_t e = 0; e < enc_count; ++e)
                model.encoders[e].for_each_param_with_grad(
                    enc_g[e], [&](std::span<double> p, std::span<double> g) {
                        net_opt.update(enc_slots[slot++], p, g);
                    });
            std::size_t dslot = 0;
            model.decoder.for_each_param_with_grad(
                dec_g, [&](std::span<double> p, std::span<double> g) {
                    net_opt.update(dec_slots[dslot++], p, g);
                });
            cb_opt.begin_step();
            cb_opt.update(cb_slot, model.codebook.embeddings.flat(), cb_grad.flat());
        }

        if (cfg.dead_code_interval > 0 && (epoch + 1) % cfg.dead_code_interval == 0) {
            for (std::size_t k = 0; k < K; ++k) {
                if (rings[k].filled == 0) continue;
                for (std::size_t l = 0; l < cfg.L; ++l) {
                    if (usage[k * cfg.L + l] != 0) continue;
                    const auto src = rings[k].buf.row(reset_cursor++ % rings[k].filled);
                    std::copy(src.begin(), src.end(), model.codebook.codeword(k, l).begin());
                }
            }
        }

        if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 &&
            epoch + 1 >= cfg.min_epochs) {
            const double mse = recon_mse(model, vectors);
            if (mse > last_eval * 0.999) {
                if (++plateau >= cfg.plateau_patience) {
                    last_eval = std::min(last_eval, mse);
                    break;
                }
            } else {
                plateau = 0;
            }
            last_eval = std::min(last_eval, mse);
        }
    }

    result.final_recon_mse = recon_mse(model, vectors);
    return result;
}

}  // namespace mqrec
