#pragma once

#include <cstdint>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"
#include "mqrec/mlp.hpp"
#include "mqrec/prompts.hpp"

namespace mqrec {

enum class PoolMode { mean_pool, attention_pool };

/// Compact stand-in for the language-model query encoder: a trainable token
/// embedding table over the full hybrid vocabulary, a pooled sequence
/// encoder producing the hidden state h, and a 3-layer projection to the
/// collaborative space.
struct QueryEncoderModel {
    Matrixd token_embeddings;  // vocab_size x d_e
    PoolMode mode = PoolMode::mean_pool;
    Matrixd wq, wk, wv;  // single-head attention, attention_pool only
    Mlp projection;      // d_e -> d

    std::size_t embed_dim() const { return token_embeddings.cols(); }
    std::size_t output_dim() const { return projection.out_dim(); }

    std::uint64_t param_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](std::span<const double> v) {
            h = fnv1a64_bytes(v.data(), v.size() * sizeof(double), h);
        };
        mix(token_embeddings.flat());
        mix(wq.flat());
        mix(wk.flat());
        mix(wv.flat());
        for (int l = 0; l < 3; ++l) {
            mix(projection.weight(l).flat());
            mix(std::span<const double>(projection.bias(l)));
        }
        return h;
    }

    void round_to_f32() {
        auto snap = [](std::span<double> v) {
            for (double& x : v) x = double(float(x));
        };
        snap(token_embeddings.flat());
        snap(wq.flat());
        snap(wk.flat());
        snap(wv.flat());
        projection.for_each_param([&](std::span<double> p) { snap(p); });
    }
};

inline QueryEncoderModel make_query_encoder(std::size_t vocab_size, std::size_t d_e,
                                            std::size_t d_out, std::size_t proj_hidden,
                                            PoolMode mode, std::uint64_t seed) {
    QueryEncoderModel m;
    m.mode = mode;
    m.token_embeddings = Matrixd(vocab_size, d_e);
    auto rng = make_rng(seed, 0x656d62);
    std::normal_distribution<double> dist(0.0, 0.02);
    for (double& x : m.token_embeddings.flat()) x = dist(rng);
    m.projection = Mlp::make(d_e, proj_hidden, proj_hidden, d_out, splitmix64(seed ^ 0x70726f6aULL));
    m.wq = Matrixd(d_e, d_e);
    m.wk = Matrixd(d_e, d_e);
    m.wv = Matrixd(d_e, d_e);
    const double bound = std::sqrt(6.0 / double(d_e + d_e));
    std::uniform_real_distribution<double> g(-bound, bound);
    for (double& x : m.wq.flat()) x = g(rng);
    for (double& x : m.wk.flat()) x = g(rng);
    for (double& x : m.wv.flat()) x = g(rng);
    return m;
}

struct EncodeTrace {
    std::vector<std::uint32_t> token_ids;
    Matrixd x;  // T x d_e gathered embeddings
    // attention intermediates
    Matrixd q, k, v, attn, out;
};

namespace detail {

inline void softmax_rows(Matrixd& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        double mx = row[0];
        for (double x : row) mx = std::max(mx, x);
        double sum = 0.0;
        for (double& x : row) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (double& x : row) x /= sum;
    }
}

}  // namespace detail

/// Pool a rendered prompt into a hidden state. mean_pool averages token
/// embeddings (order-free by construction); attention_pool applies one
/// self-attention layer first and then averages.
inline std::vector<double> encode_query(const QueryEncoderModel& model, const RenderedPrompt& p,
                                        EncodeTrace* trace = nullptr) {
    const std::size_t T = p.token_ids.size(), d = model.embed_dim();
    if (T == 0) throw std::invalid_argument("encode_query: empty prompt");
    Matrixd x(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        const std::uint32_t id = p.token_ids[t];
        if (id >= model.token_embeddings.rows())
            throw std::invalid_argument("encode_query: token id outside vocabulary");
        const auto src = model.token_embeddings.row(id);
        std::copy(src.begin(), src.end(), x.row(t).begin());
    }

    std::vector<double> h(d, 0.0);
    const double inv_t = 1.0 / double(T);
    if (model.mode == PoolMode::mean_pool) {
        // summing in sorted-id order makes the mean exactly permutation
        // invariant, not just up to rounding
        std::vector<std::uint32_t> sorted_ids(p.token_ids.begin(), p.token_ids.end());
        std::sort(sorted_ids.begin(), sorted_ids.end());
        for (std::uint32_t id : sorted_ids) {
            const auto src = model.token_embeddings.row(id);
            for (std::size_t j = 0; j < d; ++j) h[j] += src[j];
        }
        for (std::size_t j = 0; j < d; ++j) h[j] *= inv_t;
        if (trace != nullptr) {
            trace->token_ids = p.token_ids;
            trace->x = std::move(x);
        }
        return h;
    }

    Matrixd q(T, d), k(T, d), v(T, d);
    matmul_add(x, model.wq, q);
    matmul_add(x, model.wk, k);
    matmul_add(x, model.wv, v);
    Matrixd score(T, T);
    matmul_a_bt_add(q, k, score);
    const double scale = 1.0 / std::sqrt(double(d));
    for (double& s : score.flat()) s *= scale;
    detail::softmax_rows(score);
    Matrixd out(T, d);
    matmul_add(score, v, out);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) h[j] += out(t, j) * inv_t;

    if (trace != nullptr) {
        trace->token_ids = p.token_ids;
        trace->x = std::move(x);
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->attn = std::move(score);
        trace->out = std::move(out);
    }
    return h;
}

struct EncoderGrads {
    Matrixd token_embeddings;  // dense vocab_size x d_e accumulator
    Matrixd wq, wk, wv;

    void init_like(const QueryEncoderModel& m) {
        token_embeddings = Matrixd(m.token_embeddings.rows(), m.token_embeddings.cols());
        wq = Matrixd(m.wq.rows(), m.wq.cols());
        wk = Matrixd(m.wk.rows(), m.wk.cols());
        wv = Matrixd(m.wv.rows(), m.wv.cols());
    }
};

/// Backpropagate dL/dh through the pooling (and attention, if enabled) into
/// the token-embedding rows that the prompt touched.
inline void encode_query_backward(const QueryEncoderModel& model, const EncodeTrace& trace,
                                  std::span<const double> dh, EncoderGrads& grads) {
    const std::size_t T = trace.token_ids.size(), d = model.embed_dim();
    const double inv_t = 1.0 / double(T);

    Matrixd dx(T, d);
    if (model.mode == PoolMode::mean_pool) {
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) dx(t, j) = dh[j] * inv_t;
    } else {
        Matrixd dout(T, d);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < d; ++j) dout(t, j) = dh[j] * inv_t;

        // out = attn * v
        Matrixd dattn(T, T), dv(T, d);
        matmul_a_bt_add(dout, trace.v, dattn);
        matmul_at_b_add(trace.attn, dout, dv);

        // softmax backward, row-wise
        Matrixd dscore(T, T);
        for (std::size_t i = 0; i < T; ++i) {
            double dotv = 0.0;
            for (std::size_t j = 0; j < T; ++j) dotv += dattn(i, j) * trace.attn(i, j);
            for (std::size_t j = 0; j < T; ++j)
                dscore(i, j) = trace.attn(i, j) * (dattn(i, j) - dotv);
        }
        const double scale = 1.0 / std::sqrt(double(d));
        for (double& s : dscore.flat()) s *= scale;

        // score = q * k^T
        Matrixd dq(T, d), dk(T, d);
        matmul_add(dscore, trace.k, dq);
        matmul_at_b_add(dscore, trace.q, dk);

        matmul_at_b_add(trace.x, dq, grads.wq);
        matmul_at_b_add(trace.x, dk, grads.wk);
        matmul_at_b_add(trace.x, dv, grads.wv);
        matmul_a_bt_add(dq, model.wq, dx);
        matmul_a_bt_add(dk, model.wk, dx);
        matmul_a_bt_add(dv, model.wv, dx);
    }

    for (std::size_t t = 0; t < T; ++t) {
        double* dst = grads.token_embeddings.data() +
                      std::size_t(trace.token_ids[t]) * d;
        const double* src = dx.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
}

/// z = Proj(h) through the 3-layer projection MLP.
inline std::vector<double> project_query(const QueryEncoderModel& model,
                                         std::span<const double> h) {
    Matrixd x(1, h.size());
    std::copy(h.begin(), h.end(), x.row(0).begin());
    Matrixd y = model.projection.forward(x);
    return {y.row(0).begin(), y.row(0).end()};
}

}  // namespace mqrec
