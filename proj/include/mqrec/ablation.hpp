#pragma once

#include <cstdint>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

/// Quantizer substitutions for the ablation study: a 1-way variant of the
/// tokenizer, residual quantization, and plain k-means over sub-spaces.
enum class AblationMode { vq_single, rq_residual, kmeans };

struct AblationResult {
    std::vector<TokenTuple> tokens;
    double recon_mse = 0.0;
    // populated for vq_single / rq_residual
    std::optional<MqTokenizerModel> model;
    // populated for kmeans: K sub-space centroid tables
    std::optional<Codebook> centroids;
};

namespace detail {

struct KmeansSubspace {
    Matrixd centroids;                    // L x subdim
    std::vector<std::uint16_t> assign;    // per row
};

/// Lloyd's algorithm on a column slice of the data. Centroids start at L
/// distinct data rows; a centroid that loses all members is re-seeded to the
/// point farthest from its assigned centroid.
inline KmeansSubspace lloyd_kmeans(const Matrixd& data, std::size_t col0, std::size_t subdim,
                                   std::size_t L, std::size_t iters, std::uint64_t seed) {
    const std::size_t N = data.rows();
    if (L > N) throw std::invalid_argument("lloyd_kmeans: more centroids than points");
    KmeansSubspace out;
    out.centroids = Matrixd(L, subdim);
    out.assign.assign(N, 0);

    std::vector<std::size_t> init(N);
    for (std::size_t i = 0; i < N; ++i) init[i] = i;
    auto rng = make_rng(seed, 0x6b6d);
    std::shuffle(init.begin(), init.end(), rng);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t j = 0; j < subdim; ++j)
            out.centroids(l, j) = data(init[l], col0 + j);

    auto dist2 = [&](std::size_t row, std::size_t l) {
        double s = 0.0;
        for (std::size_t j = 0; j < subdim; ++j) {
            const double diff = data(row, col0 + j) - out.centroids(l, j);
            s += diff * diff;
        }
        return s;
    };

    auto assign_all = [&]() {
        for (std::size_t i = 0; i < N; ++i) {
            std::size_t best = 0;
            double bd = dist2(i, 0);
            for (std::size_t l = 1; l < L; ++l) {
                const double dd = dist2(i, l);
                if (dd < bd) {
                    bd = dd;
                    best = l;
                }
            }
            out.assign[i] = static_cast<std::uint16_t>(best);
        }
    };

    assign_all();
    for (std::size_t it = 0; it < iters; ++it) {
        Matrixd sums(L, subdim);
        std::vector<std::size_t> counts(L, 0);
        for (std::size_t i = 0; i < N; ++i) {
            ++counts[out.assign[i]];
            for (std::size_t j = 0; j < subdim; ++j)
                sums(out.assign[i], j) += data(i, col0 + j);
        }
        for (std::size_t l = 0; l < L; ++l) {
            if (counts[l] == 0) continue;
            for (std::size_t j = 0; j < subdim; ++j)
                out.centroids(l, j) = sums(l, j) / double(counts[l]);
        }
        // empty clusters: re-seed at the point farthest from its centroid
        for (std::size_t l = 0; l < L; ++l) {
            if (counts[l] != 0) continue;
            std::size_t far_row = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double dd = dist2(i, out.assign[i]);
                if (dd > far_d) {
                    far_d = dd;
                    far_row = i;
                }
            }
            for (std::size_t j = 0; j < subdim; ++j)
                out.centroids(l, j) = data(far_row, col0 + j);
        }
        assign_all();
    }
    return out;
}

}  // namespace detail

/// Tokenize a whole table with one of the substitution quantizers.
/// vq_single is this artifact's tokenizer with K=1 and masking off;
/// rq_residual stacks K codebooks over successive residuals (and collapses
/// to vq_single when K=1); kmeans runs Lloyd per contiguous sub-space with
/// the assignment as the code.
inline AblationResult ablation_quantize(AblationMode mode, const Matrixd& vectors, Side side,
                                        TokenizerTrainConfig cfg,
                                        std::size_t kmeans_iters = 25) {
    AblationResult out;
    switch (mode) {
        case AblationMode::vq_single: {
            cfg.kind = QuantizerKind::kway;
            cfg.K = 1;
            cfg.rho = 0.0;
            auto r = train_tokenizer(vectors, side, cfg);
            out.tokens = tokenize_batch(r.model, vectors);
            out.recon_mse = r.final_recon_mse;
            out.model = std::move(r.model);
            return out;
        }
        case AblationMode::rq_residual: {
            cfg.kind = QuantizerKind::residual;
            cfg.rho = 0.0;
            auto r = train_tokenizer(vectors, side, cfg);
            out.tokens = tokenize_batch(r.model, vectors);
            out.recon_mse = r.final_recon_mse;
            out.model = std::move(r.model);
            return out;
        }
        case AblationMode::kmeans: {
            const std::size_t d = vectors.cols(), K = cfg.K, N = vectors.rows();
            Codebook centroids(K, cfg.L, (d + K - 1) / K, side);
            centroids.embeddings.fill(0.0);
            out.tokens.assign(N, TokenTuple{side, std::vector<std::uint16_t>(K, 0)});
            double err = 0.0;
            std::size_t col0 = 0;
            for (std::size_t k = 0; k < K; ++k) {
                const std::size_t subdim = d / K + (k < d % K ? 1 : 0);
                auto sub = detail::lloyd_kmeans(vectors, col0, subdim, cfg.L, kmeans_iters,
                                                splitmix64(cfg.seed ^ (0x6b00 + k)));
                for (std::size_t i = 0; i < N; ++i) {
                    out.tokens[i].codes[k] = sub.assign[i];
                    for (std::size_t j = 0; j < subdim; ++j) {
                        const double diff =
                            vectors(i, col0 + j) - sub.centroids(sub.assign[i], j);
                        err += diff * diff;
                    }
                }
                for (std::size_t l = 0; l < cfg.L; ++l)
                    for (std::size_t j = 0; j < subdim; ++j)
                        centroids.codeword(k, l)[j] = sub.centroids(l, j);
                col0 += subdim;
            }
            out.recon_mse = err / double(N);
            out.centroids = std::move(centroids);
            return out;
        }
    }
    throw std::invalid_argument("ablation_quantize: unknown mode");
}

}  // namespace mqrec
