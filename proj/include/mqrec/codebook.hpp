#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {

enum class Side { user, item };

/// K sub-codebooks of L codewords each, stored as one (K*L) x dim matrix;
/// sub-codebook k owns rows [k*L, (k+1)*L).
struct Codebook {
    std::size_t K = 0;
    std::size_t L = 0;
    std::size_t dim = 0;
    Side side = Side::item;
    Matrixd embeddings;

    Codebook() = default;
    Codebook(std::size_t k, std::size_t l, std::size_t d, Side s)
        : K(k), L(l), dim(d), side(s), embeddings(k * l, d) {}

    std::span<double> codeword(std::size_t k, std::size_t l) { return embeddings.row(k * L + l); }
    std::span<const double> codeword(std::size_t k, std::size_t l) const {
        return embeddings.row(k * L + l);
    }
};

struct QuantizeResult {
    std::uint16_t code = 0;
    std::span<const double> embedding;
};

/// Nearest codeword in sub-codebook k by squared euclidean distance, ties
/// broken by the lowest index.
inline QuantizeResult quantize_nearest(const Codebook& cb, std::size_t k,
                                       std::span<const double> a) {
    if (k >= cb.K) throw std::invalid_argument("quantize_nearest: sub-codebook index out of range");
    if (!all_finite(a)) throw NumericError("quantize_nearest: non-finite input");
    std::size_t best = 0;
    double best_dist = squared_distance(a, cb.codeword(k, 0));
    for (std::size_t l = 1; l < cb.L; ++l) {
        const double d = squared_distance(a, cb.codeword(k, l));
        if (d < best_dist) {
            best_dist = d;
            best = l;
        }
    }
    return {static_cast<std::uint16_t>(best), cb.codeword(k, best)};
}

}  // namespace mqrec
