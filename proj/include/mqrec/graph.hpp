#pragma once

#include <cstdint>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/dataset.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {

/// Collaborative vectors p_i (users) and q_j (items): the vector database.
struct EmbeddingTable {
    Matrixd user_vectors;  // n x d
    Matrixd item_vectors;  // m x d
    std::size_t dim() const { return user_vectors.cols(); }
};

/// User-item interaction graph over the train split, CSR in both directions
/// with the symmetric normalization 1/sqrt(deg(u)*deg(v)) precomputed per edge.
struct BipartiteGraph {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::vector<std::size_t> user_offsets;   // n+1
    std::vector<std::uint32_t> user_adj;     // item ids
    std::vector<double> user_coeff;
    std::vector<std::size_t> item_offsets;   // m+1
    std::vector<std::uint32_t> item_adj;     // user ids
    std::vector<double> item_coeff;
    std::vector<std::uint32_t> user_degree;
    std::vector<std::uint32_t> item_degree;
    std::size_t num_edges = 0;
};

inline BipartiteGraph build_graph(const DatasetSplit& split) {
    BipartiteGraph g;
    g.num_users = split.num_users;
    g.num_items = split.num_items;
    g.user_degree.assign(g.num_users, 0);
    g.item_degree.assign(g.num_items, 0);
    for (std::size_t u = 0; u < split.num_users; ++u) {
        g.user_degree[u] = static_cast<std::uint32_t>(split.train[u].size());
        for (std::uint32_t it : split.train[u]) ++g.item_degree[it];
        g.num_edges += split.train[u].size();
    }
    if (g.num_edges == 0) throw std::invalid_argument("build_graph: empty train split");

    g.user_offsets.assign(g.num_users + 1, 0);
    for (std::size_t u = 0; u < g.num_users; ++u)
        g.user_offsets[u + 1] = g.user_offsets[u] + g.user_degree[u];
    g.user_adj.resize(g.num_edges);
    g.user_coeff.resize(g.num_edges);

    g.item_offsets.assign(g.num_items + 1, 0);
    for (std::size_t i = 0; i < g.num_items; ++i)
        g.item_offsets[i + 1] = g.item_offsets[i] + g.item_degree[i];
    g.item_adj.resize(g.num_edges);
    g.item_coeff.resize(g.num_edges);

    std::vector<std::size_t> item_fill(g.num_items, 0);
    std::size_t upos = 0;
    for (std::size_t u = 0; u < split.num_users; ++u) {
        for (std::uint32_t it : split.train[u]) {
            const double c = 1.0 / std::sqrt(double(g.user_degree[u]) * double(g.item_degree[it]));
            g.user_adj[upos] = it;
            g.user_coeff[upos] = c;
            ++upos;
            const std::size_t ipos = g.item_offsets[it] + item_fill[it]++;
            g.item_adj[ipos] = static_cast<std::uint32_t>(u);
            g.item_coeff[ipos] = c;
        }
    }
    return g;
}

namespace detail {

// one propagation hop: out_users = A~ * items, out_items = A~^T * users
inline void propagate_once(const BipartiteGraph& g, const Matrixd& users, const Matrixd& items,
                           Matrixd& out_users, Matrixd& out_items) {
    const std::size_t d = users.cols();
    out_users.fill(0.0);
    out_items.fill(0.0);
    for (std::size_t u = 0; u < g.num_users; ++u) {
        double* dst = out_users.data() + u * d;
        for (std::size_t e = g.user_offsets[u]; e < g.user_offsets[u + 1]; ++e) {
            const double c = g.user_coeff[e];
            const double* src = items.data() + std::size_t(g.user_adj[e]) * d;
            for (std::size_t k = 0; k < d; ++k) dst[k] += c * src[k];
        }
    }
    for (std::size_t i = 0; i < g.num_items; ++i) {
        double* dst = out_items.data() + i * d;
        for (std::size_t e = g.item_offsets[i]; e < g.item_offsets[i + 1]; ++e) {
            const double c = g.item_coeff[e];
            const double* src = users.data() + std::size_t(g.item_adj[e]) * d;
            for (std::size_t k = 0; k < d; ++k) dst[k] += c * src[k];
        }
    }
}

}  // namespace detail

/// LightGCN propagation: no transforms, no nonlinearity; the output is the
/// mean of the layer-0..layer-L embeddings. The normalized adjacency is
/// symmetric, so this function is also the exact backward map for gradients.
inline EmbeddingTable propagate_lightgcn(const BipartiteGraph& g, const EmbeddingTable& e0,
                                         std::size_t layers) {
    const std::size_t d = e0.dim();
    EmbeddingTable acc{e0.user_vectors, e0.item_vectors};
    Matrixd cur_u = e0.user_vectors, cur_i = e0.item_vectors;
    Matrixd next_u(g.num_users, d), next_i(g.num_items, d);
    for (std::size_t l = 0; l < layers; ++l) {
        detail::propagate_once(g, cur_u, cur_i, next_u, next_i);
        std::swap(cur_u, next_u);
        std::swap(cur_i, next_i);
        for (std::size_t k = 0; k < acc.user_vectors.size(); ++k)
            acc.user_vectors.flat()[k] += cur_u.flat()[k];
        for (std::size_t k = 0; k < acc.item_vectors.size(); ++k)
            acc.item_vectors.flat()[k] += cur_i.flat()[k];
    }
    const double scale = 1.0 / double(layers + 1);
    for (double& x : acc.user_vectors.flat()) x *= scale;
    for (double& x : acc.item_vectors.flat()) x *= scale;
    return acc;
}

}  // namespace mqrec
