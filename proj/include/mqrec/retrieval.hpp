#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/graph.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {

inline double cosine_score(std::span<const double> z, std::span<const double> q) {
    if (z.size() != q.size()) throw std::invalid_argument("cosine_score: dim mismatch");
    const double nz = norm2(z), nq = norm2(q);
    if (nz == 0.0 || nq == 0.0) throw NumericError("cosine_score: zero vector");
    return dot(z, q) / (nz * nq);
}

/// Exact cosine retrieval pool: unit-normalized item vectors at 32-bit
/// precision plus the dense-id bookkeeping to map rows back to items.
class RetrievalIndex {
public:
    RetrievalIndex() = default;

    /// Build from the item side of an embedding table.
    static RetrievalIndex from_table(const EmbeddingTable& table) {
        RetrievalIndex idx;
        idx.reserve(table.item_vectors.rows(), table.item_vectors.cols());
        for (std::size_t i = 0; i < table.item_vectors.rows(); ++i)
            idx.upsert(static_cast<std::uint32_t>(i), table.item_vectors.row(i));
        return idx;
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return cols_; }
    std::uint32_t id_at(std::size_t row) const { return ids_[row]; }
    const float* row_data(std::size_t row) const { return pool_.data() + row * cols_; }
    std::span<const float> row(std::size_t r) const { return {row_data(r), cols_}; }

    void reserve(std::size_t rows, std::size_t cols) {
        if (cols_ == 0) cols_ = cols;
        if (pool_.rows() < rows) grow_to(rows);
    }

    /// Insert or replace one item vector; rows are stored unit-normalized.
    void upsert(std::uint32_t item, std::span<const double> vec) {
        double norm = 0.0;
        for (double x : vec) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw std::invalid_argument("RetrievalIndex: zero item vector");
        if (cols_ == 0) cols_ = vec.size();
        if (vec.size() != cols_) throw std::invalid_argument("RetrievalIndex: dim mismatch");

        auto it = row_of_.find(item);
        std::size_t row;
        if (it == row_of_.end()) {
            row = ids_.size();
            if (row >= pool_.rows()) grow_to(std::max<std::size_t>(8, pool_.rows() * 2));
            ids_.push_back(item);
            row_of_.emplace(item, row);
        } else {
            row = it->second;
        }
        float* dst = pool_.data() + row * cols_;
        for (std::size_t j = 0; j < vec.size(); ++j)
            dst[j] = static_cast<float>(vec[j] / norm);
    }

private:
    void grow_to(std::size_t rows) {
        Matrixf grown(rows, cols_);
        std::copy(pool_.flat().begin(), pool_.flat().end(), grown.flat().begin());
        pool_ = std::move(grown);
    }

    Matrixf pool_;  // capacity rows; ids_.size() rows in use
    std::size_t cols_ = 0;
    std::vector<std::uint32_t> ids_;
    std::unordered_map<std::uint32_t, std::size_t> row_of_;
};

struct ScoredItem {
    std::uint32_t item = 0;
    float score = 0.0f;
};

/// Append or replace pool rows. Model parameters are not involved anywhere:
/// this is the whole unseen-item path.
inline RetrievalIndex update_item_pool(
    RetrievalIndex index, const std::vector<std::pair<std::uint32_t, std::vector<double>>>& items) {
    for (const auto& [id, vec] : items) index.upsert(id, vec);
    return index;
}

/// Exact top-K by cosine over the whole pool: single pass with a bounded
/// best-so-far heap, ties broken by ascending item id.
inline std::vector<ScoredItem> topk_retrieve(const RetrievalIndex& index,
                                             std::span<const double> z, std::size_t k,
                                             const std::unordered_set<std::uint32_t>* exclude =
                                                 nullptr) {
    if (k < 1) throw std::invalid_argument("topk_retrieve: k must be >= 1");
    if (index.size() == 0) throw std::invalid_argument("topk_retrieve: empty pool");
    if (z.size() != index.dim()) throw std::invalid_argument("topk_retrieve: dim mismatch");

    double norm = norm2(z);
    if (norm == 0.0) throw NumericError("topk_retrieve: zero query");
    std::vector<float> zn(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) zn[j] = static_cast<float>(z[j] / norm);

    // rows are unit vectors, so the dot product is the cosine
    auto better = [](const ScoredItem& a, const ScoredItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    };
    std::vector<ScoredItem> heap;  // worst element on top
    auto worse_on_top = [&](const ScoredItem& a, const ScoredItem& b) { return better(a, b); };

    const std::size_t dim = index.dim();
    for (std::size_t row = 0; row < index.size(); ++row) {
        const std::uint32_t id = index.id_at(row);
        if (exclude != nullptr && exclude->count(id)) continue;
        const float* v = index.row_data(row);
        float s = 0.0f;
        for (std::size_t j = 0; j < dim; ++j) s += zn[j] * v[j];
        const ScoredItem cand{id, s};
        if (heap.size() < k) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), worse_on_top);
        } else if (better(cand, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), worse_on_top);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), worse_on_top);
        }
    }
    std::sort_heap(heap.begin(), heap.end(), worse_on_top);
    return heap;
}

}  // namespace mqrec
