#include <catch2/catch_amalgamated.hpp>

#include "mqrec/retrieval.hpp"

using namespace mqrec;

namespace {

RetrievalIndex random_index(std::size_t m, std::size_t d, std::uint64_t seed) {
    EmbeddingTable t;
    t.user_vectors = Matrixd(1, d);
    t.item_vectors = Matrixd(m, d);
    auto rng = make_rng(seed, 0);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : t.item_vectors.flat()) x = dist(rng);
    return RetrievalIndex::from_table(t);
}

// independent full-sort oracle using the same float scoring
std::vector<ScoredItem> oracle_topk(const RetrievalIndex& index, std::span<const double> z,
                                    std::size_t k,
                                    const std::unordered_set<std::uint32_t>* exclude) {
    const double norm = norm2(z);
    std::vector<float> zn(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) zn[j] = static_cast<float>(z[j] / norm);
    std::vector<ScoredItem> all;
    for (std::size_t row = 0; row < index.size(); ++row) {
        const std::uint32_t id = index.id_at(row);
        if (exclude && exclude->count(id)) continue;
        float s = 0.0f;
        const float* v = index.row_data(row);
        for (std::size_t j = 0; j < z.size(); ++j) s += zn[j] * v[j];
        all.push_back({id, s});
    }
    std::sort(all.begin(), all.end(), [](const ScoredItem& a, const ScoredItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace

TEST_CASE("cosine score basics") {
    std::vector<double> z{1.0, 2.0, -1.0};
    CHECK_THAT(cosine_score(z, z), Catch::Matchers::WithinAbs(1.0, 1e-12));

    std::vector<double> a{1.0, 0.0}, b{0.0, 3.0};
    CHECK(cosine_score(a, b) == 0.0);

    std::vector<double> scaled{2.5, 5.0, -2.5};
    CHECK_THAT(cosine_score(scaled, z), Catch::Matchers::WithinAbs(1.0, 1e-12));

    std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS_AS(cosine_score(zero, a), NumericError);
    CHECK_THROWS_AS(cosine_score(a, z), std::invalid_argument);
}

TEST_CASE("index rows are unit norm and k >= m returns a full ranking") {
    auto index = random_index(17, 8, 3);
    for (std::size_t r = 0; r < index.size(); ++r) {
        double n = 0.0;
        for (float x : index.row(r)) n += double(x) * double(x);
        CHECK_THAT(n, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    std::vector<double> z(8, 0.3);
    auto full = topk_retrieve(index, z, 100);
    CHECK(full.size() == 17);
}

TEST_CASE("topk matches the full-sort oracle on many random queries") {
    auto index = random_index(500, 16, 5);
    auto rng = make_rng(6, 6);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int q = 0; q < 300; ++q) {
        std::vector<double> z(16);
        for (double& x : z) x = dist(rng);
        auto got = topk_retrieve(index, z, 20);
        auto want = oracle_topk(index, z, 20, nullptr);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            REQUIRE(got[i].item == want[i].item);
            REQUIRE(got[i].score == want[i].score);
        }
    }
}

TEST_CASE("query equal to a pool row ranks that item first") {
    auto index = random_index(50, 8, 9);
    std::vector<double> z(8);
    for (std::size_t j = 0; j < 8; ++j) z[j] = double(index.row(31)[j]);
    auto top = topk_retrieve(index, z, 5);
    CHECK(top[0].item == 31);
    CHECK_THAT(double(top[0].score), Catch::Matchers::WithinAbs(1.0, 1e-5));
}

TEST_CASE("positive scaling of the query leaves the ranking unchanged") {
    auto index = random_index(80, 8, 12);
    std::vector<double> z(8);
    auto rng = make_rng(8, 2);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : z) x = dist(rng);
    std::vector<double> z2 = z;
    for (double& x : z2) x *= 37.5;
    auto a = topk_retrieve(index, z, 10);
    auto b = topk_retrieve(index, z2, 10);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].item == b[i].item);
}

TEST_CASE("ties break by ascending item id") {
    EmbeddingTable t;
    t.user_vectors = Matrixd(1, 2);
    t.item_vectors = Matrixd(4, 2);
    // rows 1 and 3 are identical; 0 and 2 identical
    t.item_vectors(0, 0) = 1.0;
    t.item_vectors(1, 1) = 1.0;
    t.item_vectors(2, 0) = 1.0;
    t.item_vectors(3, 1) = 1.0;
    auto index = RetrievalIndex::from_table(t);
    std::vector<double> z{0.0, 1.0};
    auto top = topk_retrieve(index, z, 4);
    CHECK(top[0].item == 1);
    CHECK(top[1].item == 3);
    CHECK(top[2].item == 0);
    CHECK(top[3].item == 2);
}

TEST_CASE("exclusion removes candidates") {
    auto index = random_index(30, 4, 21);
    std::vector<double> z{0.5, -0.2, 0.8, 0.1};
    auto unrestricted = topk_retrieve(index, z, 3);
    std::unordered_set<std::uint32_t> exclude{unrestricted[0].item};
    auto filtered = topk_retrieve(index, z, 3, &exclude);
    CHECK(filtered[0].item == unrestricted[1].item);
    for (const auto& si : filtered) CHECK(si.item != unrestricted[0].item);
}

TEST_CASE("update_item_pool appends, replaces, and validates") {
    auto index = random_index(10, 4, 30);
    REQUIRE(index.size() == 10);

    auto grown = update_item_pool(index, {{42, {1.0, 0.0, 0.0, 0.0}}});
    CHECK(grown.size() == 11);

    // replacing an existing id keeps the pool size constant
    auto replaced = update_item_pool(grown, {{42, {0.0, 1.0, 0.0, 0.0}}});
    CHECK(replaced.size() == 11);

    // an added item equal to the query direction is retrieved at rank 1
    std::vector<double> z{0.0, 2.0, 0.0, 0.0};
    auto top = topk_retrieve(replaced, z, 1);
    CHECK(top[0].item == 42);

    CHECK_THROWS_AS(update_item_pool(replaced, {{7, {0.0, 0.0, 0.0, 0.0}}}),
                    std::invalid_argument);

    RetrievalIndex empty;
    CHECK_THROWS_AS(topk_retrieve(empty, z, 1), std::invalid_argument);
    CHECK_THROWS_AS(topk_retrieve(replaced, z, 0), std::invalid_argument);
}
