#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"

namespace mqrec {
namespace synth {

struct ClusteredVectors {
    Matrixd vectors;
    std::vector<std::uint32_t> labels;
};

/// Gaussian cluster fixture: `clusters` centers drawn N(0,1), rows assigned
/// round-robin with isotropic noise.
inline ClusteredVectors make_clustered_vectors(std::size_t n, std::size_t d, std::size_t clusters,
                                               double noise, std::uint64_t seed) {
    ClusteredVectors out;
    out.vectors = Matrixd(n, d);
    out.labels.resize(n);
    auto rng = make_rng(seed, 0x636c7573);
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrixd centers(clusters, d);
    for (double& x : centers.flat()) x = unit(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t c = static_cast<std::uint32_t>(i % clusters);
        out.labels[i] = c;
        for (std::size_t j = 0; j < d; ++j)
            out.vectors(i, j) = centers(c, j) + noise * unit(rng);
    }
    return out;
}

struct InteractionRecord {
    std::uint32_t user;
    std::uint32_t item;
    std::uint32_t timestamp;
};

struct SynthCorpusConfig {
    std::size_t users = 1090;
    std::size_t items = 3646;
    std::size_t interactions = 37080;
    std::size_t clusters = 24;
    double in_cluster_prob = 0.85;
    std::size_t min_degree = 5;
    std::size_t max_degree = 220;
    std::uint64_t seed = 7;
};

struct SynthCorpus {
    std::vector<InteractionRecord> records;  // globally shuffled order
    std::vector<std::uint32_t> user_cluster;
    std::vector<std::uint32_t> item_cluster;
};

/// Clustered implicit-feedback corpus with exact user/item/interaction
/// counts: every user gets at least min_degree distinct items, every item
/// occurs at least once, degrees and popularity are power-law tilted, and
/// most of a user's items come from their own cluster.
inline SynthCorpus make_clustered_interactions(const SynthCorpusConfig& cfg) {
    if (cfg.users * cfg.min_degree > cfg.interactions)
        throw std::invalid_argument("make_clustered_interactions: too few interactions");
    auto rng = make_rng(cfg.seed, 0x636f7270);

    SynthCorpus out;
    out.user_cluster.resize(cfg.users);
    out.item_cluster.resize(cfg.items);
    for (std::size_t u = 0; u < cfg.users; ++u)
        out.user_cluster[u] = static_cast<std::uint32_t>(u % cfg.clusters);
    for (std::size_t i = 0; i < cfg.items; ++i)
        out.item_cluster[i] = static_cast<std::uint32_t>(i % cfg.clusters);
    std::shuffle(out.user_cluster.begin(), out.user_cluster.end(), rng);
    std::shuffle(out.item_cluster.begin(), out.item_cluster.end(), rng);

    std::vector<std::vector<std::uint32_t>> cluster_items(cfg.clusters);
    for (std::size_t i = 0; i < cfg.items; ++i) cluster_items[out.item_cluster[i]].push_back(i);

    // popularity weights: zipf within each cluster's member list
    std::vector<double> item_weight(cfg.items);
    for (auto& members : cluster_items)
        for (std::size_t r = 0; r < members.size(); ++r)
            item_weight[members[r]] = 1.0 / std::pow(double(r + 1), 0.7);
    std::discrete_distribution<std::size_t> global_pick(item_weight.begin(), item_weight.end());
    std::vector<std::discrete_distribution<std::size_t>> cluster_pick;
    for (auto& members : cluster_items) {
        std::vector<double> w;
        for (std::uint32_t it : members) w.push_back(item_weight[it]);
        cluster_pick.emplace_back(w.begin(), w.end());
    }

    // degrees: min_degree each, remainder spread with a power-law tilt
    std::vector<std::size_t> degree(cfg.users, cfg.min_degree);
    {
        std::vector<double> uw(cfg.users);
        for (std::size_t u = 0; u < cfg.users; ++u) uw[u] = 1.0 / std::pow(double(u + 1), 0.6);
        std::shuffle(uw.begin(), uw.end(), rng);
        std::discrete_distribution<std::size_t> pick_user(uw.begin(), uw.end());
        std::size_t remaining = cfg.interactions - cfg.users * cfg.min_degree;
        while (remaining > 0) {
            const std::size_t u = pick_user(rng);
            if (degree[u] >= std::min(cfg.max_degree, cfg.items)) continue;
            ++degree[u];
            --remaining;
        }
    }

    std::vector<std::vector<std::uint32_t>> baskets(cfg.users);
    std::vector<std::uint32_t> item_count(cfg.items, 0);
    std::bernoulli_distribution in_cluster(cfg.in_cluster_prob);
    for (std::size_t u = 0; u < cfg.users; ++u) {
        std::unordered_set<std::uint32_t> chosen;
        const auto& own = cluster_items[out.user_cluster[u]];
        std::size_t stall = 0;
        while (chosen.size() < degree[u]) {
            std::uint32_t item;
            if (!own.empty() && in_cluster(rng) && stall < 64)
                item = own[cluster_pick[out.user_cluster[u]](rng)];
            else
                item = static_cast<std::uint32_t>(global_pick(rng));
            if (chosen.insert(item).second) {
                baskets[u].push_back(item);
                ++item_count[item];
                stall = 0;
            } else {
                ++stall;
            }
        }
    }

    // coverage: swap never-picked items in for duplicated ones
    for (std::uint32_t missing = 0; missing < cfg.items; ++missing) {
        if (item_count[missing] > 0) continue;
        bool placed = false;
        for (std::size_t u = 0; u < cfg.users && !placed; ++u) {
            auto& basket = baskets[u];
            std::unordered_set<std::uint32_t> set(basket.begin(), basket.end());
            if (set.count(missing)) continue;
            for (auto& slot : basket) {
                if (item_count[slot] >= 2) {
                    --item_count[slot];
                    slot = missing;
                    ++item_count[missing];
                    placed = true;
                    break;
                }
            }
        }
        if (!placed)
            throw TrainingError("make_clustered_interactions: could not cover item universe");
    }

    for (std::size_t u = 0; u < cfg.users; ++u) {
        std::shuffle(baskets[u].begin(), baskets[u].end(), rng);
        for (std::size_t t = 0; t < baskets[u].size(); ++t)
            out.records.push_back({static_cast<std::uint32_t>(u), baskets[u][t],
                                   static_cast<std::uint32_t>(t + 1)});
    }
    std::shuffle(out.records.begin(), out.records.end(), rng);
    return out;
}

inline void write_tsv(const SynthCorpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_tsv: cannot open '" + path + "'");
    for (const auto& r : corpus.records)
        out << "u" << r.user << "\ti" << r.item << "\t1\t" << r.timestamp << "\n";
}

}  // namespace synth
}  // namespace mqrec
