#pragma once

#include <chrono>
#include <cstdint>
#include <thread>
#include <vector>

#include "mqrec/metrics.hpp"
#include "mqrec/pipeline.hpp"

namespace mqrec {

namespace detail {

/// Static-partition parallel map with results gathered in index order, so
/// the reduction is deterministic regardless of thread count.
template <typename Fn>
void parallel_for_ordered(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t t = std::min(threads, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += t) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// Users a protocol evaluates: unseen_user takes exactly the held-out users,
/// the other protocols take the seen users; always restricted to users with
/// a test item.
inline std::vector<std::uint32_t> evaluation_users(const DatasetSplit& split,
                                                   Protocol protocol) {
    std::vector<std::uint32_t> users;
    for (std::size_t u = 0; u < split.num_users; ++u) {
        if (!split.test[u]) continue;
        const bool unseen = split.is_unseen_user(static_cast<std::uint32_t>(u));
        if ((protocol == Protocol::unseen_user) == unseen)
            users.push_back(static_cast<std::uint32_t>(u));
    }
    return users;
}

/// Per-user top-K scoring against the held-out test item, averaged over the
/// protocol's user set. `pipeline` needs rank_for_user(user, protocol, n,
/// seed); results are deterministic for a fixed seed and independent of the
/// thread count.
template <typename P>
MetricReport evaluate(const P& pipeline, const DatasetSplit& split, Protocol protocol,
                      const std::vector<std::size_t>& cutoffs, std::uint64_t seed,
                      std::size_t threads = 1) {
    const auto users = evaluation_users(split, protocol);
    if (users.empty()) throw std::invalid_argument("evaluate: no test users for protocol");
    std::size_t max_k = 0;
    for (auto k : cutoffs) max_k = std::max(max_k, k);

    MetricReport report;
    report.protocol = protocol;
    report.cutoffs = cutoffs;
    report.hr.assign(cutoffs.size(), 0.0);
    report.ndcg.assign(cutoffs.size(), 0.0);
    report.user_count = users.size();

    std::vector<std::vector<double>> per_user(users.size());
    detail::parallel_for_ordered(users.size(), threads, [&](std::size_t i) {
        const std::uint32_t u = users[i];
        const auto ranked = pipeline.rank_for_user(u, protocol, max_k, seed);
        std::vector<double> row(2 * cutoffs.size());
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
            row[2 * c] = hit_ratio_at_k(ranked, *split.test[u], cutoffs[c]);
            row[2 * c + 1] = ndcg_at_k(ranked, *split.test[u], cutoffs[c]);
        }
        per_user[i] = std::move(row);
    });
    for (const auto& row : per_user)
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
            report.hr[c] += row[2 * c];
            report.ndcg[c] += row[2 * c + 1];
        }
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        report.hr[c] /= double(users.size());
        report.ndcg[c] /= double(users.size());
    }
    return report;
}

/// Baseline scorer that bypasses the query encoder entirely: rank items by
/// the inner product of the collaborative vectors.
struct CfScorePipeline {
    const EmbeddingTable& table;
    const DatasetSplit& split;
    bool exclude_train = true;

    std::vector<std::uint32_t> rank_for_user(std::uint32_t user, Protocol, std::size_t n,
                                             std::uint64_t) const {
        const std::size_t m = table.item_vectors.rows(), d = table.dim();
        std::vector<std::pair<double, std::uint32_t>> scored;
        scored.reserve(m);
        const double* pu = table.user_vectors.data() + std::size_t(user) * d;
        std::vector<char> excluded(m, 0);
        if (exclude_train)
            for (std::uint32_t it : split.train[user]) excluded[it] = 1;
        for (std::size_t i = 0; i < m; ++i) {
            if (excluded[i]) continue;
            scored.emplace_back(dot({pu, d}, table.item_vectors.row(i)),
                                static_cast<std::uint32_t>(i));
        }
        const std::size_t keep = std::min(n, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        std::vector<std::uint32_t> out;
        out.reserve(keep);
        for (std::size_t i = 0; i < keep; ++i) out.push_back(scored[i].second);
        return out;
    }
};

struct BenchmarkReport {
    std::size_t user_count = 0;
    std::size_t pool_size = 0;
    std::size_t threads = 1;
    double encode_mean_ms = 0.0, encode_median_ms = 0.0, encode_p95_ms = 0.0;
    double retrieve_mean_ms = 0.0, retrieve_median_ms = 0.0, retrieve_p95_ms = 0.0;
    double total_mean_ms = 0.0;

    std::string to_kv() const {
        std::ostringstream out;
        out << "users = " << user_count << "\n";
        out << "pool_size = " << pool_size << "\n";
        out << "threads = " << threads << "\n";
        out << "encode_mean_ms = " << encode_mean_ms << "\n";
        out << "encode_median_ms = " << encode_median_ms << "\n";
        out << "encode_p95_ms = " << encode_p95_ms << "\n";
        out << "retrieve_mean_ms = " << retrieve_mean_ms << "\n";
        out << "retrieve_median_ms = " << retrieve_median_ms << "\n";
        out << "retrieve_p95_ms = " << retrieve_p95_ms << "\n";
        out << "total_mean_ms = " << total_mean_ms << "\n";
        return out.str();
    }
};

namespace detail {

inline void summarize(std::vector<double>& samples, double& mean, double& median, double& p95) {
    if (samples.empty()) {
        mean = median = p95 = 0.0;
        return;
    }
    double sum = 0.0;
    for (double s : samples) sum += s;
    mean = sum / double(samples.size());
    std::sort(samples.begin(), samples.end());
    median = samples[samples.size() / 2];
    p95 = samples[std::min(samples.size() - 1,
                           std::size_t(std::ceil(0.95 * double(samples.size())) - 1))];
}

}  // namespace detail

/// Wall-clock per-user inference timing over a warm pipeline, split into the
/// encode stage (render + encode + project) and the retrieval stage. Metric
/// computation stays outside the timed regions.
inline BenchmarkReport benchmark_inference(const TrainedPipeline& pipeline,
                                           const std::vector<std::uint32_t>& users,
                                           std::size_t topn, std::size_t threads,
                                           std::uint64_t seed) {
    BenchmarkReport report;
    report.user_count = users.size();
    report.pool_size = pipeline.index.size();
    report.threads = std::max<std::size_t>(1, threads);
    if (users.empty()) return report;

    // warm pass
    (void)pipeline.rank_for_user(users[0], Protocol::standard, topn, seed);

    std::vector<double> encode_ms(users.size()), retrieve_ms(users.size());
    detail::parallel_for_ordered(users.size(), report.threads, [&](std::size_t i) {
        using clock = std::chrono::steady_clock;
        const std::uint32_t u = users[i];
        const auto t0 = clock::now();
        const auto z = pipeline.query_vector(u, Protocol::standard, seed);
        const auto t1 = clock::now();
        volatile std::uint32_t sink = pipeline.retrieve(z, topn, u)[0].item;
        (void)sink;
        const auto t2 = clock::now();
        encode_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        retrieve_ms[i] = std::chrono::duration<double, std::milli>(t2 - t1).count();
    });
    report.total_mean_ms = 0.0;
    for (std::size_t i = 0; i < users.size(); ++i)
        report.total_mean_ms += encode_ms[i] + retrieve_ms[i];
    report.total_mean_ms /= double(users.size());
    detail::summarize(encode_ms, report.encode_mean_ms, report.encode_median_ms,
                      report.encode_p95_ms);
    detail::summarize(retrieve_ms, report.retrieve_mean_ms, report.retrieve_median_ms,
                      report.retrieve_p95_ms);
    return report;
}

}  // namespace mqrec
