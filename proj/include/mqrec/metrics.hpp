#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mqrec/common.hpp"

namespace mqrec {

enum class Protocol { standard, unseen_prompt, unseen_user, user_id_only };

inline const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::standard: return "standard";
        case Protocol::unseen_prompt: return "unseen_prompt";
        case Protocol::unseen_user: return "unseen_user";
        case Protocol::user_id_only: return "user_id_only";
    }
    return "?";
}

inline int hit_ratio_at_k(const std::vector<std::uint32_t>& ranked, std::uint32_t truth,
                          std::size_t k) {
    if (k < 1) throw std::invalid_argument("hit_ratio_at_k: k must be >= 1");
    const std::size_t limit = std::min(k, ranked.size());
    for (std::size_t i = 0; i < limit; ++i)
        if (ranked[i] == truth) return 1;
    return 0;
}

/// Single-relevant-item NDCG: 1/log2(rank+1) when the truth sits within the
/// first k positions (ideal DCG is 1), otherwise 0.
inline double ndcg_at_k(const std::vector<std::uint32_t>& ranked, std::uint32_t truth,
                        std::size_t k) {
    if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
    const std::size_t limit = std::min(k, ranked.size());
    for (std::size_t i = 0; i < limit; ++i)
        if (ranked[i] == truth) return 1.0 / std::log2(double(i + 2));
    return 0.0;
}

struct MetricReport {
    Protocol protocol = Protocol::standard;
    std::vector<std::size_t> cutoffs;
    std::vector<double> hr;    // parallel to cutoffs
    std::vector<double> ndcg;  // parallel to cutoffs
    std::size_t user_count = 0;

    double hr_at(std::size_t k) const {
        for (std::size_t i = 0; i < cutoffs.size(); ++i)
            if (cutoffs[i] == k) return hr[i];
        throw std::invalid_argument("hr_at: cutoff not reported");
    }
    double ndcg_at(std::size_t k) const {
        for (std::size_t i = 0; i < cutoffs.size(); ++i)
            if (cutoffs[i] == k) return ndcg[i];
        throw std::invalid_argument("ndcg_at: cutoff not reported");
    }

    /// Machine-readable key-value lines, e.g. "hr@20 = 0.0661".
    std::string to_kv() const {
        std::ostringstream out;
        out << "protocol = " << protocol_name(protocol) << "\n";
        out << "users = " << user_count << "\n";
        for (std::size_t i = 0; i < cutoffs.size(); ++i) {
            out << "hr@" << cutoffs[i] << " = " << hr[i] << "\n";
            out << "ndcg@" << cutoffs[i] << " = " << ndcg[i] << "\n";
        }
        return out.str();
    }

    std::string to_table() const {
        std::ostringstream out;
        out << "protocol: " << protocol_name(protocol) << " (" << user_count << " users)\n";
        out << "  K       HR         NDCG\n";
        for (std::size_t i = 0; i < cutoffs.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "  %-6zu  %.6f   %.6f\n", cutoffs[i], hr[i],
                          ndcg[i]);
            out << buf;
        }
        return out.str();
    }
};

}  // namespace mqrec
