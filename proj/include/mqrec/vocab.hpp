#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqrec/codebook.hpp"
#include "mqrec/common.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

/// Hybrid token-id space: base lexicon words, hashed buckets for unknown
/// words, then the user and item OOV ID tokens <uK-L> / <vK-L>. The three
/// classes occupy disjoint, deterministic id ranges.
struct Vocabulary {
    std::vector<std::string> lexicon;  // id = position
    std::unordered_map<std::string, std::uint32_t> lexicon_index;
    std::uint32_t hash_buckets = 4096;
    std::uint32_t K = 3;
    std::uint32_t L = 256;

    std::uint32_t word_span() const { return std::uint32_t(lexicon.size()) + hash_buckets; }
    std::uint32_t user_oov_base() const { return word_span(); }
    std::uint32_t item_oov_base() const { return word_span() + K * L; }
    std::uint32_t size() const { return word_span() + 2 * K * L; }

    std::uint32_t user_token(std::uint32_t k, std::uint32_t code) const {
        return user_oov_base() + k * L + code;
    }
    std::uint32_t item_token(std::uint32_t k, std::uint32_t code) const {
        return item_oov_base() + k * L + code;
    }

    bool is_user_oov(std::uint32_t id) const {
        return id >= user_oov_base() && id < item_oov_base();
    }
    bool is_item_oov(std::uint32_t id) const { return id >= item_oov_base() && id < size(); }

    struct OovInfo {
        Side side;
        std::uint32_t k;
        std::uint32_t code;
    };
    OovInfo decode_oov(std::uint32_t id) const {
        if (is_user_oov(id)) {
            const std::uint32_t off = id - user_oov_base();
            return {Side::user, off / L, off % L};
        }
        if (is_item_oov(id)) {
            const std::uint32_t off = id - item_oov_base();
            return {Side::item, off / L, off % L};
        }
        throw std::invalid_argument("decode_oov: not an OOV token id");
    }

    /// Display form mirroring the ID-token notation, e.g. <u2-21>.
    std::string oov_text(std::uint32_t id) const {
        const auto info = decode_oov(id);
        return std::string("<") + (info.side == Side::user ? "u" : "v") +
               std::to_string(info.k + 1) + "-" + std::to_string(info.code) + ">";
    }
};

namespace detail {

inline bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'';
}

}  // namespace detail

/// Deterministic id assignment: lexicon words first (in the given order,
/// duplicates dropped), then the hash buckets, then user and item OOV tokens
/// in (k, code) row-major order.
inline Vocabulary build_vocabulary(std::uint32_t K, std::uint32_t L,
                                   const std::vector<std::string>& base_lexicon,
                                   std::uint32_t hash_buckets) {
    if (K < 1 || L < 1) throw std::invalid_argument("build_vocabulary: K and L must be >= 1");
    Vocabulary v;
    v.K = K;
    v.L = L;
    v.hash_buckets = hash_buckets;
    for (const auto& w : base_lexicon) {
        if (v.lexicon_index.count(w)) continue;
        v.lexicon_index.emplace(w, std::uint32_t(v.lexicon.size()));
        v.lexicon.push_back(w);
    }
    return v;
}

/// Lowercase, split on anything outside [a-z0-9_'], map known words through
/// the lexicon and everything else to a stable hash bucket.
inline std::vector<std::uint32_t> encode_text_tokens(const std::string& text,
                                                     const Vocabulary& vocab) {
    std::vector<std::uint32_t> out;
    std::string word;
    auto flush = [&]() {
        if (word.empty()) return;
        auto it = vocab.lexicon_index.find(word);
        if (it != vocab.lexicon_index.end())
            out.push_back(it->second);
        else
            out.push_back(std::uint32_t(vocab.lexicon.size()) +
                          std::uint32_t(fnv1a64(word) % vocab.hash_buckets));
        word.clear();
    };
    for (char c : text) {
        if (detail::word_char(c))
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else
            flush();
    }
    flush();
    return out;
}

}  // namespace mqrec
