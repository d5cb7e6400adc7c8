#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mqrec/common.hpp"

namespace mqrec {

enum class InteractionFormat { tsv, movielens_dat };

/// User/item universe with per-user interaction histories in time order.
/// Dense indices are contiguous and 0-based; raw external ids are kept for
/// round-tripping output.
struct InteractionDataset {
    std::vector<std::string> user_raw_ids;
    std::vector<std::string> item_raw_ids;
    std::unordered_map<std::string, std::uint32_t> user_index;
    std::unordered_map<std::string, std::uint32_t> item_index;
    // per user, item indices ordered by timestamp (file order when absent),
    // deduplicated keeping the earliest occurrence
    std::vector<std::vector<std::uint32_t>> history;

    std::size_t num_users() const { return user_raw_ids.size(); }
    std::size_t num_items() const { return item_raw_ids.size(); }
    std::size_t num_interactions() const {
        std::size_t n = 0;
        for (const auto& h : history) n += h.size();
        return n;
    }
};

struct DatasetSplit {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::vector<std::vector<std::uint32_t>> train;           // per user
    std::vector<std::optional<std::uint32_t>> validation;    // per user
    std::vector<std::optional<std::uint32_t>> test;          // per user
    std::vector<std::uint32_t> unseen_users;                 // sorted
    std::vector<std::uint32_t> unseen_items;                 // sorted

    bool is_unseen_user(std::uint32_t u) const {
        return std::binary_search(unseen_users.begin(), unseen_users.end(), u);
    }
    std::size_t train_size() const {
        std::size_t n = 0;
        for (const auto& t : train) n += t.size();
        return n;
    }
};

namespace detail {

struct RawRecord {
    std::string user;
    std::string item;
    bool has_timestamp = false;
    double timestamp = 0.0;
    std::size_t file_order = 0;
};

inline bool parse_number(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

inline std::vector<std::string> split_fields(const std::string& line, InteractionFormat fmt) {
    std::vector<std::string> fields;
    if (fmt == InteractionFormat::movielens_dat) {
        std::size_t start = 0;
        while (true) {
            const std::size_t pos = line.find("::", start);
            if (pos == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, pos - start));
            start = pos + 2;
        }
    } else {
        std::istringstream iss(line);
        std::string tok;
        while (iss >> tok) fields.push_back(tok);
    }
    return fields;
}

}  // namespace detail

/// Parse an interaction log. Records are `user item [rating] [timestamp]`
/// (whitespace separated) or MovieLens `user::item::rating::timestamp`.
/// Ratings are ignored; interactions are implicit feedback.
inline InteractionDataset load_interactions(const std::string& path, InteractionFormat fmt) {
    std::ifstream in(path);
    if (!in) throw IoError("load_interactions: cannot open '" + path + "'");

    std::vector<detail::RawRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, fmt);
        if (fields.size() < 2 || fields.size() > 4 || fields[0].empty() || fields[1].empty())
            throw ParseError("load_interactions: malformed line " + std::to_string(line_no));
        detail::RawRecord rec;
        rec.user = fields[0];
        rec.item = fields[1];
        rec.file_order = records.size();
        double value = 0.0;
        if (fields.size() >= 3 && !detail::parse_number(fields[2], value))
            throw ParseError("load_interactions: malformed line " + std::to_string(line_no));
        if (fields.size() == 4) {
            if (!detail::parse_number(fields[3], value))
                throw ParseError("load_interactions: malformed line " + std::to_string(line_no));
            rec.has_timestamp = true;
            rec.timestamp = value;
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw ParseError("load_interactions: no valid records in '" + path + "'");

    InteractionDataset ds;
    auto intern = [](const std::string& raw, std::unordered_map<std::string, std::uint32_t>& map,
                     std::vector<std::string>& names) {
        auto it = map.find(raw);
        if (it != map.end()) return it->second;
        const auto idx = static_cast<std::uint32_t>(names.size());
        map.emplace(raw, idx);
        names.push_back(raw);
        return idx;
    };

    std::vector<std::vector<std::size_t>> per_user_records;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto u = intern(records[i].user, ds.user_index, ds.user_raw_ids);
        intern(records[i].item, ds.item_index, ds.item_raw_ids);
        if (u >= per_user_records.size()) per_user_records.resize(u + 1);
        per_user_records[u].push_back(i);
    }

    ds.history.resize(ds.num_users());
    for (std::size_t u = 0; u < per_user_records.size(); ++u) {
        auto& recs = per_user_records[u];
        std::stable_sort(recs.begin(), recs.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = records[a];
            const auto& rb = records[b];
            if (ra.has_timestamp && rb.has_timestamp && ra.timestamp != rb.timestamp)
                return ra.timestamp < rb.timestamp;
            return ra.file_order < rb.file_order;
        });
        std::unordered_set<std::uint32_t> seen;
        for (std::size_t ri : recs) {
            const auto item = ds.item_index.at(records[ri].item);
            if (seen.insert(item).second) ds.history[u].push_back(item);
        }
    }
    return ds;
}

/// Leave-one-out: last interaction is the test item, second-to-last is the
/// validation item when requested and the history has at least 3 entries.
/// Users with fewer than 2 interactions stay entirely in train.
inline DatasetSplit leave_one_out_split(const InteractionDataset& ds, bool use_validation) {
    if (ds.num_users() == 0) throw std::invalid_argument("leave_one_out_split: empty dataset");
    DatasetSplit split;
    split.num_users = ds.num_users();
    split.num_items = ds.num_items();
    split.train.resize(split.num_users);
    split.validation.resize(split.num_users);
    split.test.resize(split.num_users);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        const auto& h = ds.history[u];
        if (h.size() < 2) {
            split.train[u] = h;
            continue;
        }
        std::size_t train_end = h.size() - 1;
        split.test[u] = h[train_end];
        if (use_validation && h.size() >= 3) {
            --train_end;
            split.validation[u] = h[train_end];
        }
        split.train[u].assign(h.begin(), h.begin() + train_end);
    }
    return split;
}

/// Mark the ceil(fraction*n) users with the fewest interactions as unseen
/// (ties broken by ascending user index). Their interactions are removed
/// from train entirely; only their last interaction is retained as a test
/// item for the cold-start protocol. Items that occur only in unseen
/// histories are flagged unseen.
inline DatasetSplit hold_out_unseen_users(const InteractionDataset& ds, double fraction,
                                          bool use_validation = false) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("hold_out_unseen_users: fraction must be in (0, 1)");
    const std::size_t n = ds.num_users();
    const auto n_unseen = static_cast<std::size_t>(std::ceil(fraction * double(n)));

    std::vector<std::uint32_t> order(n);
    for (std::size_t u = 0; u < n; ++u) order[u] = static_cast<std::uint32_t>(u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (ds.history[a].size() != ds.history[b].size())
            return ds.history[a].size() < ds.history[b].size();
        return a < b;
    });

    DatasetSplit split = leave_one_out_split(ds, use_validation);
    split.unseen_users.assign(order.begin(), order.begin() + n_unseen);
    std::sort(split.unseen_users.begin(), split.unseen_users.end());

    for (std::uint32_t u : split.unseen_users) {
        split.train[u].clear();
        split.validation[u].reset();
        // test entry stays: it is the held-out evaluation target
        if (!ds.history[u].empty() && !split.test[u].has_value())
            split.test[u] = ds.history[u].back();
    }

    std::vector<char> item_in_seen(ds.num_items(), 0);
    for (std::size_t u = 0; u < n; ++u) {
        if (split.is_unseen_user(static_cast<std::uint32_t>(u))) continue;
        for (std::uint32_t it : ds.history[u]) item_in_seen[it] = 1;
    }
    std::vector<char> item_in_unseen(ds.num_items(), 0);
    for (std::uint32_t u : split.unseen_users)
        for (std::uint32_t it : ds.history[u]) item_in_unseen[it] = 1;
    for (std::size_t i = 0; i < ds.num_items(); ++i)
        if (item_in_unseen[i] && !item_in_seen[i])
            split.unseen_items.push_back(static_cast<std::uint32_t>(i));
    return split;
}

/// Keep the max_len most-recent items, then apply a seeded uniform
/// permutation. Output order is deterministic for a fixed seed.
inline std::vector<std::uint32_t> truncate_and_shuffle_history(
    const std::vector<std::uint32_t>& history, std::size_t max_len, std::uint64_t seed) {
    if (max_len < 1) throw std::invalid_argument("truncate_and_shuffle_history: max_len >= 1");
    std::vector<std::uint32_t> out;
    if (history.size() > max_len)
        out.assign(history.end() - static_cast<std::ptrdiff_t>(max_len), history.end());
    else
        out = history;
    auto rng = make_rng(seed, 0x73687566);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

/// Full interacted set per user (train + validation + test), for negative
/// sampling and candidate exclusion.
inline std::vector<std::unordered_set<std::uint32_t>> full_histories(const DatasetSplit& split) {
    std::vector<std::unordered_set<std::uint32_t>> sets(split.num_users);
    for (std::size_t u = 0; u < split.num_users; ++u) {
        sets[u].insert(split.train[u].begin(), split.train[u].end());
        if (split.validation[u]) sets[u].insert(*split.validation[u]);
        if (split.test[u]) sets[u].insert(*split.test[u]);
    }
    return sets;
}

}  // namespace mqrec
