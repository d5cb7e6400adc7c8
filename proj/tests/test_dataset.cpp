#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "mqrec/dataset.hpp"
#include "mqrec/synth.hpp"

using namespace mqrec;

namespace {

std::string temp_file(const std::string& name) {
    return std::string("mqrec_test_") + name;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

InteractionDataset tiny_dataset(const std::vector<std::vector<std::uint32_t>>& histories,
                                std::size_t items) {
    InteractionDataset ds;
    ds.history = histories;
    for (std::size_t u = 0; u < histories.size(); ++u) {
        ds.user_raw_ids.push_back("u" + std::to_string(u));
        ds.user_index.emplace(ds.user_raw_ids.back(), static_cast<std::uint32_t>(u));
    }
    for (std::size_t i = 0; i < items; ++i) {
        ds.item_raw_ids.push_back("i" + std::to_string(i));
        ds.item_index.emplace(ds.item_raw_ids.back(), static_cast<std::uint32_t>(i));
    }
    return ds;
}

}  // namespace

TEST_CASE("load_interactions counts users, items, interactions") {
    const auto path = temp_file("tiny.tsv");
    write_file(path, "u1 i1\nu1 i2\nu2 i1\n");
    auto ds = load_interactions(path, InteractionFormat::tsv);
    CHECK(ds.num_users() == 2);
    CHECK(ds.num_items() == 2);
    CHECK(ds.num_interactions() == 3);
    std::remove(path.c_str());
}

TEST_CASE("load_interactions orders by timestamp and dedups keeping earliest") {
    const auto path = temp_file("ts.tsv");
    write_file(path, "a x 5 30\na y 4 10\na x 3 20\nb y 1 1\n");
    auto ds = load_interactions(path, InteractionFormat::tsv);
    // user a: y at t=10, x first at t=20 (duplicate at t=30 dropped)
    const auto a = ds.user_index.at("a");
    REQUIRE(ds.history[a].size() == 2);
    CHECK(ds.item_raw_ids[ds.history[a][0]] == "y");
    CHECK(ds.item_raw_ids[ds.history[a][1]] == "x");
    std::remove(path.c_str());
}

TEST_CASE("load_interactions parses movielens separators") {
    const auto path = temp_file("ml.dat");
    write_file(path, "1::10::5::978300760\n1::20::3::978300761\n2::10::4::978300762\n");
    auto ds = load_interactions(path, InteractionFormat::movielens_dat);
    CHECK(ds.num_users() == 2);
    CHECK(ds.num_items() == 2);
    CHECK(ds.num_interactions() == 3);
    std::remove(path.c_str());
}

TEST_CASE("load_interactions error paths") {
    CHECK_THROWS_AS(load_interactions("does_not_exist.tsv", InteractionFormat::tsv), IoError);

    const auto empty = temp_file("empty.tsv");
    write_file(empty, "");
    CHECK_THROWS_AS(load_interactions(empty, InteractionFormat::tsv), ParseError);
    std::remove(empty.c_str());

    const auto bad = temp_file("bad.tsv");
    write_file(bad, "u1 i1\nu2\n");
    try {
        load_interactions(bad, InteractionFormat::tsv);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::remove(bad.c_str());

    const auto badnum = temp_file("badnum.tsv");
    write_file(badnum, "u1 i1 notanumber extra\n");
    CHECK_THROWS_AS(load_interactions(badnum, InteractionFormat::tsv), ParseError);
    std::remove(badnum.c_str());
}

TEST_CASE("raw id round trip is the identity") {
    const auto path = temp_file("roundtrip.tsv");
    write_file(path, "alice food\nbob games\nalice games\ncarol food\n");
    auto ds = load_interactions(path, InteractionFormat::tsv);
    for (std::size_t u = 0; u < ds.num_users(); ++u)
        CHECK(ds.user_index.at(ds.user_raw_ids[u]) == u);
    for (std::size_t i = 0; i < ds.num_items(); ++i)
        CHECK(ds.item_index.at(ds.item_raw_ids[i]) == i);
    std::remove(path.c_str());
}

TEST_CASE("leave-one-out split layouts") {
    auto ds = tiny_dataset({{0, 1, 2}, {3}, {0, 1, 2, 3}}, 4);

    auto split = leave_one_out_split(ds, false);
    CHECK(split.train[0] == std::vector<std::uint32_t>{0, 1});
    CHECK(split.test[0] == 2u);
    CHECK_FALSE(split.validation[0].has_value());
    // single-interaction user stays in train with no test entry
    CHECK(split.train[1] == std::vector<std::uint32_t>{3});
    CHECK_FALSE(split.test[1].has_value());

    auto val_split = leave_one_out_split(ds, true);
    CHECK(val_split.train[2] == std::vector<std::uint32_t>{0, 1});
    CHECK(val_split.validation[2] == 2u);
    CHECK(val_split.test[2] == 3u);
    // history of exactly 2 gets train+test, no validation
    auto two = tiny_dataset({{0, 1}}, 2);
    auto s2 = leave_one_out_split(two, true);
    CHECK(s2.train[0] == std::vector<std::uint32_t>{0});
    CHECK_FALSE(s2.validation[0].has_value());
    CHECK(s2.test[0] == 1u);
}

TEST_CASE("split disjointness holds over a synthetic corpus") {
    synth::SynthCorpusConfig cfg;
    cfg.users = 120;
    cfg.items = 300;
    cfg.interactions = 2400;
    cfg.clusters = 6;
    auto corpus = synth::make_clustered_interactions(cfg);
    const auto path = temp_file("synth.tsv");
    synth::write_tsv(corpus, path);
    auto ds = load_interactions(path, InteractionFormat::tsv);
    std::remove(path.c_str());
    CHECK(ds.num_users() == cfg.users);
    CHECK(ds.num_items() == cfg.items);
    CHECK(ds.num_interactions() == cfg.interactions);

    auto split = leave_one_out_split(ds, true);
    for (std::size_t u = 0; u < split.num_users; ++u) {
        std::set<std::uint32_t> train(split.train[u].begin(), split.train[u].end());
        if (split.test[u]) CHECK(train.count(*split.test[u]) == 0);
        // train + val + test together recover the full deduplicated history
        std::set<std::uint32_t> all = train;
        if (split.validation[u]) all.insert(*split.validation[u]);
        if (split.test[u]) all.insert(*split.test[u]);
        std::set<std::uint32_t> hist(ds.history[u].begin(), ds.history[u].end());
        CHECK(all == hist);
    }
}

TEST_CASE("unseen user hold-out") {
    auto ds = tiny_dataset({{0, 1, 2, 3}, {0, 1}, {2, 3, 1}}, 4);
    auto split = hold_out_unseen_users(ds, 0.34);  // ceil(0.34*3) = 2
    REQUIRE(split.unseen_users.size() == 2);
    // fewest interactions first, ties by index: user 1 (2), then user 2 (3)
    CHECK(split.unseen_users == std::vector<std::uint32_t>{1, 2});
    for (std::uint32_t u : split.unseen_users) {
        CHECK(split.train[u].empty());
        CHECK(split.test[u].has_value());
    }

    CHECK_THROWS_AS(hold_out_unseen_users(ds, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(hold_out_unseen_users(ds, 0.0), std::invalid_argument);

    auto two = tiny_dataset({{0, 1}, {2, 3}}, 4);
    auto half = hold_out_unseen_users(two, 0.5);
    CHECK(half.unseen_users.size() == 1);
}

TEST_CASE("items only interacted by unseen users are flagged") {
    auto ds = tiny_dataset({{0, 1, 2}, {3, 0}}, 4);
    auto split = hold_out_unseen_users(ds, 0.5);  // user 1 has fewer interactions
    REQUIRE(split.unseen_users == std::vector<std::uint32_t>{1});
    CHECK(split.unseen_items == std::vector<std::uint32_t>{3});
}

TEST_CASE("truncate_and_shuffle keeps the most recent items as a multiset") {
    std::vector<std::uint32_t> history(150);
    for (std::size_t i = 0; i < history.size(); ++i) history[i] = static_cast<std::uint32_t>(i);

    auto out = truncate_and_shuffle_history(history, 100, 9);
    REQUIRE(out.size() == 100);
    std::set<std::uint32_t> expect, got(out.begin(), out.end());
    for (std::uint32_t i = 50; i < 150; ++i) expect.insert(i);
    CHECK(got == expect);

    auto same = truncate_and_shuffle_history(history, 100, 9);
    CHECK(out == same);  // deterministic for a fixed seed

    std::vector<std::uint32_t> three{7, 8, 9};
    auto small = truncate_and_shuffle_history(three, 100, 1);
    CHECK(std::set<std::uint32_t>(small.begin(), small.end()) ==
          std::set<std::uint32_t>{7, 8, 9});

    CHECK_THROWS_AS(truncate_and_shuffle_history(three, 0, 1), std::invalid_argument);
}
