#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mqrec/artifact.hpp"
#include "mqrec/config.hpp"
#include "mqrec/evaluate.hpp"
#include "mqrec/pipeline.hpp"
#include "mqrec/synth.hpp"

using namespace mqrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Matrixf random_matrixf(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrixf m(r, c);
    auto rng = make_rng(seed, 1);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (float& x : m.flat()) x = float(dist(rng));
    return m;
}

}  // namespace

TEST_CASE("matrix file round trip is bitwise") {
    TempDir dir("mqrec_matrix_rt");
    auto m = random_matrixf(17, 9, 3);
    const auto path = (dir.path / "a.mqm").string();
    write_matrix_file(path, m);
    auto back = read_matrix_file(path);
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    REQUIRE(std::memcmp(back.data(), m.data(), m.size() * sizeof(float)) == 0);
}

TEST_CASE("corrupted payload and bad headers are rejected") {
    TempDir dir("mqrec_matrix_bad");
    auto m = random_matrixf(8, 8, 4);
    const auto path = (dir.path / "m.mqm").string();
    write_matrix_file(path, m);

    // flip one payload byte
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4 + 4 + 8 + 8 + 11);
        char byte;
        f.seekg(4 + 4 + 8 + 8 + 11);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x40);
        f.seekp(4 + 4 + 8 + 8 + 11);
        f.write(&byte, 1);
    }
    CHECK_THROWS_AS(read_matrix_file(path), CorruptionError);

    // wrong magic
    const auto magic_path = (dir.path / "magic.mqm").string();
    write_matrix_file(magic_path, m);
    {
        std::fstream f(magic_path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(read_matrix_file(magic_path), FormatError);

    // wrong version
    const auto ver_path = (dir.path / "ver.mqm").string();
    write_matrix_file(ver_path, m);
    {
        std::fstream f(ver_path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t bad = 999;
        f.write(reinterpret_cast<const char*>(&bad), 4);
    }
    CHECK_THROWS_AS(read_matrix_file(ver_path), VersionError);

    CHECK_THROWS_AS(read_matrix_file((dir.path / "missing.mqm").string()), IoError);
}

TEST_CASE("bundle round trip preserves manifest, matrices, token maps") {
    TempDir dir("mqrec_bundle_rt");
    ArtifactBundle b;
    b.set("dim", "16");
    b.set("note", "hello world");
    b.add_matrix("alpha", random_matrixf(4, 6, 7));
    b.add_matrix("beta.gamma", random_matrixf(3, 3, 8));
    b.user_raw_ids = {"u9", "u4"};
    b.user_tokens = {{Side::user, {1, 2}}, {Side::user, {3, 0}}};
    b.item_raw_ids = {"i1"};
    b.item_tokens = {{Side::item, {7, 7}}};

    save_bundle(dir.path.string(), b);
    auto back = load_bundle(dir.path.string());
    CHECK(back.get("dim") == "16");
    CHECK(back.get("note") == "hello world");
    CHECK(back.matrix("alpha") == b.matrix("alpha"));
    CHECK(back.matrix("beta.gamma") == b.matrix("beta.gamma"));
    REQUIRE(back.user_tokens.size() == 2);
    CHECK(back.user_raw_ids == b.user_raw_ids);
    CHECK(back.user_tokens[1].codes == b.user_tokens[1].codes);
    REQUIRE(back.item_tokens.size() == 1);
    CHECK(back.item_tokens[0].codes == b.item_tokens[0].codes);
}

TEST_CASE("config defaults round trip and errors") {
    std::istringstream in(default_config_text());
    auto c = parse_config(in, "default");
    CHECK(c.cf_dim == 64);
    CHECK(c.tokenizer_k == 3);
    CHECK(c.tokenizer_rho == 0.2);
    CHECK(c.ranker_margin == 0.1);
    CHECK(c.eval_cutoffs == std::vector<std::size_t>{10, 20, 30});

    std::istringstream bad("no.such.key = 1\n");
    CHECK_THROWS_AS(parse_config(bad, "bad"), ParseError);

    std::istringstream badval("cf.dim = banana\n");
    CHECK_THROWS_AS(parse_config(badval, "badval"), ParseError);

    std::istringstream custom("cf.dim = 32\neval.cutoffs = 5,15\n# comment\n");
    auto cc = parse_config(custom, "custom");
    CHECK(cc.cf_dim == 32);
    CHECK(cc.eval_cutoffs == std::vector<std::size_t>{5, 15});
}

TEST_CASE("pipeline save/load keeps tokens and recommendations identical") {
    synth::SynthCorpusConfig scfg;
    scfg.users = 50;
    scfg.items = 80;
    scfg.interactions = 700;
    scfg.clusters = 4;
    scfg.seed = 13;
    auto corpus = synth::make_clustered_interactions(scfg);
    const std::string data_path = "mqrec_test_pipe.tsv";
    synth::write_tsv(corpus, data_path);
    auto ds = load_interactions(data_path, InteractionFormat::tsv);
    std::remove(data_path.c_str());

    Config cfg;
    cfg.cf_dim = 16;
    cfg.cf_layers = 2;
    cfg.cf_epochs = 20;
    cfg.cf_batch = 512;
    cfg.cf_eval_every = 0;
    cfg.tokenizer_k = 2;
    cfg.tokenizer_l = 16;
    cfg.tokenizer_code_dim = 8;
    cfg.tokenizer_hidden = 24;
    cfg.tokenizer_epochs = 12;
    cfg.tokenizer_min_epochs = 12;
    cfg.vocab_hash_buckets = 256;
    cfg.ranker_embed_dim = 24;
    cfg.ranker_proj_hidden = 24;
    cfg.ranker_epochs = 6;
    cfg.ranker_eval_every = 0;
    auto pipeline = train_full_pipeline(ds, cfg);

    TempDir dir("mqrec_pipe_rt");
    const auto hash = dataset_hash(ds);
    save_bundle(dir.path.string(), pipeline_to_bundle(pipeline, hash));
    auto loaded = bundle_to_pipeline(load_bundle(dir.path.string()), ds, cfg);

    // tokenization is stable across the save/load boundary
    for (std::size_t u = 0; u < ds.num_users(); ++u)
        REQUIRE(loaded.user_tuples[u] == pipeline.user_tuples[u]);
    for (std::size_t i = 0; i < ds.num_items(); ++i)
        REQUIRE(loaded.item_tuples[i] == pipeline.item_tuples[i]);

    auto before = pipeline.recommend_lines({0, 3, 7}, 5, 99);
    auto after = loaded.recommend_lines({0, 3, 7}, 5, 99);
    REQUIRE(before == after);

    // a bundle trained on different data is refused
    auto ds2 = ds;
    ds2.history[0].pop_back();
    CHECK_THROWS_AS(bundle_to_pipeline(load_bundle(dir.path.string()), ds2, cfg),
                    CorruptionError);
}
