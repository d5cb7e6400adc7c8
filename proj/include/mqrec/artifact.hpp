#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/matrix.hpp"
#include "mqrec/tokenizer.hpp"

namespace mqrec {

static_assert(std::endian::native == std::endian::little,
              "artifact format is little-endian; big-endian hosts are unsupported");

constexpr std::uint32_t kArtifactVersion = 1;
constexpr char kArtifactMagic[4] = {'M', 'Q', 'R', 'C'};

/// Binary matrix file: magic "MQRC", u32 version, u64 rows, u64 cols,
/// row-major f32 payload, u32 CRC32 of the payload. All little-endian.
inline void write_matrix_file(const std::string& path, const Matrixf& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_matrix_file: cannot open '" + path + "'");
    out.write(kArtifactMagic, 4);
    const std::uint32_t version = kArtifactVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t rows = m.rows(), cols = m.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    const auto* payload = reinterpret_cast<const char*>(m.data());
    const std::size_t bytes = m.size() * sizeof(float);
    out.write(payload, std::streamsize(bytes));
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload), uInt(bytes)));
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!out) throw IoError("write_matrix_file: short write to '" + path + "'");
}

inline Matrixf read_matrix_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_matrix_file: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kArtifactMagic, 4) != 0)
        throw FormatError("read_matrix_file: bad magic in '" + path + "'");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kArtifactVersion)
        throw VersionError("read_matrix_file: unsupported version in '" + path + "'");
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in) throw FormatError("read_matrix_file: truncated header in '" + path + "'");
    Matrixf m(rows, cols);
    const std::size_t bytes = m.size() * sizeof(float);
    in.read(reinterpret_cast<char*>(m.data()), std::streamsize(bytes));
    std::uint32_t stored_crc = 0;
    in.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
    if (!in) throw FormatError("read_matrix_file: truncated payload in '" + path + "'");
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(m.data()), uInt(bytes)));
    if (crc != stored_crc)
        throw CorruptionError("read_matrix_file: checksum mismatch in '" + path + "'");
    return m;
}

/// A saved model directory: ordered key-value manifest, named matrices (one
/// file each, checksummed), and the entity token maps.
struct ArtifactBundle {
    std::vector<std::pair<std::string, std::string>> manifest;
    std::vector<std::pair<std::string, Matrixf>> matrices;
    std::vector<std::string> user_raw_ids, item_raw_ids;
    std::vector<TokenTuple> user_tokens, item_tokens;

    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : manifest)
            if (k == key) {
                v = value;
                return;
            }
        manifest.emplace_back(key, value);
    }
    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : manifest)
            if (k == key) return v;
        throw FormatError("manifest key missing: " + key);
    }
    bool has(const std::string& key) const {
        for (const auto& [k, v] : manifest)
            if (k == key) return true;
        return false;
    }
    void add_matrix(const std::string& name, Matrixf m) {
        matrices.emplace_back(name, std::move(m));
    }
    const Matrixf& matrix(const std::string& name) const {
        for (const auto& [n, m] : matrices)
            if (n == name) return m;
        throw FormatError("bundle matrix missing: " + name);
    }
};

namespace detail {

inline void write_token_map(const std::string& path, Side side,
                            const std::vector<std::string>& raw_ids,
                            const std::vector<TokenTuple>& tokens) {
    std::ofstream out(path);
    if (!out) throw IoError("write_token_map: cannot open '" + path + "'");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out << (side == Side::user ? "user" : "item") << ' '
            << (i < raw_ids.size() ? raw_ids[i] : std::to_string(i));
        for (auto c : tokens[i].codes) out << ' ' << c;
        out << '\n';
    }
}

inline void read_token_map(const std::string& path, Side side,
                           std::vector<std::string>& raw_ids,
                           std::vector<TokenTuple>& tokens) {
    std::ifstream in(path);
    if (!in) return;  // token maps are optional in a bundle
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string side_s, raw;
        if (!(iss >> side_s >> raw)) throw ParseError("token map: malformed line in " + path);
        TokenTuple t;
        t.side = side;
        std::uint32_t code;
        while (iss >> code) t.codes.push_back(static_cast<std::uint16_t>(code));
        raw_ids.push_back(raw);
        tokens.push_back(std::move(t));
    }
}

}  // namespace detail

inline void save_bundle(const std::string& dir, const ArtifactBundle& bundle) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("save_bundle: cannot open manifest in '" + dir + "'");
    manifest << "format_version = " << kArtifactVersion << "\n";
    for (const auto& [k, v] : bundle.manifest) manifest << k << " = " << v << "\n";
    for (const auto& [name, m] : bundle.matrices) {
        manifest << "matrix." << name << " = " << name << ".mqm\n";
        manifest << "matrix." << name << ".rows = " << m.rows() << "\n";
        manifest << "matrix." << name << ".cols = " << m.cols() << "\n";
        write_matrix_file(dir + "/" + name + ".mqm", m);
    }
    if (!bundle.user_tokens.empty())
        detail::write_token_map(dir + "/tokens_user.txt", Side::user, bundle.user_raw_ids,
                                bundle.user_tokens);
    if (!bundle.item_tokens.empty())
        detail::write_token_map(dir + "/tokens_item.txt", Side::item, bundle.item_raw_ids,
                                bundle.item_tokens);
}

inline ArtifactBundle load_bundle(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("load_bundle: no manifest in '" + dir + "'");
    ArtifactBundle bundle;
    std::vector<std::pair<std::string, std::string>> matrix_files;
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> shapes;
    std::string line;
    bool version_checked = false;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw ParseError("load_bundle: malformed manifest line " + std::to_string(line_no));
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "format_version") {
            if (std::stoul(value) != kArtifactVersion)
                throw VersionError("load_bundle: manifest version mismatch");
            version_checked = true;
            continue;
        }
        if (key.rfind("matrix.", 0) == 0) {
            const std::string rest = key.substr(7);
            if (rest.size() > 5 && rest.rfind(".rows") == rest.size() - 5)
                shapes[rest.substr(0, rest.size() - 5)].first = std::stoull(value);
            else if (rest.size() > 5 && rest.rfind(".cols") == rest.size() - 5)
                shapes[rest.substr(0, rest.size() - 5)].second = std::stoull(value);
            else
                matrix_files.emplace_back(rest, value);
            continue;
        }
        bundle.manifest.emplace_back(key, value);
    }
    if (!version_checked) throw VersionError("load_bundle: manifest missing format_version");
    for (const auto& [name, file] : matrix_files) {
        Matrixf m = read_matrix_file(dir + "/" + file);
        const auto it = shapes.find(name);
        if (it != shapes.end() &&
            (m.rows() != it->second.first || m.cols() != it->second.second))
            throw CorruptionError("load_bundle: manifest shape mismatch for " + name);
        bundle.add_matrix(name, std::move(m));
    }
    detail::read_token_map(dir + "/tokens_user.txt", Side::user, bundle.user_raw_ids,
                           bundle.user_tokens);
    detail::read_token_map(dir + "/tokens_item.txt", Side::item, bundle.item_raw_ids,
                           bundle.item_tokens);
    return bundle;
}

}  // namespace mqrec
