#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mqrec/common.hpp"
#include "mqrec/vocab.hpp"

namespace mqrec {

struct PromptTemplate {
    std::uint32_t id = 0;
    bool unseen = false;
    bool requires_history = false;
    std::string text;  // placeholders: {user}, {items}
};

struct TemplateCatalog {
    std::vector<PromptTemplate> templates;

    const PromptTemplate& by_id(std::uint32_t id) const {
        for (const auto& t : templates)
            if (t.id == id) return t;
        throw std::invalid_argument("template id not in catalog");
    }
    std::vector<std::uint32_t> seen_ids() const {
        std::vector<std::uint32_t> out;
        for (const auto& t : templates)
            if (!t.unseen) out.push_back(t.id);
        return out;
    }
    std::uint32_t unseen_id() const {
        for (const auto& t : templates)
            if (t.unseen) return t.id;
        throw std::invalid_argument("catalog has no unseen template");
    }
    /// First template that works from the user ID tokens alone.
    std::uint32_t user_id_only_id() const {
        for (const auto& t : templates)
            if (!t.unseen && !t.requires_history) return t.id;
        throw std::invalid_argument("catalog has no history-free template");
    }

    void validate() const {
        if (templates.size() != 11)
            throw std::invalid_argument("catalog must hold exactly 11 templates");
        std::size_t unseen_count = 0;
        for (const auto& t : templates) {
            if (t.unseen) ++unseen_count;
            if (t.text.find("{user}") == std::string::npos)
                throw std::invalid_argument("template missing {user} placeholder");
            const bool has_items = t.text.find("{items}") != std::string::npos;
            if (has_items != t.requires_history)
                throw std::invalid_argument("template history flag and {items} disagree");
        }
        if (unseen_count != 1)
            throw std::invalid_argument("catalog must hold exactly 1 unseen template");
    }
};

/// The 11-template catalog: ids 0-9 are seen during ranker training (a mix
/// with and without interaction history), id 10 is held out as the unseen
/// prompt for evaluation.
inline TemplateCatalog default_templates() {
    TemplateCatalog c;
    auto add = [&](std::uint32_t id, bool unseen, bool hist, std::string text) {
        c.templates.push_back({id, unseen, hist, std::move(text)});
    };
    add(0, false, false, "I wonder what the user_{user} will like. Can you help me decide?");
    add(1, false, true,
        "According to what items the user_{user} has interacted with: {items}. Can you "
        "describe the user's preferences?");
    add(2, false, false, "What should we recommend next for the user_{user}?");
    add(3, false, true,
        "The user_{user} has picked the following items before: {items}. Suggest what this "
        "user may enjoy next.");
    add(4, false, false, "Please predict items that the user_{user} is likely to choose.");
    add(5, false, true,
        "Given the interaction history of the user_{user}: {items}. Which items fit this "
        "user's taste?");
    add(6, false, false,
        "Recommend something suitable for the user_{user} based on collaborative knowledge.");
    add(7, false, true,
        "Considering that the user_{user} engaged with these items: {items}. What comes next "
        "for this user?");
    add(8, false, false, "Which items match the preferences of the user_{user}?");
    add(9, false, true,
        "Items interacted with by the user_{user} include: {items}. Help me find suitable "
        "recommendations for this user.");
    add(10, true, true,
        "Here is what the user_{user} has enjoyed so far: {items}. I would like a fresh "
        "suggestion tailored to this user.");
    c.validate();
    return c;
}

/// Words appearing in the catalog plus the entity prefixes; this is the base
/// lexicon the vocabulary is built from.
inline std::vector<std::string> catalog_lexicon(const TemplateCatalog& catalog) {
    std::vector<std::string> words{"user_", "item_"};
    auto push_words = [&](const std::string& text) {
        std::string word;
        auto flush = [&]() {
            if (!word.empty()) words.push_back(word);
            word.clear();
        };
        for (char ch : text) {
            if (detail::word_char(ch))
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            else
                flush();
        }
        flush();
    };
    for (const auto& t : catalog.templates) {
        std::string cleaned = t.text;
        for (const char* ph : {"{user}", "{items}"}) {
            std::size_t pos;
            while ((pos = cleaned.find(ph)) != std::string::npos)
                cleaned.replace(pos, std::string(ph).size(), " ");
        }
        push_words(cleaned);
    }
    return words;
}

/// Catalog file format: one template per line,
/// id<TAB>seen|unseen<TAB>0|1<TAB>text
inline void save_templates(const TemplateCatalog& catalog, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_templates: cannot open '" + path + "'");
    for (const auto& t : catalog.templates)
        out << t.id << '\t' << (t.unseen ? "unseen" : "seen") << '\t'
            << (t.requires_history ? 1 : 0) << '\t' << t.text << '\n';
}

inline TemplateCatalog load_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_templates: cannot open '" + path + "'");
    TemplateCatalog c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string id_s, split_s, hist_s, text;
        if (!std::getline(iss, id_s, '\t') || !std::getline(iss, split_s, '\t') ||
            !std::getline(iss, hist_s, '\t') || !std::getline(iss, text))
            throw ParseError("load_templates: malformed line " + std::to_string(line_no));
        PromptTemplate t;
        t.id = static_cast<std::uint32_t>(std::stoul(id_s));
        t.unseen = split_s == "unseen";
        t.requires_history = hist_s == "1";
        t.text = text;
        c.templates.push_back(std::move(t));
    }
    c.validate();
    return c;
}

struct IdSpan {
    std::size_t offset = 0;  // first OOV token position
    Side side = Side::user;
    std::size_t length = 0;  // == K
};

struct RenderedPrompt {
    std::vector<std::uint32_t> token_ids;
    std::vector<IdSpan> id_spans;
};

/// Substitute the user's K ID tokens at {user} and each history item's K ID
/// tokens (prefixed by the word "item_") at {items}, in the given order.
/// Trailing history items are dropped as needed so the sequence never
/// exceeds max_len.
inline RenderedPrompt render_prompt(const PromptTemplate& t, const TokenTuple& user,
                                    const std::vector<TokenTuple>* history,
                                    const Vocabulary& vocab, std::size_t max_len = 512) {
    const bool has_history = history != nullptr && !history->empty();
    if (t.requires_history && !has_history)
        throw std::invalid_argument("render_prompt: template requires interaction history");
    if (!t.requires_history && history != nullptr)
        throw std::invalid_argument("render_prompt: template takes no history");
    if (user.codes.size() != vocab.K)
        throw std::invalid_argument("render_prompt: user token arity mismatch");

    // split the template at placeholders, keeping order
    struct Piece {
        enum Kind { text, user_ph, items_ph } kind;
        std::string content;
    };
    std::vector<Piece> pieces;
    std::size_t pos = 0;
    while (pos < t.text.size()) {
        const std::size_t pu = t.text.find("{user}", pos);
        const std::size_t pi = t.text.find("{items}", pos);
        const std::size_t next = std::min(pu, pi);
        if (next == std::string::npos) {
            pieces.push_back({Piece::text, t.text.substr(pos)});
            break;
        }
        if (next > pos) pieces.push_back({Piece::text, t.text.substr(pos, next - pos)});
        if (next == pu) {
            pieces.push_back({Piece::user_ph, {}});
            pos = next + 6;
        } else {
            pieces.push_back({Piece::items_ph, {}});
            pos = next + 7;
        }
    }

    // fixed token budget first, then fit as many history items as possible
    const std::uint32_t item_word = encode_text_tokens("item_", vocab).at(0);
    std::size_t fixed = 0;
    for (const auto& p : pieces) {
        if (p.kind == Piece::text)
            fixed += encode_text_tokens(p.content, vocab).size();
        else if (p.kind == Piece::user_ph)
            fixed += vocab.K;
    }
    std::size_t items_fit = 0;
    if (has_history && t.requires_history) {
        const std::size_t per_item = 1 + vocab.K;  // "item_" + K ID tokens
        const std::size_t room = max_len > fixed ? max_len - fixed : 0;
        items_fit = std::min(history->size(), room / per_item);
    }

    RenderedPrompt out;
    for (const auto& p : pieces) {
        if (p.kind == Piece::text) {
            auto ids = encode_text_tokens(p.content, vocab);
            out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
        } else if (p.kind == Piece::user_ph) {
            out.id_spans.push_back({out.token_ids.size(), Side::user, vocab.K});
            for (std::uint32_t k = 0; k < vocab.K; ++k)
                out.token_ids.push_back(vocab.user_token(k, user.codes[k]));
        } else {
            for (std::size_t i = 0; i < items_fit; ++i) {
                const auto& item = (*history)[i];
                if (item.codes.size() != vocab.K)
                    throw std::invalid_argument("render_prompt: item token arity mismatch");
                out.token_ids.push_back(item_word);
                out.id_spans.push_back({out.token_ids.size(), Side::item, vocab.K});
                for (std::uint32_t k = 0; k < vocab.K; ++k)
                    out.token_ids.push_back(vocab.item_token(k, item.codes[k]));
            }
        }
    }
    return out;
}

}  // namespace mqrec
