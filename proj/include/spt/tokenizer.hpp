#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spt/errors.hpp"

namespace spt {

// Word-level tokenizer. Lowercase, split on whitespace, punctuation marks
// are single-character tokens. Deterministic for identical input: ids are
// assigned by descending corpus frequency with lexicographic tie-breaks.
//
// Capitalization is deliberately collapsed, so near-duplicate retrieval
// hits that differ only in case cannot occur here.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kEos = 2;
    static constexpr int kNumSpecial = 3;

    std::vector<std::string> id_to_token;    // index = id
    std::map<std::string, int> token_to_id;  // inverse
    std::vector<int> freq_rank;              // non-special ids, most frequent first

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size())
            throw DataError("invalid token id " + std::to_string(id));
        return id_to_token[static_cast<std::size_t>(id)];
    }

    bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }
};

namespace detail {
inline bool is_punct_byte(unsigned char c) { return c < 128 && std::ispunct(c); }
inline bool is_space_byte(unsigned char c) { return c < 128 && std::isspace(c); }
}  // namespace detail

// Lowercases and splits; punctuation characters become their own tokens.
// Bytes >= 0x80 are treated as word characters, so UTF-8 words survive.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (detail::is_space_byte(c)) {
            flush();
        } else if (detail::is_punct_byte(c)) {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        } else {
            word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

// Specials first, then up to max_size-3 most frequent corpus tokens.
// Ties break lexicographically. An empty corpus yields specials only.
inline Vocab build_vocab(const std::vector<std::string>& corpus, int max_size) {
    if (max_size < Vocab::kNumSpecial + 1)
        throw DataError("build_vocab: max_size must be at least 4");
    std::map<std::string, std::size_t> counts;
    for (const std::string& line : corpus)
        for (const std::string& tok : tokenize(line)) ++counts[tok];

    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::size_t keep = std::min(ranked.size(),
                                static_cast<std::size_t>(max_size - Vocab::kNumSpecial));

    Vocab v;
    v.id_to_token = {"<pad>", "<unk>", "</s>"};
    for (std::size_t i = 0; i < keep; ++i) v.id_to_token.push_back(ranked[i].first);
    for (int id = 0; id < v.size(); ++id) v.token_to_id[v.id_to_token[id]] = id;
    for (int id = Vocab::kNumSpecial; id < v.size(); ++id) v.freq_rank.push_back(id);
    return v;
}

// No implicit EOS; unknown tokens map to UNK.
inline std::vector<int> encode(std::string_view text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const std::string& tok : tokenize(text)) ids.push_back(vocab.id_of(tok));
    return ids;
}

// Tokens joined by single spaces; PAD dropped; stops at the first EOS.
inline std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == Vocab::kEos) break;
        if (id == Vocab::kPad) continue;
        const std::string& tok = vocab.token_of(id);  // throws on invalid id
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

// --- serialization: one token per line; ranks in a sibling ".freq" file ---

inline void save_vocab(const Vocab& v, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write vocab file: " + path);
    for (const std::string& tok : v.id_to_token) f << tok << '\n';
    std::ofstream fr(path + ".freq", std::ios::binary);
    if (!fr) throw DataError("cannot write vocab freq file: " + path + ".freq");
    for (int id : v.freq_rank) fr << id << '\n';
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read vocab file: " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line)) v.id_to_token.push_back(line);
    if (v.size() < Vocab::kNumSpecial) throw DataError("vocab file too short: " + path);
    for (int id = 0; id < v.size(); ++id) v.token_to_id[v.id_to_token[id]] = id;
    std::ifstream fr(path + ".freq", std::ios::binary);
    if (!fr) throw DataError("cannot read vocab freq file: " + path + ".freq");
    while (std::getline(fr, line)) {
        if (line.empty()) continue;
        v.freq_rank.push_back(std::stoi(line));
    }
    return v;
}

// Serializes a vocab to a single string (token lines, then a blank line,
// then rank lines). Used for the checkpoint vocab section.
inline std::string vocab_to_string(const Vocab& v) {
    std::ostringstream os;
    for (const std::string& tok : v.id_to_token) os << tok << '\n';
    os << '\n';
    for (int id : v.freq_rank) os << id << '\n';
    return os.str();
}

inline Vocab vocab_from_string(const std::string& blob) {
    std::istringstream is(blob);
    Vocab v;
    std::string line;
    bool in_ranks = false;
    while (std::getline(is, line)) {
        if (!in_ranks) {
            if (line.empty()) {
                in_ranks = true;
                continue;
            }
            v.id_to_token.push_back(line);
        } else if (!line.empty()) {
            v.freq_rank.push_back(std::stoi(line));
        }
    }
    if (v.size() < Vocab::kNumSpecial) throw DataError("malformed vocab blob");
    for (int id = 0; id < v.size(); ++id) v.token_to_id[v.id_to_token[id]] = id;
    return v;
}

}  // namespace spt
