#pragma once

#include <cctype>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tags {

inline std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> split_words(const std::string& raw) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Closed vocabulary with five reserved entries at fixed ids. Word ids are
// assigned in first-seen corpus order after the reserved block.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kMask = 1;
    static constexpr int kUnk = 2;
    static constexpr int kBos = 3;
    static constexpr int kEos = 4;
    static constexpr int kReserved = 5;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    Vocabulary() {
        for (const char* s : {"<pad>", "<mask>", "<unk>", "<bos>", "<eos>"}) add_raw(s);
    }

    static bool is_reserved(int id) { return id >= 0 && id < kReserved; }

    std::size_t size() const { return tokens.size(); }

    // idempotent; stores the word as given (callers lowercase first)
    int add(const std::string& word) {
        auto it = index.find(word);
        if (it != index.end()) return it->second;
        return add_raw(word);
    }

    int id(const std::string& word) const {
        auto it = index.find(word);
        return it == index.end() ? kUnk : it->second;
    }

    const std::string& surface(int tid) const {
        if (tid < 0 || static_cast<std::size_t>(tid) >= tokens.size()) {
            throw std::out_of_range("vocabulary: id " + std::to_string(tid) + " out of range");
        }
        return tokens[static_cast<std::size_t>(tid)];
    }

private:
    int add_raw(const std::string& word) {
        int tid = static_cast<int>(tokens.size());
        tokens.push_back(word);
        index.emplace(word, tid);
        return tid;
    }
};

inline Vocabulary build_vocabulary(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
    Vocabulary v;
    for (const std::string& line : corpus) {
        for (const std::string& w : split_words(lowercase(line))) v.add(w);
    }
    return v;
}

// Token ids plus the surfaces they came from. Surfaces are kept verbatim
// (post-lowercasing) so unknown words survive a round trip through kUnk.
struct TokenSeq {
    std::vector<int> ids;
    std::vector<std::string> surfaces;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
    bool operator==(const TokenSeq&) const = default;
};

inline TokenSeq tokenize(const Vocabulary& v, const std::string& raw) {
    TokenSeq t;
    for (const std::string& w : split_words(lowercase(raw))) {
        t.ids.push_back(v.id(w));
        t.surfaces.push_back(w);
    }
    return t;
}

inline std::string detokenize(const TokenSeq& t) {
    std::string out;
    for (std::size_t i = 0; i < t.surfaces.size(); ++i) {
        if (i) out += ' ';
        out += t.surfaces[i];
    }
    return out;
}

} // namespace tags
