#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tags/text.hpp"

namespace tags {

enum class Role { Noun, Adj, Verb, Prep, Det, Stop, None };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::Noun: return "NOUN";
        case Role::Adj: return "ADJ";
        case Role::Verb: return "VERB";
        case Role::Prep: return "PREP";
        case Role::Det: return "DET";
        case Role::Stop: return "STOP";
        default: return "NONE";
    }
}

inline std::optional<Role> role_from_name(const std::string& s) {
    if (s == "NOUN") return Role::Noun;
    if (s == "ADJ") return Role::Adj;
    if (s == "VERB") return Role::Verb;
    if (s == "PREP") return Role::Prep;
    if (s == "DET") return Role::Det;
    if (s == "STOP") return Role::Stop;
    return std::nullopt;
}

// Word -> grammatical role table driving the parser. Serialized one
// "word<TAB>ROLE" pair per line, sorted by word.
struct RoleLexicon {
    std::unordered_map<std::string, Role> roles;

    Role role_of(const std::string& word) const {
        auto it = roles.find(word);
        return it == roles.end() ? Role::None : it->second;
    }

    void set(const std::string& word, Role r) { roles[word] = r; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("lexicon: cannot write " + path);
        std::vector<std::string> words;
        words.reserve(roles.size());
        for (const auto& kv : roles) words.push_back(kv.first);
        std::sort(words.begin(), words.end());
        for (const std::string& w : words) {
            out << w << '\t' << role_name(roles.at(w)) << '\n';
        }
    }

    static RoleLexicon load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("lexicon: cannot read " + path);
        RoleLexicon lex;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw std::runtime_error("lexicon: line " + std::to_string(lineno) + ": missing tab");
            }
            std::string word = lowercase(line.substr(0, tab));
            auto role = role_from_name(line.substr(tab + 1));
            if (word.empty() || !role) {
                throw std::runtime_error("lexicon: line " + std::to_string(lineno) + ": bad entry");
            }
            lex.set(word, *role);
        }
        return lex;
    }
};

// Half-open token index range [begin,end) inside one caption.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - begin; }
    bool operator==(const Span&) const = default;
};

struct Attribute {
    Span span;
    std::size_t object = 0;
    bool operator==(const Attribute&) const = default;
};

struct Relation {
    Span span;
    std::size_t subject = 0;
    std::size_t object = 0;
    bool operator==(const Relation&) const = default;
};

struct SceneGraph {
    std::vector<Span> objects;
    std::vector<Attribute> attributes;
    std::vector<Relation> relations;

    bool empty() const { return objects.empty() && attributes.empty() && relations.empty(); }
    bool operator==(const SceneGraph&) const = default;
};

// Single left-to-right pass. A noun becomes an object and claims any pending
// adjective run as attributes and any pending verb/preposition run as the
// relation linking it to the most recent previous object. Determiners and
// stop words are transparent; unknown words clear all pending state.
inline SceneGraph parse_scene_graph(const TokenSeq& caption, const RoleLexicon& lexicon) {
    SceneGraph g;
    std::vector<std::size_t> pending_adjs;
    std::optional<Span> pending_rel;
    std::optional<std::size_t> rel_subject;

    for (std::size_t i = 0; i < caption.size(); ++i) {
        switch (lexicon.role_of(caption.surfaces[i])) {
            case Role::Noun: {
                const std::size_t obj = g.objects.size();
                g.objects.push_back({i, i + 1});
                for (std::size_t a : pending_adjs) g.attributes.push_back({{a, a + 1}, obj});
                pending_adjs.clear();
                if (pending_rel && rel_subject) {
                    g.relations.push_back({*pending_rel, *rel_subject, obj});
                }
                pending_rel.reset();
                rel_subject.reset();
                break;
            }
            case Role::Adj:
                pending_adjs.push_back(i);
                break;
            case Role::Verb:
            case Role::Prep:
                if (pending_rel && pending_rel->end == i) {
                    pending_rel->end = i + 1;
                } else if (!g.objects.empty()) {
                    pending_rel = Span{i, i + 1};
                    rel_subject = g.objects.size() - 1;
                } else {
                    pending_rel.reset();
                    rel_subject.reset();
                }
                pending_adjs.clear();
                break;
            case Role::Det:
            case Role::Stop:
                break;
            default:
                pending_adjs.clear();
                pending_rel.reset();
                rel_subject.reset();
                break;
        }
    }
    return g;
}

// Maskable spans in caption order: one per object, attribute and relation.
struct MaskCandidateSet {
    TokenSeq source;
    std::vector<Span> spans;
};

inline MaskCandidateSet mask_candidates(const SceneGraph& graph, const TokenSeq& caption) {
    MaskCandidateSet set;
    set.source = caption;
    for (const Span& s : graph.objects) set.spans.push_back(s);
    for (const Attribute& a : graph.attributes) set.spans.push_back(a.span);
    for (const Relation& r : graph.relations) set.spans.push_back(r.span);
    std::sort(set.spans.begin(), set.spans.end(),
              [](const Span& a, const Span& b) { return a.begin < b.begin; });
    return set;
}

// Ablation variant: every token is its own candidate span.
inline MaskCandidateSet word_mask_candidates(const TokenSeq& caption) {
    MaskCandidateSet set;
    set.source = caption;
    for (std::size_t i = 0; i < caption.size(); ++i) set.spans.push_back({i, i + 1});
    return set;
}

} // namespace tags
