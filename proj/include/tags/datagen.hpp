#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "tags/dataset.hpp"
#include "tags/rng.hpp"
#include "tags/scenegraph.hpp"
#include "tags/text.hpp"

namespace tags {

// Latent description a pseudo image and its captions are both rendered from:
// one to three (noun, adjective) entities chained left to right by relations.
struct LatentScene {
    struct Entity {
        std::size_t noun = 0;
        std::size_t adj = 0;
    };
    struct Rel {
        std::size_t predicate = 0;
        std::size_t subject = 0;
        std::size_t object = 0;
    };
    std::vector<Entity> entities;
    std::vector<Rel> relations;
};

// Closed toy grammar. Captions follow
//   [stop prefix] DET ADJ NOUN (REL DET ADJ NOUN)*
// and the five surface variants of a scene differ only in the prefix and the
// determiner choices, so every variant parses to the same graph content.
class Grammar {
public:
    Grammar() {
        nouns_ = {"man", "woman", "boy", "girl", "child", "dog", "cat", "bird",
                  "horse", "cow", "sheep", "rabbit", "ball", "kite", "bike", "car",
                  "bus", "train", "boat", "truck", "table", "chair", "bench", "sofa",
                  "lamp", "book", "cup", "plate", "bottle", "basket", "tree", "bush",
                  "flower", "rock", "fence", "gate", "house", "barn", "tower", "bridge",
                  "hat", "coat", "scarf", "drum", "guitar", "violin", "wagon", "ladder"};
        adjectives_ = {"red", "blue", "green", "yellow", "black", "white", "brown",
                       "orange", "purple", "gray", "big", "small", "tall", "short",
                       "old", "young", "round", "flat", "shiny", "dull"};
        relations_ = {{"carrying"}, {"holding"}, {"riding"}, {"chasing"},
                      {"watching"}, {"touching"}, {"pushing"}, {"pulling"},
                      {"near"}, {"beside"}, {"next", "to"}, {"close", "to"}};
        rel_is_verb_ = {true, true, true, true, true, true, true, true,
                        false, false, false, false};
        dets_ = {"a", "the"};
        prefixes_ = {{}, {"there", "is"}, {"there", "was"}, {"you", "can", "see"}};

        for (const auto& w : nouns_) lexicon_.set(w, Role::Noun);
        for (const auto& w : adjectives_) lexicon_.set(w, Role::Adj);
        for (std::size_t r = 0; r < relations_.size(); ++r) {
            for (const auto& w : relations_[r]) {
                lexicon_.set(w, rel_is_verb_[r] ? Role::Verb : Role::Prep);
            }
        }
        for (const auto& w : dets_) lexicon_.set(w, Role::Det);
        for (const char* w : {"there", "is", "was", "you", "can", "see"}) lexicon_.set(w, Role::Stop);

        std::vector<std::string> corpus;
        for (const std::string& w : terminal_words()) corpus.push_back(w);
        vocab_ = build_vocabulary(corpus);
    }

    const std::vector<std::string>& nouns() const { return nouns_; }
    const std::vector<std::string>& adjectives() const { return adjectives_; }
    std::size_t relation_count() const { return relations_.size(); }
    const RoleLexicon& role_lexicon() const { return lexicon_; }
    const Vocabulary& vocabulary() const { return vocab_; }

    // fixed order: nouns, adjectives, relation words, determiners, stop words
    std::vector<std::string> terminal_words() const {
        std::vector<std::string> out = nouns_;
        out.insert(out.end(), adjectives_.begin(), adjectives_.end());
        for (const auto& rel : relations_) {
            for (const auto& w : rel) {
                bool seen = false;
                for (const auto& prev : out) seen = seen || prev == w;
                if (!seen) out.push_back(w);
            }
        }
        out.insert(out.end(), dets_.begin(), dets_.end());
        for (const char* w : {"there", "is", "was", "you", "can", "see"}) out.emplace_back(w);
        return out;
    }

    // noun block, adjective block, relation block
    std::size_t feature_dim() const {
        return nouns_.size() + adjectives_.size() + relations_.size();
    }

    LatentScene sample_scene(Rng& rng) const {
        LatentScene s;
        const std::size_t n_entities = 1 + rng.below(3);
        std::vector<std::size_t> noun_ids(nouns_.size());
        for (std::size_t i = 0; i < noun_ids.size(); ++i) noun_ids[i] = i;
        rng.shuffle(noun_ids);
        for (std::size_t e = 0; e < n_entities; ++e) {
            s.entities.push_back({noun_ids[e], rng.below(adjectives_.size())});
        }
        for (std::size_t e = 0; e + 1 < n_entities; ++e) {
            s.relations.push_back({rng.below(relations_.size()), e, e + 1});
        }
        return s;
    }

    struct Realization {
        TokenSeq caption;
        SceneGraph graph;
    };

    Realization realize_variant(const LatentScene& s, std::size_t prefix,
                                std::size_t det_mask) const {
        std::vector<std::string> words = prefixes_[prefix];
        SceneGraph g;
        for (std::size_t e = 0; e < s.entities.size(); ++e) {
            if (e > 0) {
                const auto& rel = relations_[s.relations[e - 1].predicate];
                const Span span{words.size(), words.size() + rel.size()};
                g.relations.push_back({span, e - 1, e});
                words.insert(words.end(), rel.begin(), rel.end());
            }
            words.push_back(dets_[(det_mask >> e) & 1]);
            const std::size_t adj_pos = words.size();
            words.push_back(adjectives_[s.entities[e].adj]);
            g.attributes.push_back({{adj_pos, adj_pos + 1}, e});
            g.objects.push_back({words.size(), words.size() + 1});
            words.push_back(nouns_[s.entities[e].noun]);
        }
        std::string joined;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) joined += ' ';
            joined += words[i];
        }
        return {tokenize(vocab_, joined), std::move(g)};
    }

    // Five distinct surface variants of the same scene.
    std::vector<Realization> realize(const LatentScene& s, Rng& rng) const {
        std::vector<std::pair<std::size_t, std::size_t>> variants;
        const std::size_t masks = std::size_t{1} << s.entities.size();
        for (std::size_t p = 0; p < prefixes_.size(); ++p) {
            for (std::size_t m = 0; m < masks; ++m) variants.push_back({p, m});
        }
        rng.shuffle(variants);
        std::vector<Realization> out;
        for (std::size_t i = 0; i < kCaptionsPerImage; ++i) {
            out.push_back(realize_variant(s, variants[i].first, variants[i].second));
        }
        return out;
    }

    // Entity rows encode noun and adjective one-hots; relation rows encode the
    // relation one-hot plus a strong subject and weaker object noun signal.
    // Remaining rows are pure noise. All rows carry small gaussian noise.
    Tensor regions_for(const LatentScene& s, std::size_t r_regions, Rng& rng,
                       double noise_sd = 0.05) const {
        if (s.entities.size() + s.relations.size() > r_regions) {
            throw std::invalid_argument("regions_for: scene needs more rows than configured");
        }
        const std::size_t n_off = 0;
        const std::size_t a_off = nouns_.size();
        const std::size_t r_off = nouns_.size() + adjectives_.size();
        Tensor t = Tensor::zeros({r_regions, feature_dim()});
        for (double& v : t.values) v = rng.normal(0.0, noise_sd);
        std::size_t row = 0;
        for (const auto& e : s.entities) {
            t.at(row, n_off + e.noun) += 1.0;
            t.at(row, a_off + e.adj) += 1.0;
            ++row;
        }
        for (const auto& r : s.relations) {
            t.at(row, r_off + r.predicate) += 1.0;
            t.at(row, n_off + s.entities[r.subject].noun) += 1.0;
            t.at(row, n_off + s.entities[r.object].noun) += 0.5;
            ++row;
        }
        return t;
    }

private:
    std::vector<std::string> nouns_;
    std::vector<std::string> adjectives_;
    std::vector<std::vector<std::string>> relations_;
    std::vector<bool> rel_is_verb_;
    std::vector<std::string> dets_;
    std::vector<std::vector<std::string>> prefixes_;
    RoleLexicon lexicon_;
    Vocabulary vocab_;
};

// Pure function of (grammar, n, seed).
inline Dataset generate_dataset(const Grammar& g, std::size_t n_images, std::uint64_t seed,
                                std::size_t r_regions = 8) {
    Rng rng(seed);
    Dataset ds;
    for (std::size_t i = 0; i < n_images; ++i) {
        LatentScene scene = g.sample_scene(rng);
        RegionImage img;
        img.image_id = static_cast<std::int64_t>(i);
        img.regions = g.regions_for(scene, r_regions, rng);
        for (auto& real : g.realize(scene, rng)) img.captions.push_back(std::move(real.caption));
        ds.images.push_back(std::move(img));
    }
    return ds;
}

// Content view of a graph for comparing parses across surface variants.
inline std::string graph_signature(const SceneGraph& g, const TokenSeq& caption) {
    auto span_text = [&caption](const Span& s) {
        std::string out;
        for (std::size_t i = s.begin; i < s.end; ++i) {
            if (i > s.begin) out += ' ';
            out += caption.surfaces[i];
        }
        return out;
    };
    std::string sig = "objects:";
    for (const Span& o : g.objects) sig += " " + span_text(o);
    sig += " | attributes:";
    for (const Attribute& a : g.attributes) {
        sig += " " + span_text(a.span) + "#" + std::to_string(a.object);
    }
    sig += " | relations:";
    for (const Relation& r : g.relations) {
        sig += " " + span_text(r.span) + "#" + std::to_string(r.subject) + "-" + std::to_string(r.object);
    }
    return sig;
}

} // namespace tags
