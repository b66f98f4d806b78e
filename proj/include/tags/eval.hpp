#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tags/generator.hpp"
#include "tags/model.hpp"
#include "tags/scenegraph.hpp"
#include "tags/util.hpp"

namespace tags {

struct RetrievalReport {
    double i2t_r1 = 0.0, i2t_r5 = 0.0, i2t_r10 = 0.0;
    double t2i_r1 = 0.0, t2i_r5 = 0.0, t2i_r10 = 0.0;
    double rsum = 0.0;
};

// Rank with ties broken by stable candidate index: rank(j) counts strictly
// higher scores plus equal scores at earlier indexes.
inline std::size_t rank_of(const std::vector<double>& scores, std::size_t j) {
    std::size_t r = 1;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k] > scores[j] || (scores[k] == scores[j] && k < j)) ++r;
    }
    return r;
}

// Scorer is any callable (const RegionImage&, const TokenSeq&) -> double.
// Both directions are read off one score matrix over (image, caption).
template <typename Scorer>
RetrievalReport recall_at_k_with(Scorer&& score, const Dataset& ds) {
    const std::size_t n = ds.size();
    if (n == 0) throw std::invalid_argument("recall_at_k: empty gallery");
    std::vector<const TokenSeq*> captions;
    std::vector<std::size_t> owner;
    for (std::size_t i = 0; i < n; ++i) {
        for (const TokenSeq& c : ds.images[i].captions) {
            captions.push_back(&c);
            owner.push_back(i);
        }
    }
    const std::size_t nc = captions.size();
    std::vector<std::vector<double>> s(n, std::vector<double>(nc, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nc; ++j) s[i][j] = score(ds.images[i], *captions[j]);
    }

    RetrievalReport rep;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t j = 0; j < nc; ++j) {
            if (owner[j] == i) best = std::min(best, rank_of(s[i], j));
        }
        rep.i2t_r1 += best <= 1;
        rep.i2t_r5 += best <= 5;
        rep.i2t_r10 += best <= 10;
    }
    std::vector<double> col(n);
    for (std::size_t j = 0; j < nc; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = s[i][j];
        const std::size_t r = rank_of(col, owner[j]);
        rep.t2i_r1 += r <= 1;
        rep.t2i_r5 += r <= 5;
        rep.t2i_r10 += r <= 10;
    }
    rep.i2t_r1 /= static_cast<double>(n);
    rep.i2t_r5 /= static_cast<double>(n);
    rep.i2t_r10 /= static_cast<double>(n);
    rep.t2i_r1 /= static_cast<double>(nc);
    rep.t2i_r5 /= static_cast<double>(nc);
    rep.t2i_r10 /= static_cast<double>(nc);
    rep.rsum = 100.0 * (rep.i2t_r1 + rep.i2t_r5 + rep.i2t_r10 +
                        rep.t2i_r1 + rep.t2i_r5 + rep.t2i_r10);
    return rep;
}

inline RetrievalReport recall_at_k(const MatchModel& m, const Dataset& ds) {
    return recall_at_k_with(
        [&m](const RegionImage& img, const TokenSeq& cap) { return itm_score(m, img, cap); }, ds);
}

struct EvalTriple {
    const RegionImage* image = nullptr;
    TokenSeq positive;
    TokenSeq negative;
};

// Fraction of triples where the positive outscores the negative; ties fail.
inline double discrimination_accuracy(const MatchModel& m, const std::vector<EvalTriple>& triples) {
    if (triples.empty()) throw std::invalid_argument("discrimination_accuracy: no triples");
    std::size_t hits = 0;
    for (const EvalTriple& t : triples) {
        hits += itm_score(m, *t.image, t.positive) > itm_score(m, *t.image, t.negative) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(triples.size());
}

struct NegativeSample {
    const RegionImage* image = nullptr;
    SyntheticNegative negative;
};

// Per-token accuracy of thresholding P(matched) at 0.5 (>= 0.5 predicts 1).
inline double wod_accuracy(const MatchModel& m, const std::vector<NegativeSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("wod_accuracy: no samples");
    std::size_t hits = 0, total = 0;
    for (const NegativeSample& s : samples) {
        const Tensor probs = wod_probs(m, *s.image, s.negative.caption);
        for (std::size_t j = 0; j < s.negative.caption.size(); ++j) {
            const int pred = probs.at(j, 1) >= 0.5 ? 1 : 0;
            hits += pred == s.negative.gold_wod[j] ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

// Fraction of replaced positions where the argmax over non-reserved vocab
// (ties to the lowest index) recovers the original token.
inline double woc_accuracy(const MatchModel& m, const std::vector<NegativeSample>& samples) {
    std::size_t hits = 0, total = 0;
    for (const NegativeSample& s : samples) {
        if (s.negative.replaced_positions.empty()) continue;
        const Tensor logits = woc_logits(m, *s.image, s.negative.caption);
        for (std::size_t p : s.negative.replaced_positions) {
            std::size_t best = Vocabulary::kReserved;
            for (std::size_t j = Vocabulary::kReserved + 1; j < logits.cols(); ++j) {
                if (logits.at(p, j) > logits.at(p, best)) best = j;
            }
            hits += static_cast<int>(best) == s.negative.source.ids[p] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("woc_accuracy: no replaced positions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

enum class GapStrategy { InBatch, DatasetWide, Generated };

inline const char* gap_strategy_name(GapStrategy s) {
    switch (s) {
        case GapStrategy::InBatch: return "inbatch";
        case GapStrategy::DatasetWide: return "datasetwide";
        default: return "generated";
    }
}

// Score differences itm(I, T-) - itm(I, T+), one per image, binned at width
// 0.05 over [-1, 1].
struct GapHistogram {
    static constexpr double kBinWidth = 0.05;
    static constexpr std::size_t kBins = 40;

    std::vector<double> values;
    std::array<std::size_t, kBins> counts{};

    void add(double v) {
        values.push_back(v);
        auto bin = static_cast<long>(std::floor((v + 1.0) / kBinWidth));
        if (bin < 0) bin = 0;
        if (bin >= static_cast<long>(kBins)) bin = kBins - 1;
        ++counts[static_cast<std::size_t>(bin)];
    }

    double mean() const {
        if (values.empty()) return 0.0;
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }

    static double bin_left(std::size_t i) { return -1.0 + kBinWidth * static_cast<double>(i); }

    std::string to_csv() const {
        std::string out = "bin_left,count\n";
        for (std::size_t i = 0; i < kBins; ++i) {
            out += g17(bin_left(i));
            out += ',';
            out += std::to_string(counts[i]);
            out += '\n';
        }
        return out;
    }
};

// Per image: positive = first caption; negative = the hardest candidate the
// strategy can offer (a random batch-sized sample of other images' captions,
// every other caption in the dataset, or the image's own generated pool).
// Images whose generated pool is empty contribute no value.
inline GapHistogram difficulty_gap(const MatchModel& m, const Dataset& ds,
                                   const RoleLexicon& lexicon, GapStrategy strategy,
                                   const GenOptions& gen, const Vocabulary& vocab,
                                   std::size_t batch_size, Rng& rng) {
    GapHistogram hist;
    const std::size_t n = ds.size();
    for (std::size_t i = 0; i < n; ++i) {
        const RegionImage& img = ds.images[i];
        const TokenSeq& pos_caption = img.captions[0];
        const double pos = itm_score(m, img, pos_caption);
        double neg = -std::numeric_limits<double>::infinity();
        switch (strategy) {
            case GapStrategy::InBatch: {
                if (n < 2) throw std::invalid_argument("difficulty_gap: need >= 2 images");
                const std::size_t want = std::min(batch_size, n - 1);
                std::vector<std::size_t> others;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j != i) others.push_back(j);
                }
                rng.shuffle(others);
                for (std::size_t b = 0; b < want; ++b) {
                    const RegionImage& other = ds.images[others[b]];
                    const TokenSeq& cap = other.captions[rng.below(other.captions.size())];
                    neg = std::max(neg, itm_score(m, img, cap));
                }
                break;
            }
            case GapStrategy::DatasetWide: {
                if (n < 2) throw std::invalid_argument("difficulty_gap: need >= 2 images");
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    for (const TokenSeq& cap : ds.images[j].captions) {
                        neg = std::max(neg, itm_score(m, img, cap));
                    }
                }
                break;
            }
            case GapStrategy::Generated: {
                const SceneGraph graph = parse_scene_graph(pos_caption, lexicon);
                const NegativePool pool = generate_pool(m, vocab, img, pos_caption, graph, gen, rng);
                if (pool.empty()) continue;
                for (const SyntheticNegative& item : pool.items) neg = std::max(neg, item.itm);
                break;
            }
        }
        hist.add(neg - pos);
    }
    return hist;
}

} // namespace tags
