#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tags/model.hpp"
#include "tags/rng.hpp"
#include "tags/scenegraph.hpp"
#include "tags/text.hpp"

namespace tags {

struct MaskedCaption {
    TokenSeq masked;
    std::vector<Span> masked_spans; // sorted by begin
    TokenSeq source;
};

// Masks whole candidate spans, chosen in random order, until at least
// ceil(ratio * len) tokens are covered (always at least one span).
inline MaskedCaption mask_caption(const MaskCandidateSet& candidates, double ratio, Rng& rng) {
    if (candidates.spans.empty()) {
        throw std::runtime_error("unmaskable caption: no candidate spans");
    }
    const TokenSeq& caption = candidates.source;
    const std::size_t len = caption.size();
    auto target = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(len) - 1e-9));
    if (target == 0) target = 1;

    std::vector<Span> order = candidates.spans;
    rng.shuffle(order);
    MaskedCaption mc;
    mc.source = caption;
    mc.masked = caption;
    std::size_t covered = 0;
    for (const Span& s : order) {
        if (covered >= target) break;
        mc.masked_spans.push_back(s);
        covered += s.length();
        for (std::size_t i = s.begin; i < s.end; ++i) {
            mc.masked.ids[i] = Vocabulary::kMask;
            mc.masked.surfaces[i] = "<mask>";
        }
    }
    std::sort(mc.masked_spans.begin(), mc.masked_spans.end(),
              [](const Span& a, const Span& b) { return a.begin < b.begin; });
    return mc;
}

inline MaskedCaption mask_caption(const TokenSeq& caption, const SceneGraph& graph,
                                  double ratio, Rng& rng) {
    return mask_caption(mask_candidates(graph, caption), ratio, rng);
}

// One temperature-softmax draw from a logits row with the reserved ids cut
// out of the support.
inline int sample_token(const Tensor& logits, std::size_t row, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw std::invalid_argument("refill: temperature must be positive");
    const std::size_t v = logits.cols();
    if (v <= Vocabulary::kReserved) throw std::invalid_argument("refill: vocabulary too small");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = Vocabulary::kReserved; j < v; ++j) {
        mx = std::max(mx, logits.at(row, j));
    }
    std::vector<double> w(v, 0.0);
    double z = 0.0;
    for (std::size_t j = Vocabulary::kReserved; j < v; ++j) {
        w[j] = std::exp((logits.at(row, j) - mx) / tau);
        z += w[j];
    }
    double u = rng.uniform() * z;
    for (std::size_t j = Vocabulary::kReserved; j < v; ++j) {
        u -= w[j];
        if (u < 0.0) return static_cast<int>(j);
    }
    return static_cast<int>(v - 1);
}

struct SyntheticNegative {
    TokenSeq caption;
    TokenSeq source;
    std::vector<std::size_t> replaced_positions; // masked positions whose sample differs
    std::vector<int> gold_wod;                   // 1 where token matches the source
    double itm = std::numeric_limits<double>::quiet_NaN();
};

// Samples every masked position in one parallel pass from the given logits.
inline SyntheticNegative refill_from_logits(const Tensor& logits, const MaskedCaption& mc,
                                            const Vocabulary& vocab, double tau, Rng& rng) {
    SyntheticNegative neg;
    neg.source = mc.source;
    neg.caption = mc.source;
    for (const Span& s : mc.masked_spans) {
        for (std::size_t p = s.begin; p < s.end; ++p) {
            const int id = sample_token(logits, p, tau, rng);
            neg.caption.ids[p] = id;
            neg.caption.surfaces[p] = vocab.surface(id);
        }
    }
    neg.gold_wod.resize(neg.caption.size(), 1);
    for (std::size_t j = 0; j < neg.caption.size(); ++j) {
        if (neg.caption.ids[j] != neg.source.ids[j] ||
            neg.caption.surfaces[j] != neg.source.surfaces[j]) {
            neg.gold_wod[j] = 0;
            neg.replaced_positions.push_back(j);
        }
    }
    return neg;
}

inline SyntheticNegative refill(const MatchModel& model, const Vocabulary& vocab,
                                const RegionImage& image, const MaskedCaption& mc,
                                double tau, Rng& rng) {
    return refill_from_logits(mlm_logits(model, image, mc.masked), mc, vocab, tau, rng);
}

// C1 filter: a candidate is a false negative when every replaced surface
// occurs somewhere in the image's annotations. Surfaces, not ids, so unknown
// word collisions cannot trigger it.
inline bool is_false_negative(const SyntheticNegative& neg,
                              const std::vector<TokenSeq>& annotations) {
    std::unordered_set<std::string> seen;
    for (const TokenSeq& a : annotations) {
        for (const std::string& s : a.surfaces) seen.insert(s);
    }
    for (std::size_t p : neg.replaced_positions) {
        if (!seen.count(neg.caption.surfaces[p])) return false;
    }
    return true;
}

struct NegativePool {
    std::vector<SyntheticNegative> items;

    bool empty() const { return items.empty(); }
    std::size_t size() const { return items.size(); }
};

struct GenOptions {
    std::size_t K = 3;
    std::size_t L = 4;
    double tau = 1.0;
    double mask_ratio = 0.15;
    bool word_masking = false;
};

using RefillLogitsFn = std::function<Tensor(const MaskedCaption&)>;

// Shared candidate-assembly loop: K maskings x L refills, drop identity
// captions and false negatives, collapse duplicates keeping the first, cache
// the matcher's score on every kept item. The logits source is pluggable so
// a training step can reuse its own taped forward passes.
inline NegativePool generate_pool_with(const MatchModel& matcher, const Vocabulary& vocab,
                                       const RegionImage& image, const TokenSeq& caption,
                                       const MaskCandidateSet& candidates,
                                       const GenOptions& opts, Rng& rng,
                                       const RefillLogitsFn& logits_fn) {
    if (opts.K < 1 || opts.L < 1) throw std::invalid_argument("generate_pool: K and L must be >= 1");
    NegativePool pool;
    for (std::size_t k = 0; k < opts.K; ++k) {
        MaskedCaption mc = mask_caption(candidates, opts.mask_ratio, rng);
        const Tensor logits = logits_fn(mc);
        for (std::size_t l = 0; l < opts.L; ++l) {
            SyntheticNegative neg = refill_from_logits(logits, mc, vocab, opts.tau, rng);
            if (neg.caption.ids == caption.ids) continue;
            if (is_false_negative(neg, image.captions)) continue;
            bool dup = false;
            for (const SyntheticNegative& prev : pool.items) {
                dup = dup || prev.caption.ids == neg.caption.ids;
            }
            if (dup) continue;
            neg.itm = itm_score(matcher, image, neg.caption);
            pool.items.push_back(std::move(neg));
        }
    }
    return pool;
}

// generator == nullptr shares the matcher (dynamic); otherwise refill logits
// come from the given frozen model while scores still come from the matcher.
inline NegativePool generate_pool(const MatchModel& matcher, const Vocabulary& vocab,
                                  const RegionImage& image, const TokenSeq& caption,
                                  const SceneGraph& graph, const GenOptions& opts, Rng& rng,
                                  const MatchModel* generator = nullptr) {
    const MaskCandidateSet candidates =
        opts.word_masking ? word_mask_candidates(caption) : mask_candidates(graph, caption);
    const MatchModel& gen = generator ? *generator : matcher;
    return generate_pool_with(matcher, vocab, image, caption, candidates, opts, rng,
                              [&gen, &image](const MaskedCaption& mc) {
                                  return mlm_logits(gen, image, mc.masked);
                              });
}

// Top-m by cached score, ties broken by generation order; underfull pools
// are returned whole. Result is ordered best-first.
inline NegativePool mine_top_m(const NegativePool& pool, std::size_t m) {
    if (m < 1) throw std::invalid_argument("mine_top_m: m must be >= 1");
    std::vector<std::size_t> idx(pool.items.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&pool](std::size_t a, std::size_t b) {
        return pool.items[a].itm > pool.items[b].itm;
    });
    NegativePool out;
    for (std::size_t i = 0; i < idx.size() && i < m; ++i) {
        out.items.push_back(pool.items[idx[i]]);
    }
    return out;
}

} // namespace tags
