#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tags/datagen.hpp"
#include "tags/generator.hpp"
#include "tags/model.hpp"
#include "tags/util.hpp"

namespace tags {

struct LossWeights {
    double irtm = 1.0;
    double mlm = 0.1;
    double istm = 0.001;
    double wod = 0.1;
    double woc = 0.1;
    double alpha = 0.2;

    void validate() const {
        for (double v : {irtm, mlm, istm, wod, woc, alpha}) {
            if (!std::isfinite(v) || v < 0.0) {
                throw std::invalid_argument("loss weights: must be finite and non-negative");
            }
        }
    }
};

enum class GeneratorMode { Dynamic, Static };
enum class RetrievalStrategy { Random, InBatchHardest };

inline double triplet_loss(double pos_score, double neg_score, double alpha) {
    return std::max(alpha - pos_score + neg_score, 0.0);
}

// relu(alpha - pos + neg) over [1,1] score nodes
inline Tape::Id triplet_loss_on(Tape& tape, Tape::Id pos, Tape::Id neg, double alpha) {
    return tape.relu(tape.add_const(tape.sub(neg, pos), alpha));
}

struct TrainPair {
    const RegionImage* image = nullptr;
    TokenSeq caption;
    SceneGraph graph;
};

struct RetrievedNegative {
    const RegionImage* image = nullptr; // I-
    TokenSeq caption;                   // T-
};

struct TrainBatch {
    std::vector<TrainPair> pairs;
    std::vector<RetrievedNegative> retrieved; // parallel to pairs
    std::vector<NegativePool> pools;          // filled by training_step
};

// Per-pair (I-, T-) drawn from the other pairs of the batch. Random picks
// uniformly; InBatchHardest picks the highest-scoring item per anchor.
inline std::vector<RetrievedNegative> sample_retrieved_negatives(
    const std::vector<TrainPair>& pairs, const MatchModel& model,
    RetrievalStrategy strategy, Rng& rng) {
    const std::size_t n = pairs.size();
    if (n < 2) throw std::runtime_error("sample_retrieved_negatives: batch of 1");
    std::vector<RetrievedNegative> out(n);

    auto caption_ok = [&pairs](std::size_t i, std::size_t j) {
        return pairs[j].caption.ids != pairs[i].caption.ids;
    };

    if (strategy == RetrievalStrategy::Random) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j = i;
            for (int attempt = 0; attempt < 64 && (j == i || !caption_ok(i, j)); ++attempt) {
                j = rng.below(n);
            }
            if (j == i || !caption_ok(i, j)) {
                for (j = 0; j < n && (j == i || !caption_ok(i, j)); ++j) {}
                if (j == n) throw std::runtime_error("sample_retrieved_negatives: no distinct caption in batch");
            }
            out[i].caption = pairs[j].caption;
            std::size_t j2 = i;
            while (j2 == i) j2 = rng.below(n);
            out[i].image = pairs[j2].image;
        }
        return out;
    }

    // score[i][j] = itm(I_i, T_j), computed once for both directions
    std::vector<std::vector<double>> score(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            score[i][j] = itm_score(model, *pairs[i].image, pairs[j].caption);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best_t = n, best_i = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (caption_ok(i, j) && (best_t == n || score[i][j] > score[i][best_t])) best_t = j;
            if (best_i == n || score[j][i] > score[best_i][i]) best_i = j;
        }
        if (best_t == n) throw std::runtime_error("sample_retrieved_negatives: no distinct caption in batch");
        out[i].caption = pairs[best_t].caption;
        out[i].image = pairs[best_i].image;
    }
    return out;
}

inline double irtm_loss(const MatchModel& m, const RegionImage& image, const TokenSeq& caption,
                        const RegionImage& neg_image, const TokenSeq& neg_caption, double alpha) {
    const double pos = itm_score(m, image, caption);
    return triplet_loss(pos, itm_score(m, image, neg_caption), alpha) +
           triplet_loss(pos, itm_score(m, neg_image, caption), alpha);
}

// Mean image-anchored triplet loss over the pool, scores recomputed with the
// current parameters.
inline double istm_loss(const MatchModel& m, const RegionImage& image, const TokenSeq& caption,
                        const NegativePool& pool, double alpha) {
    if (pool.empty()) throw std::runtime_error("istm_loss: empty pool");
    const double pos = itm_score(m, image, caption);
    double sum = 0.0;
    for (const SyntheticNegative& neg : pool.items) {
        sum += triplet_loss(pos, itm_score(m, image, neg.caption), alpha);
    }
    return sum / static_cast<double>(pool.size());
}

inline double mlm_loss(const MatchModel& m, const RegionImage& image, const MaskedCaption& mc) {
    const Tensor probs = softmax_t(mlm_logits(m, image, mc.masked), 1.0);
    std::vector<bool> mask(mc.source.size(), false);
    for (const Span& s : mc.masked_spans) {
        for (std::size_t i = s.begin; i < s.end; ++i) mask[i] = true;
    }
    return nll_value(probs, mc.source.ids, mask);
}

inline double wod_loss(const MatchModel& m, const RegionImage& image, const SyntheticNegative& neg) {
    const Tensor probs = wod_probs(m, image, neg.caption);
    std::vector<bool> mask(neg.caption.size(), true);
    return nll_value(probs, neg.gold_wod, mask);
}

inline double woc_loss(const MatchModel& m, const RegionImage& image, const SyntheticNegative& neg,
                       bool all_positions = false) {
    if (!all_positions && neg.replaced_positions.empty()) {
        throw std::runtime_error("woc_loss: no replaced positions");
    }
    const Tensor probs = softmax_t(woc_logits(m, image, neg.caption), 1.0);
    std::vector<bool> mask(neg.caption.size(), all_positions);
    for (std::size_t p : neg.replaced_positions) mask[p] = true;
    return nll_value(probs, neg.source.ids, mask);
}

struct LossParts {
    double irtm = 0.0;
    double mlm = 0.0;
    double istm = 0.0;
    double wod = 0.0;
    double woc = 0.0;
};

inline double total_loss(const LossParts& p, const LossWeights& w) {
    return w.irtm * p.irtm + w.mlm * p.mlm + w.istm * p.istm + w.wod * p.wod + w.woc * p.woc;
}

// Adam with bias correction and decoupled weight decay, after a global-norm
// clip of the raw gradients; grads are zeroed after each apply. Moment
// buffers are allocated on first use and keyed by parameter order.
struct Optimizer {
    double lr = 0.01;
    double clip = 5.0;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    Optimizer() = default;
    Optimizer(double lr_in, double clip_in, double wd = 0.0)
        : lr(lr_in), clip(clip_in), weight_decay(wd) {}

    void apply(MatchModel& m) {
        const auto params = m.params();
        if (m1_.empty()) {
            for (const Param* p : params) {
                m1_.emplace_back(p->value.size(), 0.0);
                m2_.emplace_back(p->value.size(), 0.0);
            }
        }
        if (m1_.size() != params.size()) {
            throw std::logic_error("optimizer: model changed between steps");
        }
        double norm2 = 0.0;
        for (const Param* p : params) {
            for (double g : p->grad.values) norm2 += g * g;
        }
        double scale = 1.0;
        const double norm = std::sqrt(norm2);
        if (clip > 0.0 && norm > clip) scale = clip / norm;
        ++steps_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param* p = params[i];
            if (m1_[i].size() != p->value.size()) {
                throw std::logic_error("optimizer: parameter shape changed between steps");
            }
            for (std::size_t j = 0; j < p->value.size(); ++j) {
                const double g = scale * p->grad.values[j];
                m1_[i][j] = beta1 * m1_[i][j] + (1.0 - beta1) * g;
                m2_[i][j] = beta2 * m2_[i][j] + (1.0 - beta2) * g * g;
                p->value.values[j] -= lr * ((m1_[i][j] / c1) / (std::sqrt(m2_[i][j] / c2) + eps) +
                                            weight_decay * p->value.values[j]);
            }
            p->zero_grad();
        }
    }

private:
    std::vector<std::vector<double>> m1_, m2_;
    std::uint64_t steps_ = 0;
};

struct StepOptions {
    LossWeights weights;
    GenOptions gen;
    std::size_t m = 2;
    GeneratorMode mode = GeneratorMode::Dynamic;
    bool woc_all_positions = false;
};

struct StepReport {
    double l_irtm = 0.0;
    double l_mlm = 0.0;
    double l_istm = 0.0;
    double l_wod = 0.0;
    double l_woc = 0.0;
    double mean_pool_size = 0.0;
    double mean_gap = 0.0;
    double total = 0.0;
};

// One full step: per pair, generate the negative pool (sharing the live MLM
// forward in dynamic mode, using the frozen snapshot in static mode), build
// the weighted loss on one tape and accumulate gradients, then apply a
// single optimizer update over the batch mean.
inline StepReport training_step(MatchModel& model, TrainBatch& batch, const StepOptions& opts,
                                const MatchModel* snapshot, const Vocabulary& vocab,
                                Optimizer& optim, Rng& rng) {
    opts.weights.validate();
    const std::size_t n = batch.pairs.size();
    if (n == 0) throw std::invalid_argument("training_step: empty batch");
    if (batch.retrieved.size() != n) {
        throw std::invalid_argument("training_step: retrieved negatives missing");
    }
    if (opts.mode == GeneratorMode::Static && snapshot == nullptr) {
        throw std::invalid_argument("training_step: static mode requires a snapshot model");
    }
    batch.pools.assign(n, NegativePool{});
    model.zero_grads();

    const double inv_n = 1.0 / static_cast<double>(n);
    const LossWeights& w = opts.weights;
    StepReport rep;
    std::size_t gap_count = 0, pool_pairs = 0;

    for (std::size_t i = 0; i < n; ++i) {
        const TrainPair& pair = batch.pairs[i];
        const RegionImage& img = *pair.image;
        Tape tape(true);

        const JointStates js_pos = model.encode_on(tape, img, pair.caption);
        const Tape::Id s_pos = model.itm_head(tape, js_pos);
        const Tape::Id s_tneg =
            model.itm_head(tape, model.encode_on(tape, img, batch.retrieved[i].caption));
        const Tape::Id s_ineg =
            model.itm_head(tape, model.encode_on(tape, *batch.retrieved[i].image, pair.caption));
        const Tape::Id l_irtm = tape.add(triplet_loss_on(tape, s_pos, s_tneg, w.alpha),
                                         triplet_loss_on(tape, s_pos, s_ineg, w.alpha));

        const MaskCandidateSet candidates = opts.gen.word_masking
                                                ? word_mask_candidates(pair.caption)
                                                : mask_candidates(pair.graph, pair.caption);

        // generation: in dynamic mode the refill logits and the MLM loss come
        // from taped live forwards; in static mode both come from the frozen
        // snapshot and the MLM term carries no gradient
        std::vector<Tape::Id> mlm_nodes;
        double mlm_static_sum = 0.0;
        std::size_t masking_count = 0;
        auto logits_fn = [&](const MaskedCaption& mc) -> Tensor {
            ++masking_count;
            std::vector<bool> mask(mc.source.size(), false);
            for (const Span& s : mc.masked_spans) {
                for (std::size_t p = s.begin; p < s.end; ++p) mask[p] = true;
            }
            if (opts.mode == GeneratorMode::Dynamic) {
                const JointStates js = model.encode_on(tape, img, mc.masked);
                const Tape::Id logits = model.mlm_head(tape, js);
                const Tape::Id probs = tape.softmax_rows(logits, 1.0);
                mlm_nodes.push_back(tape.nll(probs, mc.source.ids, mask));
                return tape.value(logits);
            }
            const Tensor logits = mlm_logits(*snapshot, img, mc.masked);
            mlm_static_sum += nll_value(softmax_t(logits, 1.0), mc.source.ids, mask);
            return logits;
        };
        batch.pools[i] = generate_pool_with(model, vocab, img, pair.caption, candidates,
                                            opts.gen, rng, logits_fn);
        const NegativePool mined = mine_top_m(batch.pools[i], opts.m);

        Tape::Id pair_loss = tape.scale(l_irtm, w.irtm);
        double pair_mlm = 0.0;
        if (!mlm_nodes.empty()) {
            Tape::Id msum = mlm_nodes[0];
            for (std::size_t k = 1; k < mlm_nodes.size(); ++k) msum = tape.add(msum, mlm_nodes[k]);
            const Tape::Id l_mlm = tape.scale(msum, 1.0 / static_cast<double>(mlm_nodes.size()));
            pair_mlm = tape.value(l_mlm).values[0];
            pair_loss = tape.add(pair_loss, tape.scale(l_mlm, w.mlm));
        } else if (masking_count > 0) {
            pair_mlm = mlm_static_sum / static_cast<double>(masking_count);
        }
        rep.l_mlm += pair_mlm;

        double pair_istm = 0.0, pair_wod = 0.0, pair_woc = 0.0;
        if (!mined.empty()) {
            std::vector<Tape::Id> istm_nodes, wod_nodes, woc_nodes;
            for (const SyntheticNegative& neg : mined.items) {
                const JointStates js_n = model.encode_on(tape, img, neg.caption);
                const Tape::Id s_n = model.itm_head(tape, js_n);
                istm_nodes.push_back(triplet_loss_on(tape, s_pos, s_n, w.alpha));
                std::vector<bool> all(neg.caption.size(), true);
                wod_nodes.push_back(tape.nll(model.wod_head(tape, js_n), neg.gold_wod, all));
                std::vector<bool> woc_mask(neg.caption.size(), opts.woc_all_positions);
                for (std::size_t p : neg.replaced_positions) woc_mask[p] = true;
                const Tape::Id woc_probs = tape.softmax_rows(model.woc_head(tape, js_n), 1.0);
                woc_nodes.push_back(tape.nll(woc_probs, neg.source.ids, woc_mask));
            }
            auto mean_of = [&tape](std::vector<Tape::Id>& nodes) {
                Tape::Id s = nodes[0];
                for (std::size_t k = 1; k < nodes.size(); ++k) s = tape.add(s, nodes[k]);
                return tape.scale(s, 1.0 / static_cast<double>(nodes.size()));
            };
            const Tape::Id l_istm = mean_of(istm_nodes);
            const Tape::Id l_wod = mean_of(wod_nodes);
            const Tape::Id l_woc = mean_of(woc_nodes);
            pair_istm = tape.value(l_istm).values[0];
            pair_wod = tape.value(l_wod).values[0];
            pair_woc = tape.value(l_woc).values[0];
            pair_loss = tape.add(pair_loss, tape.scale(l_istm, w.istm));
            pair_loss = tape.add(pair_loss, tape.scale(l_wod, w.wod));
            pair_loss = tape.add(pair_loss, tape.scale(l_woc, w.woc));
            ++pool_pairs;
        }

        tape.backward(tape.scale(pair_loss, inv_n));

        rep.l_irtm += tape.value(l_irtm).values[0];
        rep.l_istm += pair_istm;
        rep.l_wod += pair_wod;
        rep.l_woc += pair_woc;
        rep.mean_pool_size += static_cast<double>(batch.pools[i].size());
        if (!batch.pools[i].empty()) {
            double hardest = -std::numeric_limits<double>::infinity();
            for (const SyntheticNegative& neg : batch.pools[i].items) {
                hardest = std::max(hardest, neg.itm);
            }
            rep.mean_gap += hardest - tape.value(s_pos).values[0];
            ++gap_count;
        }
    }

    optim.apply(model);

    rep.l_irtm /= static_cast<double>(n);
    rep.l_mlm /= static_cast<double>(n);
    rep.mean_pool_size /= static_cast<double>(n);
    if (pool_pairs > 0) {
        rep.l_istm /= static_cast<double>(pool_pairs);
        rep.l_wod /= static_cast<double>(pool_pairs);
        rep.l_woc /= static_cast<double>(pool_pairs);
    }
    if (gap_count > 0) rep.mean_gap /= static_cast<double>(gap_count);
    rep.total = total_loss({rep.l_irtm, rep.l_mlm, rep.l_istm, rep.l_wod, rep.l_woc}, w);
    return rep;
}

// Masked-language warmup step used to pretrain the static generator: K
// maskings per pair, MLM loss only.
inline double warmup_step(MatchModel& model, const std::vector<TrainPair>& pairs,
                          const GenOptions& gen, Optimizer& optim, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("warmup_step: empty batch");
    model.zero_grads();
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    double report = 0.0;
    for (const TrainPair& pair : pairs) {
        Tape tape(true);
        const MaskCandidateSet candidates =
            gen.word_masking ? word_mask_candidates(pair.caption)
                             : mask_candidates(pair.graph, pair.caption);
        std::vector<Tape::Id> nodes;
        for (std::size_t k = 0; k < gen.K; ++k) {
            const MaskedCaption mc = mask_caption(candidates, gen.mask_ratio, rng);
            std::vector<bool> mask(mc.source.size(), false);
            for (const Span& s : mc.masked_spans) {
                for (std::size_t p = s.begin; p < s.end; ++p) mask[p] = true;
            }
            const JointStates js = model.encode_on(tape, *pair.image, mc.masked);
            const Tape::Id probs = tape.softmax_rows(model.mlm_head(tape, js), 1.0);
            nodes.push_back(tape.nll(probs, mc.source.ids, mask));
        }
        Tape::Id sum = nodes[0];
        for (std::size_t k = 1; k < nodes.size(); ++k) sum = tape.add(sum, nodes[k]);
        const Tape::Id loss = tape.scale(sum, 1.0 / static_cast<double>(nodes.size()));
        report += tape.value(loss).values[0];
        tape.backward(tape.scale(loss, inv_n));
    }
    optim.apply(model);
    return report * inv_n;
}

// Captions pre-parsed once per dataset so batch assembly is cheap.
struct ParsedDataset {
    const Dataset* data = nullptr;
    std::vector<std::vector<SceneGraph>> graphs; // [image][caption]

    ParsedDataset() = default;
    ParsedDataset(const Dataset& ds, const RoleLexicon& lexicon) : data(&ds) {
        graphs.reserve(ds.size());
        for (const RegionImage& img : ds.images) {
            std::vector<SceneGraph> per;
            for (const TokenSeq& cap : img.captions) {
                per.push_back(parse_scene_graph(cap, lexicon));
            }
            graphs.push_back(std::move(per));
        }
    }
};

// Fresh per-step noise on copies of the batch images; pairs are repointed at
// the copies so every downstream consumer sees the jittered features.
inline std::vector<RegionImage> jitter_regions(std::vector<TrainPair>& pairs, double sigma,
                                               Rng& rng) {
    std::vector<RegionImage> owned;
    if (sigma <= 0.0) return owned;
    owned.reserve(pairs.size());
    for (TrainPair& p : pairs) {
        owned.push_back(*p.image);
        for (double& v : owned.back().regions.values) v += rng.normal(0.0, sigma);
        p.image = &owned.back();
    }
    return owned;
}

// Distinct images, one uniformly chosen caption each.
inline std::vector<TrainPair> sample_batch(const ParsedDataset& pd, std::size_t batch_size,
                                           Rng& rng) {
    const Dataset& ds = *pd.data;
    if (ds.size() == 0) throw std::invalid_argument("sample_batch: empty dataset");
    const std::size_t n = std::min(batch_size, ds.size());
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<TrainPair> pairs;
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t img = order[b];
        const std::size_t cap = rng.below(ds.images[img].captions.size());
        pairs.push_back({&ds.images[img], ds.images[img].captions[cap], pd.graphs[img][cap]});
    }
    return pairs;
}

struct TrainSettings {
    StepOptions step;
    RetrievalStrategy strategy = RetrievalStrategy::Random;
    std::size_t steps = 500;
    std::size_t batch_size = 8;
    std::size_t static_warmup = 300;
    double lr = 0.01;
    double clip = 5.0;
    double weight_decay = 0.0;
    // train-time sigma of fresh Gaussian noise added to region features each
    // step, so fixed per-image noise cannot serve as an identity fingerprint
    double region_jitter = 0.0;
    std::uint64_t seed = 1;
    ModelDims dims;
};

struct TrainRun {
    MatchModel model;
    std::optional<MatchModel> snapshot;
    std::vector<StepReport> reports;
    std::vector<double> warmup_losses;
};

inline std::string metrics_csv(const std::vector<StepReport>& reports) {
    std::string out = "step,l_irtm,l_mlm,l_istm,l_wod,l_woc,mean_pool_size,mean_gap\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const StepReport& r = reports[i];
        out += std::to_string(i + 1);
        for (double v : {r.l_irtm, r.l_mlm, r.l_istm, r.l_wod, r.l_woc, r.mean_pool_size, r.mean_gap}) {
            out += ',';
            out += g17(v);
        }
        out += '\n';
    }
    return out;
}

// Full run: init from seed, MLM-only warmup + snapshot in static mode, then
// the configured number of full steps.
inline TrainRun run_training(const Dataset& ds, const Vocabulary& vocab,
                             const RoleLexicon& lexicon, const TrainSettings& s) {
    Rng rng(s.seed);
    ModelDims dims = s.dims;
    dims.vocab = vocab.size();
    TrainRun run{MatchModel::init(dims, rng), std::nullopt, {}, {}};
    const ParsedDataset pd(ds, lexicon);
    Optimizer optim{s.lr, s.clip, s.weight_decay};

    if (s.step.mode == GeneratorMode::Static) {
        for (std::size_t t = 0; t < s.static_warmup; ++t) {
            auto pairs = sample_batch(pd, s.batch_size, rng);
            const auto held = jitter_regions(pairs, s.region_jitter, rng);
            run.warmup_losses.push_back(warmup_step(run.model, pairs, s.step.gen, optim, rng));
        }
        run.snapshot = run.model;
    }

    const MatchModel* snap = run.snapshot ? &*run.snapshot : nullptr;
    for (std::size_t t = 0; t < s.steps; ++t) {
        TrainBatch batch;
        batch.pairs = sample_batch(pd, s.batch_size, rng);
        const auto held = jitter_regions(batch.pairs, s.region_jitter, rng);
        batch.retrieved = sample_retrieved_negatives(batch.pairs, run.model, s.strategy, rng);
        run.reports.push_back(training_step(run.model, batch, s.step, snap, vocab, optim, rng));
    }
    return run;
}

} // namespace tags
