#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "tags/dataset.hpp"
#include "tags/nn.hpp"
#include "tags/rng.hpp"
#include "tags/tensor.hpp"

namespace tags {

struct ModelDims {
    std::size_t vocab = 0;
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 64;
    std::size_t regions = 8;
    std::size_t d_img = 80;
    std::size_t max_caption = 24;

    void validate() const {
        if (vocab == 0 || d == 0 || heads == 0 || d_ff == 0 || regions == 0 ||
            d_img == 0 || max_caption == 0) {
            throw std::invalid_argument("model dims: zero dimension");
        }
        if (d % heads != 0) {
            throw std::invalid_argument("model dims: d=" + std::to_string(d) +
                                        " not divisible by heads=" + std::to_string(heads));
        }
    }

    bool operator==(const ModelDims&) const = default;
};

struct EncoderLayer {
    Param wq, bq, wk, bk, wv, bv, wo, bo;
    Param ln1_g, ln1_b;
    Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Param ln2_g, ln2_b;
};

// Pre-norm free residual block: multi-head self-attention, then a two-layer
// feed-forward net, each followed by add + layer norm.
inline Tape::Id encoder_layer_on(Tape& tape, Tape::Id x, const EncoderLayer& l,
                                 std::size_t heads) {
    const std::size_t d = tape.value(x).cols();
    const std::size_t dh = d / heads;
    Tape::Id q = tape.affine(x, l.wq, l.bq);
    Tape::Id k = tape.affine(x, l.wk, l.bk);
    Tape::Id v = tape.affine(x, l.wv, l.bv);
    std::vector<Tape::Id> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tape::Id qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::Id kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::Id vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::Id s = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tape::Id a = tape.softmax_rows(s, 1.0);
        outs.push_back(tape.matmul(a, vh));
    }
    Tape::Id attn = tape.affine(tape.concat_cols(outs), l.wo, l.bo);
    x = tape.layer_norm(tape.add(x, attn), tape.param(l.ln1_g), tape.param(l.ln1_b));
    Tape::Id f = tape.affine(tape.relu(tape.affine(x, l.ffn_w1, l.ffn_b1)), l.ffn_w2, l.ffn_b2);
    return tape.layer_norm(tape.add(x, f), tape.param(l.ln2_g), tape.param(l.ln2_b));
}

// Ids of interesting nodes after one joint forward pass.
struct JointStates {
    Tape::Id seq = 0;     // [R+len, d]
    Tape::Id regions = 0; // [R, d]
    Tape::Id tokens = 0;  // [len, d]
    Tape::Id pooled = 0;  // [1, d]
    std::size_t len = 0;
};

// Single-stream cross-modal transformer. Regions and tokens are projected
// into a shared width, concatenated and encoded jointly; regions carry no
// position signal so their order cannot matter. Four task heads read the
// shared token/pooled states.
struct MatchModel {
    // sharpness of the smooth-max pooling feeding the match head
    static constexpr double kPoolBeta = 4.0;

    ModelDims dims;

    Param tok_embed; // [V, d]
    Param pos_embed; // [max_caption, d]
    Param region_w, region_b;
    std::vector<EncoderLayer> layers;
    Param itm_w, itm_b;                   // pooled -> match score
    Param mlm_w1, mlm_b1, mlm_w2, mlm_b2; // token -> vocab logits
    Param wod_w, wod_b;                   // token -> {replaced, matched}
    Param woc_w1, woc_b1, woc_w2, woc_b2; // token -> vocab logits

    static MatchModel init(const ModelDims& dims, Rng& rng) {
        dims.validate();
        MatchModel m;
        m.dims = dims;
        auto normal = [&rng](std::vector<std::size_t> shape, double sd) {
            Tensor t = Tensor::zeros(std::move(shape));
            for (double& v : t.values) v = rng.normal(0.0, sd);
            return t;
        };
        auto xavier = [&rng](std::size_t in, std::size_t out) {
            const double b = std::sqrt(6.0 / static_cast<double>(in + out));
            Tensor t = Tensor::zeros({in, out});
            for (double& v : t.values) v = rng.uniform(-b, b);
            return t;
        };
        auto zeros = [](std::vector<std::size_t> shape) { return Tensor::zeros(std::move(shape)); };
        auto ones = [](std::vector<std::size_t> shape) { return Tensor::full(std::move(shape), 1.0); };

        const std::size_t d = dims.d;
        m.tok_embed = Param("tok_embed", normal({dims.vocab, d}, 0.1));
        m.pos_embed = Param("pos_embed", normal({dims.max_caption, d}, 0.1));
        m.region_w = Param("region_w", xavier(dims.d_img, d));
        m.region_b = Param("region_b", zeros({1, d}));
        for (std::size_t l = 0; l < dims.layers; ++l) {
            const std::string p = "enc" + std::to_string(l) + ".";
            EncoderLayer el;
            el.wq = Param(p + "wq", xavier(d, d));
            el.bq = Param(p + "bq", zeros({1, d}));
            el.wk = Param(p + "wk", xavier(d, d));
            el.bk = Param(p + "bk", zeros({1, d}));
            el.wv = Param(p + "wv", xavier(d, d));
            el.bv = Param(p + "bv", zeros({1, d}));
            el.wo = Param(p + "wo", xavier(d, d));
            el.bo = Param(p + "bo", zeros({1, d}));
            el.ln1_g = Param(p + "ln1_g", ones({1, d}));
            el.ln1_b = Param(p + "ln1_b", zeros({1, d}));
            el.ffn_w1 = Param(p + "ffn_w1", xavier(d, dims.d_ff));
            el.ffn_b1 = Param(p + "ffn_b1", zeros({1, dims.d_ff}));
            el.ffn_w2 = Param(p + "ffn_w2", xavier(dims.d_ff, d));
            el.ffn_b2 = Param(p + "ffn_b2", zeros({1, d}));
            el.ln2_g = Param(p + "ln2_g", ones({1, d}));
            el.ln2_b = Param(p + "ln2_b", zeros({1, d}));
            m.layers.push_back(std::move(el));
        }
        m.itm_w = Param("itm_w", xavier(d, 1));
        m.itm_b = Param("itm_b", zeros({1, 1}));
        m.mlm_w1 = Param("mlm_w1", xavier(d, d));
        m.mlm_b1 = Param("mlm_b1", zeros({1, d}));
        m.mlm_w2 = Param("mlm_w2", xavier(d, dims.vocab));
        m.mlm_b2 = Param("mlm_b2", zeros({1, dims.vocab}));
        m.wod_w = Param("wod_w", xavier(d, 2));
        m.wod_b = Param("wod_b", zeros({1, 2}));
        m.woc_w1 = Param("woc_w1", xavier(d, d));
        m.woc_b1 = Param("woc_b1", zeros({1, d}));
        m.woc_w2 = Param("woc_w2", xavier(d, dims.vocab));
        m.woc_b2 = Param("woc_b2", zeros({1, dims.vocab}));
        return m;
    }

    std::vector<const Param*> params() const {
        std::vector<const Param*> out = {&tok_embed, &pos_embed, &region_w, &region_b};
        for (const EncoderLayer& l : layers) {
            for (const Param* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                                   &l.ln1_g, &l.ln1_b, &l.ffn_w1, &l.ffn_b1, &l.ffn_w2,
                                   &l.ffn_b2, &l.ln2_g, &l.ln2_b}) {
                out.push_back(p);
            }
        }
        for (const Param* p : {&itm_w, &itm_b, &mlm_w1, &mlm_b1, &mlm_w2, &mlm_b2,
                               &wod_w, &wod_b, &woc_w1, &woc_b1, &woc_w2, &woc_b2}) {
            out.push_back(p);
        }
        return out;
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        for (const Param* p : static_cast<const MatchModel*>(this)->params()) {
            out.push_back(const_cast<Param*>(p));
        }
        return out;
    }

    void zero_grads() const {
        for (const Param* p : params()) p->zero_grad();
    }

    JointStates encode_on(Tape& tape, const RegionImage& image, const TokenSeq& caption) const {
        if (caption.empty()) throw std::invalid_argument("encode: empty caption");
        if (caption.size() > dims.max_caption) {
            throw std::invalid_argument("encode: caption length " + std::to_string(caption.size()) +
                                        " exceeds " + std::to_string(dims.max_caption));
        }
        if (image.regions.rows() != dims.regions || image.regions.cols() != dims.d_img) {
            throw std::invalid_argument("encode: region tensor " + image.regions.shape_str() +
                                        " does not match model " +
                                        Tensor::shape_str({dims.regions, dims.d_img}));
        }
        const std::size_t len = caption.size();
        std::vector<int> pos_ids(len);
        for (std::size_t i = 0; i < len; ++i) pos_ids[i] = static_cast<int>(i);

        Tape::Id tok = tape.embedding_rows(tape.param(tok_embed), caption.ids);
        Tape::Id pos = tape.embedding_rows(tape.param(pos_embed), pos_ids);
        tok = tape.add(tok, pos);
        Tape::Id reg = tape.affine(tape.leaf(image.regions), region_w, region_b);
        Tape::Id x = tape.concat_rows(reg, tok);
        for (const EncoderLayer& l : layers) x = encoder_layer_on(tape, x, l, dims.heads);

        JointStates js;
        js.seq = x;
        js.regions = tape.slice_rows(x, 0, dims.regions);
        js.tokens = tape.slice_rows(x, dims.regions, dims.regions + len);
        // pool over token states only: they are image-conditioned through
        // attention, while raw region states are caption-independent and
        // would dilute the match signal. Smooth-max keeps the score sensitive
        // to a single mismatched token that a plain mean would average away.
        js.pooled = tape.lse_rows(js.tokens, kPoolBeta);
        js.len = len;
        return js;
    }

    Tape::Id itm_head(Tape& tape, const JointStates& js) const {
        return tape.sigmoid(tape.affine(js.pooled, itm_w, itm_b));
    }

    Tape::Id mlm_head(Tape& tape, const JointStates& js) const {
        return tape.affine(tape.relu(tape.affine(js.tokens, mlm_w1, mlm_b1)), mlm_w2, mlm_b2);
    }

    Tape::Id wod_head(Tape& tape, const JointStates& js) const {
        return tape.softmax_rows(tape.affine(js.tokens, wod_w, wod_b), 1.0);
    }

    Tape::Id woc_head(Tape& tape, const JointStates& js) const {
        return tape.affine(tape.relu(tape.affine(js.tokens, woc_w1, woc_b1)), woc_w2, woc_b2);
    }
};

inline double itm_score(const MatchModel& m, const RegionImage& image, const TokenSeq& caption) {
    Tape tape(false);
    JointStates js = m.encode_on(tape, image, caption);
    return tape.value(m.itm_head(tape, js)).values[0];
}

// Vocab logits for every position of a caption containing at least one mask.
inline Tensor mlm_logits(const MatchModel& m, const RegionImage& image, const TokenSeq& masked) {
    bool any = false;
    for (int id : masked.ids) any = any || id == Vocabulary::kMask;
    if (!any) throw std::invalid_argument("mlm_logits: nothing to predict, no mask token present");
    Tape tape(false);
    JointStates js = m.encode_on(tape, image, masked);
    return tape.value(m.mlm_head(tape, js));
}

// [len,2] rows: column 0 = replaced, column 1 = matches the real caption.
inline Tensor wod_probs(const MatchModel& m, const RegionImage& image, const TokenSeq& caption) {
    Tape tape(false);
    JointStates js = m.encode_on(tape, image, caption);
    return tape.value(m.wod_head(tape, js));
}

inline Tensor woc_logits(const MatchModel& m, const RegionImage& image, const TokenSeq& caption) {
    Tape tape(false);
    JointStates js = m.encode_on(tape, image, caption);
    return tape.value(m.woc_head(tape, js));
}

} // namespace tags
