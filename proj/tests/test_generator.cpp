#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "tags/datagen.hpp"
#include "tags/generator.hpp"
#include "tags/model.hpp"

using tags::GenOptions;
using tags::Grammar;
using tags::MaskCandidateSet;
using tags::MaskedCaption;
using tags::MatchModel;
using tags::NegativePool;
using tags::RegionImage;
using tags::Rng;
using tags::SceneGraph;
using tags::Span;
using tags::SyntheticNegative;
using tags::Tensor;
using tags::TokenSeq;
using tags::Vocabulary;

namespace {

const Grammar& grammar() {
    static Grammar g;
    return g;
}

TokenSeq toks(const std::string& text) { return tags::tokenize(grammar().vocabulary(), text); }

SceneGraph parse(const TokenSeq& t) { return tags::parse_scene_graph(t, grammar().role_lexicon()); }

// Logits that force one token everywhere.
Tensor peaked_logits(std::size_t len, int id) {
    Tensor t = Tensor::full({len, grammar().vocabulary().size()}, -1e9);
    for (std::size_t i = 0; i < len; ++i) t.at(i, static_cast<std::size_t>(id)) = 0.0;
    return t;
}

MatchModel gen_model(std::uint64_t seed = 1) {
    return testutil::small_model(grammar().vocabulary().size(), seed, 8, 1, 2, 8, 80);
}

bool same_negative(const SyntheticNegative& a, const SyntheticNegative& b) {
    return a.caption == b.caption && a.source == b.source &&
           a.replaced_positions == b.replaced_positions && a.gold_wod == b.gold_wod &&
           ((std::isnan(a.itm) && std::isnan(b.itm)) || a.itm == b.itm);
}

} // namespace

TEST_CASE("masking covers at least the requested token share") {
    Rng rng(5);
    TokenSeq c = toks("a young man carrying a red ball");
    SceneGraph g = parse(c);
    for (int trial = 0; trial < 100; ++trial) {
        MaskedCaption mc = tags::mask_caption(c, g, 0.15, rng);
        std::size_t masked = 0;
        for (int id : mc.masked.ids) masked += id == Vocabulary::kMask ? 1 : 0;
        REQUIRE(masked == 2);
        REQUIRE(mc.source == c);
        std::size_t span_total = 0;
        for (const Span& s : mc.masked_spans) {
            span_total += s.length();
            for (std::size_t i = s.begin; i < s.end; ++i) {
                REQUIRE(mc.masked.ids[i] == Vocabulary::kMask);
                REQUIRE(mc.masked.surfaces[i] == "<mask>");
            }
        }
        REQUIRE(span_total == masked);
        for (std::size_t i = 1; i < mc.masked_spans.size(); ++i) {
            REQUIRE(mc.masked_spans[i - 1].begin < mc.masked_spans[i].begin);
        }
        for (std::size_t i = 0; i < c.size(); ++i) {
            bool in_span = false;
            for (const Span& s : mc.masked_spans) in_span = in_span || (i >= s.begin && i < s.end);
            if (!in_span) {
                REQUIRE(mc.masked.ids[i] == c.ids[i]);
                REQUIRE(mc.masked.surfaces[i] == c.surfaces[i]);
            }
        }
    }
}

TEST_CASE("integral mask targets do not round up") {
    // 20 tokens at ratio 0.15 needs exactly 3, not 4.
    MaskCandidateSet set;
    set.source = toks("man man man man man man man man man man "
                      "man man man man man man man man man man");
    for (std::size_t i = 0; i < 20; ++i) set.spans.push_back({i, i + 1});
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        MaskedCaption mc = tags::mask_caption(set, 0.15, rng);
        REQUIRE(mc.masked_spans.size() == 3);
    }
}

TEST_CASE("at least one span is always masked") {
    TokenSeq c = toks("a man");
    SceneGraph g = parse(c);
    Rng rng(9);
    MaskedCaption mc = tags::mask_caption(c, g, 0.01, rng);
    REQUIRE(mc.masked_spans.size() == 1);
    REQUIRE(mc.masked.ids[1] == Vocabulary::kMask);
}

TEST_CASE("multi word spans are masked whole") {
    TokenSeq c = toks("the dog next to the cat");
    SceneGraph g = parse(c);
    Rng rng(11);
    bool saw_relation_mask = false;
    for (int trial = 0; trial < 60; ++trial) {
        MaskedCaption mc = tags::mask_caption(c, g, 0.15, rng);
        for (const Span& s : mc.masked_spans) {
            if (s == Span{2, 4}) {
                saw_relation_mask = true;
                REQUIRE(mc.masked.ids[2] == Vocabulary::kMask);
                REQUIRE(mc.masked.ids[3] == Vocabulary::kMask);
            }
        }
    }
    REQUIRE(saw_relation_mask);
}

TEST_CASE("captions without candidate spans cannot be masked") {
    TokenSeq c = toks("there is the");
    SceneGraph g = parse(c);
    Rng rng(13);
    REQUIRE_THROWS_WITH(tags::mask_caption(c, g, 0.15, rng),
                        "unmaskable caption: no candidate spans");
}

TEST_CASE("sampling never returns reserved ids") {
    Rng rng(17);
    Tensor logits = Tensor::zeros({1, 12});
    logits.at(0, 0) = 50.0;
    logits.at(0, 2) = 50.0;
    for (int trial = 0; trial < 500; ++trial) {
        const int id = tags::sample_token(logits, 0, 1.0, rng);
        REQUIRE(id >= Vocabulary::kReserved);
        REQUIRE(id < 12);
    }
}

TEST_CASE("near zero temperature degenerates to arg max") {
    Rng rng(19);
    Tensor logits = Tensor::zeros({1, 12});
    logits.at(0, 7) = 3.0;
    logits.at(0, 9) = 1.0;
    for (int trial = 0; trial < 200; ++trial) {
        REQUIRE(tags::sample_token(logits, 0, 0.01, rng) == 7);
    }
}

TEST_CASE("sampling frequencies follow the softmax weights") {
    Rng rng(23);
    Tensor logits = Tensor::zeros({1, 7});
    logits.at(0, 5) = 1.0;
    logits.at(0, 6) = 0.0;
    const double p5 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    int hits = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) hits += tags::sample_token(logits, 0, 1.0, rng) == 5 ? 1 : 0;
    const double freq = static_cast<double>(hits) / n;
    const double sigma = std::sqrt(p5 * (1.0 - p5) / n);
    REQUIRE(std::abs(freq - p5) < 3.0 * sigma);
}

TEST_CASE("sampling validates its inputs") {
    Rng rng(29);
    Tensor logits = Tensor::zeros({1, 12});
    REQUIRE_THROWS_AS(tags::sample_token(logits, 0, 0.0, rng), std::invalid_argument);
    Tensor tiny = Tensor::zeros({1, 5});
    REQUIRE_THROWS_AS(tags::sample_token(tiny, 0, 1.0, rng), std::invalid_argument);
}

TEST_CASE("refill replaces exactly the masked positions") {
    TokenSeq c = toks("a young man carrying a red ball");
    MaskCandidateSet set;
    set.source = c;
    set.spans = {{2, 3}, {6, 7}};
    Rng rng(31);
    MaskedCaption mc = tags::mask_caption(set, 0.3, rng);
    REQUIRE(mc.masked_spans.size() == 2);

    const int dog = grammar().vocabulary().id("dog");
    SyntheticNegative neg =
        tags::refill_from_logits(peaked_logits(c.size(), dog), mc, grammar().vocabulary(), 1.0, rng);
    REQUIRE(neg.source == c);
    REQUIRE(neg.caption.ids[2] == dog);
    REQUIRE(neg.caption.ids[6] == dog);
    REQUIRE(neg.caption.surfaces[2] == "dog");
    for (std::size_t i : {0, 1, 3, 4, 5}) {
        REQUIRE(neg.caption.ids[i] == c.ids[i]);
    }
    REQUIRE(neg.replaced_positions == std::vector<std::size_t>{2, 6});
    REQUIRE(neg.gold_wod == std::vector<int>{1, 1, 0, 1, 1, 1, 0});
}

TEST_CASE("resampling the original token does not count as replaced") {
    TokenSeq c = toks("a young man carrying a red ball");
    MaskCandidateSet set;
    set.source = c;
    set.spans = {{2, 3}};
    Rng rng(37);
    MaskedCaption mc = tags::mask_caption(set, 0.1, rng);
    const int man = grammar().vocabulary().id("man");
    SyntheticNegative neg =
        tags::refill_from_logits(peaked_logits(c.size(), man), mc, grammar().vocabulary(), 1.0, rng);
    REQUIRE(neg.caption.ids == c.ids);
    REQUIRE(neg.replaced_positions.empty());
    REQUIRE(neg.gold_wod == std::vector<int>(7, 1));
}

TEST_CASE("candidates whose replacements all appear in the annotations are false negatives") {
    std::vector<TokenSeq> annotations = {
        toks("a man on a beach"), toks("a woman on a beach"), toks("a man near water"),
        toks("the man stands"), toks("a person on sand")};

    TokenSeq source = toks("a man on a beach");

    SyntheticNegative woman;
    woman.source = source;
    woman.caption = toks("a woman on a beach");
    woman.replaced_positions = {1};
    REQUIRE(tags::is_false_negative(woman, annotations));

    SyntheticNegative mountain;
    mountain.source = source;
    mountain.caption = toks("a man on a mountain");
    mountain.replaced_positions = {4};
    REQUIRE_FALSE(tags::is_false_negative(mountain, annotations));

    SyntheticNegative untouched;
    untouched.source = source;
    untouched.caption = source;
    REQUIRE(tags::is_false_negative(untouched, annotations));
}

TEST_CASE("mixed replacements survive when any word is novel") {
    std::vector<TokenSeq> annotations = {toks("a man on a beach")};
    SyntheticNegative neg;
    neg.source = toks("a man on a beach");
    neg.caption = toks("a man on a mountain");
    neg.caption.ids[1] = grammar().vocabulary().id("man");
    neg.replaced_positions = {4};
    neg.caption.surfaces[4] = "mountain";
    REQUIRE_FALSE(tags::is_false_negative(neg, annotations));

    neg.caption = toks("the man on a beach");
    neg.replaced_positions = {0};
    REQUIRE(tags::is_false_negative(neg, {toks("the woman"), toks("a man on a beach")}));
}

TEST_CASE("pool generation skips identities duplicates and false negatives") {
    MatchModel m = gen_model();
    Rng img_rng(41);
    RegionImage img = testutil::random_image(m, img_rng);
    TokenSeq c = toks("a young man carrying a red ball");
    img.captions = {c, toks("the young man carrying a red ball"),
                    toks("there is a young man carrying a red ball"),
                    toks("a young man carrying the red ball"),
                    toks("you can see a young man carrying a red ball")};
    MaskCandidateSet set;
    set.source = c;
    set.spans = {{2, 3}};
    GenOptions opts;
    opts.K = 3;
    opts.L = 4;
    opts.mask_ratio = 0.1;

    SECTION("constant novel refill collapses to one candidate") {
        Rng rng(43);
        const int dog = grammar().vocabulary().id("dog");
        NegativePool pool = tags::generate_pool_with(
            m, grammar().vocabulary(), img, c, set, opts, rng,
            [&](const MaskedCaption& mc) { return peaked_logits(mc.masked.size(), dog); });
        REQUIRE(pool.size() == 1);
        REQUIRE(pool.items[0].caption.ids[2] == dog);
        REQUIRE(pool.items[0].itm ==
                tags::itm_score(m, img, pool.items[0].caption));
    }
    SECTION("identity refills produce an empty pool") {
        Rng rng(47);
        const int man = grammar().vocabulary().id("man");
        NegativePool pool = tags::generate_pool_with(
            m, grammar().vocabulary(), img, c, set, opts, rng,
            [&](const MaskedCaption& mc) { return peaked_logits(mc.masked.size(), man); });
        REQUIRE(pool.empty());
    }
    SECTION("refills present in the annotations are filtered") {
        Rng rng(53);
        const int young = grammar().vocabulary().id("young");
        NegativePool pool = tags::generate_pool_with(
            m, grammar().vocabulary(), img, c, set, opts, rng,
            [&](const MaskedCaption& mc) { return peaked_logits(mc.masked.size(), young); });
        REQUIRE(pool.empty());
    }
}

TEST_CASE("pool generation replays exactly from its seed") {
    MatchModel m = gen_model(3);
    Rng img_rng(59);
    RegionImage img = testutil::random_image(m, img_rng);
    tags::Dataset ds = tags::generate_dataset(grammar(), 1, 61, m.dims.regions);
    img.captions = ds.images[0].captions;
    const TokenSeq& c = img.captions[0];
    SceneGraph g = parse(c);
    GenOptions opts;

    Rng ra(67), rb(67);
    NegativePool a = tags::generate_pool(m, grammar().vocabulary(), img, c, g, opts, ra);
    NegativePool b = tags::generate_pool(m, grammar().vocabulary(), img, c, g, opts, rb);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(same_negative(a.items[i], b.items[i]));
    }

    // Hand replay of the documented candidate assembly loop.
    Rng rc(67);
    const MaskCandidateSet candidates = tags::mask_candidates(g, c);
    NegativePool manual;
    for (std::size_t k = 0; k < opts.K; ++k) {
        MaskedCaption mc = tags::mask_caption(candidates, opts.mask_ratio, rc);
        const Tensor logits = tags::mlm_logits(m, img, mc.masked);
        for (std::size_t l = 0; l < opts.L; ++l) {
            SyntheticNegative neg =
                tags::refill_from_logits(logits, mc, grammar().vocabulary(), opts.tau, rc);
            if (neg.caption.ids == c.ids) continue;
            if (tags::is_false_negative(neg, img.captions)) continue;
            bool dup = false;
            for (const auto& prev : manual.items) dup = dup || prev.caption.ids == neg.caption.ids;
            if (dup) continue;
            neg.itm = tags::itm_score(m, img, neg.caption);
            manual.items.push_back(std::move(neg));
        }
    }
    REQUIRE(manual.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(same_negative(manual.items[i], a.items[i]));
    }
}

TEST_CASE("pool invariants hold over random scenes") {
    MatchModel m = gen_model(5);
    Rng rng(71);
    tags::Dataset ds = tags::generate_dataset(grammar(), 6, 73, m.dims.regions);
    GenOptions opts;
    for (auto& img : ds.images) {
        const TokenSeq& c = img.captions[0];
        NegativePool pool =
            tags::generate_pool(m, grammar().vocabulary(), img, c, parse(c), opts, rng);
        REQUIRE(pool.size() <= opts.K * opts.L);
        std::set<std::vector<int>> seen;
        for (const auto& neg : pool.items) {
            REQUIRE(neg.caption.ids != c.ids);
            REQUIRE_FALSE(tags::is_false_negative(neg, img.captions));
            REQUIRE(seen.insert(neg.caption.ids).second);
            REQUIRE(neg.itm >= 0.0);
            REQUIRE(neg.itm <= 1.0);
            REQUIRE(neg.gold_wod.size() == neg.caption.size());
            for (std::size_t p : neg.replaced_positions) {
                REQUIRE(neg.gold_wod[p] == 0);
                REQUIRE(neg.caption.ids[p] != neg.source.ids[p]);
            }
        }
    }
}

TEST_CASE("word masking widens the candidate set to every token") {
    MatchModel m = gen_model(7);
    Rng rng(79);
    tags::Dataset ds = tags::generate_dataset(grammar(), 1, 83, m.dims.regions);
    auto& img = ds.images[0];
    const TokenSeq& c = img.captions[0];
    GenOptions opts;
    opts.word_masking = true;
    NegativePool pool = tags::generate_pool(m, grammar().vocabulary(), img, c, SceneGraph{}, opts, rng);
    for (const auto& neg : pool.items) {
        REQUIRE(neg.caption.size() == c.size());
    }
}

TEST_CASE("mining keeps the hardest candidates best first") {
    NegativePool pool;
    for (double s : {0.2, 0.9, 0.5}) {
        SyntheticNegative n;
        n.caption = toks("a man");
        n.caption.ids[1] = static_cast<int>(100 * s);
        n.itm = s;
        pool.items.push_back(n);
    }
    NegativePool top = tags::mine_top_m(pool, 2);
    REQUIRE(top.size() == 2);
    REQUIRE(top.items[0].itm == 0.9);
    REQUIRE(top.items[1].itm == 0.5);

    NegativePool all = tags::mine_top_m(pool, 10);
    REQUIRE(all.size() == 3);
    REQUIRE(all.items[0].itm == 0.9);
    REQUIRE(all.items[2].itm == 0.2);

    REQUIRE_THROWS_AS(tags::mine_top_m(pool, 0), std::invalid_argument);
}

TEST_CASE("mining breaks ties by generation order") {
    NegativePool pool;
    int tag = 10;
    for (double s : {0.5, 0.5, 0.2, 0.5}) {
        SyntheticNegative n;
        n.itm = s;
        n.caption.ids = {tag++};
        pool.items.push_back(n);
    }
    NegativePool top = tags::mine_top_m(pool, 3);
    REQUIRE(top.items[0].caption.ids[0] == 10);
    REQUIRE(top.items[1].caption.ids[0] == 11);
    REQUIRE(top.items[2].caption.ids[0] == 13);
}

TEST_CASE("mining an empty pool yields an empty pool") {
    NegativePool empty;
    REQUIRE(tags::mine_top_m(empty, 2).empty());
}
