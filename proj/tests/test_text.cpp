#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "helpers.hpp"
#include "tags/datagen.hpp"
#include "tags/rng.hpp"
#include "tags/text.hpp"

using tags::build_vocabulary;
using tags::detokenize;
using tags::tokenize;
using tags::Vocabulary;

TEST_CASE("vocabulary from one caption holds reserved plus distinct words") {
    Vocabulary v = build_vocabulary({"a red ball"});
    REQUIRE(v.size() == 8);
    REQUIRE(v.id("a") == 5);
    REQUIRE(v.id("red") == 6);
    REQUIRE(v.id("ball") == 7);
}

TEST_CASE("duplicate words collapse to one entry") {
    Vocabulary v = build_vocabulary({"a a a"});
    REQUIRE(v.size() == 6);
    REQUIRE(v.id("a") == 5);
}

TEST_CASE("empty corpus is rejected") {
    REQUIRE_THROWS_WITH(build_vocabulary({}), "build_vocabulary: empty corpus");
}

TEST_CASE("reserved entries have fixed ids and surfaces") {
    Vocabulary v = build_vocabulary({"word"});
    REQUIRE(Vocabulary::kPad == 0);
    REQUIRE(Vocabulary::kMask == 1);
    REQUIRE(Vocabulary::kUnk == 2);
    REQUIRE(Vocabulary::kBos == 3);
    REQUIRE(Vocabulary::kEos == 4);
    REQUIRE(Vocabulary::kReserved == 5);
    REQUIRE(v.surface(0) == "<pad>");
    REQUIRE(v.surface(1) == "<mask>");
    REQUIRE(v.surface(2) == "<unk>");
    REQUIRE(v.surface(3) == "<bos>");
    REQUIRE(v.surface(4) == "<eos>");
    for (int id = 0; id < Vocabulary::kReserved; ++id) {
        REQUIRE(v.is_reserved(id));
    }
    REQUIRE_FALSE(v.is_reserved(5));
}

TEST_CASE("adding an existing word keeps its id") {
    Vocabulary v = build_vocabulary({"red ball"});
    const std::size_t before = v.size();
    REQUIRE(v.add("red") == v.id("red"));
    REQUIRE(v.size() == before);
}

TEST_CASE("unknown surfaces map to the unknown id but keep their text") {
    Vocabulary v = build_vocabulary({"a red ball"});
    tags::TokenSeq t = tokenize(v, "a xyzzy ball");
    REQUIRE(t.ids.size() == 3);
    REQUIRE(t.ids[0] == v.id("a"));
    REQUIRE(t.ids[1] == Vocabulary::kUnk);
    REQUIRE(t.ids[2] == v.id("ball"));
    REQUIRE(t.surfaces[1] == "xyzzy");
}

TEST_CASE("tokenizing the empty string yields an empty sequence") {
    Vocabulary v = build_vocabulary({"word"});
    tags::TokenSeq t = tokenize(v, "");
    REQUIRE(t.ids.empty());
    REQUIRE(t.surfaces.empty());
}

TEST_CASE("tokenize lowercases and splits on whitespace runs") {
    Vocabulary v = build_vocabulary({"a red ball"});
    tags::TokenSeq t = tokenize(v, "  A   Red\tBALL ");
    REQUIRE(t.ids.size() == 3);
    REQUIRE(t.surfaces == std::vector<std::string>{"a", "red", "ball"});
    REQUIRE(t.ids[0] == v.id("a"));
    REQUIRE(t.ids[2] == v.id("ball"));
}

TEST_CASE("surface lookup rejects out of range ids") {
    Vocabulary v = build_vocabulary({"word"});
    REQUIRE_THROWS_AS(v.surface(static_cast<int>(v.size())), std::out_of_range);
    REQUIRE_THROWS_AS(v.surface(-1), std::out_of_range);
}

TEST_CASE("round trip preserves normalized in-vocabulary text") {
    Vocabulary v = build_vocabulary({"there is a small dog near the old gate"});
    tags::Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 1 + rng.below(10);
        tags::TokenSeq t = testutil::random_caption(v, len, rng);
        const std::string text = detokenize(t);
        tags::TokenSeq back = tokenize(v, text);
        REQUIRE(back.ids == t.ids);
        REQUIRE(back.surfaces == t.surfaces);
        REQUIRE(detokenize(back) == text);
    }
}

TEST_CASE("grammar vocabulary covers every terminal once") {
    tags::Grammar g;
    REQUIRE(g.vocabulary().size() == 94);
    REQUIRE(g.feature_dim() == 80);
    for (const std::string& w : g.terminal_words()) {
        REQUIRE(g.vocabulary().id(w) != Vocabulary::kUnk);
    }
}
