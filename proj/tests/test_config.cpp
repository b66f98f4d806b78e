#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

#include "tags/config.hpp"

using tags::ConfigError;
using tags::RunConfig;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p, const std::string& text) : path(std::move(p)) {
        std::ofstream out(path, std::ios::binary);
        out << text;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("config defaults") {
    const RunConfig c;
    REQUIRE(c.d == 64);
    REQUIRE(c.layers == 2);
    REQUIRE(c.heads == 4);
    REQUIRE(c.d_ff == 64);
    REQUIRE(c.regions == 8);
    REQUIRE(c.d_img == 80);
    REQUIRE(c.max_caption == 24);
    REQUIRE(c.k == 3);
    REQUIRE(c.l == 4);
    REQUIRE(c.m == 2);
    REQUIRE(c.tau == 1.0);
    REQUIRE(c.mask_ratio == 0.15);
    REQUIRE(c.masking == "scenegraph");
    REQUIRE(c.alpha == 0.2);
    REQUIRE(c.lambda_irtm == 1.0);
    REQUIRE(c.lambda_mlm == 0.1);
    REQUIRE(c.lambda_istm == 0.001);
    REQUIRE(c.lambda_wod == 0.1);
    REQUIRE(c.lambda_woc == 0.1);
    REQUIRE_FALSE(c.woc_all_positions);
    REQUIRE(c.mode == "dynamic");
    REQUIRE(c.strategy == "random");
    REQUIRE(c.static_warmup == 300);
    REQUIRE(c.steps == 500);
    REQUIRE(c.batch_size == 8);
    REQUIRE(c.lr == 0.01);
    REQUIRE(c.clip == 5.0);
    REQUIRE(c.weight_decay == 0.0);
    REQUIRE(c.seed == 1);
    REQUIRE(c.n == 64);
    REQUIRE(c.gap_batch == 8);
    REQUIRE(c.data == "data.jsonl");
    REQUIRE(c.out.empty());
    REQUIRE(c.checkpoint == "model.ckpt");
    REQUIRE(c.metrics == "metrics.csv");
    REQUIRE(c.lexicon.empty());
    REQUIRE_NOTHROW(c.validate());
}

TEST_CASE("config set parses each value kind") {
    RunConfig c;

    c.set("d", "128");
    REQUIRE(c.d == 128);
    c.set("seed", "42");
    REQUIRE(c.seed == 42);
    REQUIRE_THROWS_WITH(c.set("d", "12x"),
                        "config: key 'd' needs a non-negative integer, got '12x'");
    REQUIRE_THROWS_WITH(c.set("steps", "1.5"),
                        "config: key 'steps' needs a non-negative integer, got '1.5'");

    c.set("tau", "0.5");
    REQUIRE(c.tau == 0.5);
    c.set("lr", "2e-2");
    REQUIRE(c.lr == 0.02);
    REQUIRE_THROWS_WITH(c.set("tau", "warm"), "config: key 'tau' needs a number, got 'warm'");

    for (const char* yes : {"1", "true", "yes"}) {
        c.woc_all_positions = false;
        c.set("woc_all_positions", yes);
        REQUIRE(c.woc_all_positions);
    }
    for (const char* no : {"0", "false", "no"}) {
        c.woc_all_positions = true;
        c.set("woc_all_positions", no);
        REQUIRE_FALSE(c.woc_all_positions);
    }
    REQUIRE_THROWS_WITH(c.set("woc_all_positions", "2"),
                        "config: key 'woc_all_positions' needs a boolean, got '2'");

    c.set("masking", "word");
    REQUIRE(c.masking == "word");
    c.set("mode", "static");
    REQUIRE(c.mode == "static");
    c.set("strategy", "inbatch");
    REQUIRE(c.strategy == "inbatch");
    c.set("data", "train.jsonl");
    c.set("out", "runs/a");
    c.set("checkpoint", "a.ckpt");
    c.set("metrics", "a.csv");
    c.set("lexicon", "roles.tsv");
    REQUIRE(c.data == "train.jsonl");
    REQUIRE(c.out == "runs/a");
    REQUIRE(c.checkpoint == "a.ckpt");
    REQUIRE(c.metrics == "a.csv");
    REQUIRE(c.lexicon == "roles.tsv");

    REQUIRE_THROWS_WITH(c.set("bogus", "1"), "config: unknown key 'bogus'");
}

TEST_CASE("config file loading") {
    SECTION("comments, blanks, and padding") {
        TempFile f("config_ok.txt",
                   "# run setup\n"
                   "\n"
                   "  d = 32   # narrow model\n"
                   "steps=7\n"
                   "masking = word\n"
                   "   \n");
        RunConfig c;
        c.load_file(f.path);
        REQUIRE(c.d == 32);
        REQUIRE(c.steps == 7);
        REQUIRE(c.masking == "word");
    }
    SECTION("missing separator names the line") {
        TempFile f("config_sep.txt", "d = 32\nsteps 7\n");
        RunConfig c;
        REQUIRE_THROWS_WITH(c.load_file(f.path),
                            "config: config_sep.txt line 2: expected key = value");
    }
    SECTION("bad value surfaces the key error") {
        TempFile f("config_val.txt", "d = x\n");
        RunConfig c;
        REQUIRE_THROWS_WITH(c.load_file(f.path),
                            "config: key 'd' needs a non-negative integer, got 'x'");
    }
    SECTION("missing file") {
        RunConfig c;
        REQUIRE_THROWS_WITH(c.load_file("no_such_config.txt"),
                            "config: cannot read no_such_config.txt");
    }
}

TEST_CASE("config validation rejects bad combinations") {
    auto broken = [](auto&& tweak) {
        RunConfig c;
        tweak(c);
        return c;
    };

    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.d = 0; }).validate(),
                        "config: d must be a positive multiple of heads");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.d = 10; }).validate(),
                        "config: d must be a positive multiple of heads");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.k = 0; }).validate(),
                        "config: k, l, m must be >= 1");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.m = 0; }).validate(),
                        "config: k, l, m must be >= 1");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.tau = 0.0; }).validate(),
                        "config: tau must be positive");
    REQUIRE_THROWS_WITH(
        broken([](RunConfig& c) { c.tau = std::numeric_limits<double>::quiet_NaN(); }).validate(),
        "config: tau must be positive");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.mask_ratio = 0.0; }).validate(),
                        "config: mask_ratio must be in (0, 1]");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.mask_ratio = 1.5; }).validate(),
                        "config: mask_ratio must be in (0, 1]");
    REQUIRE_NOTHROW(broken([](RunConfig& c) { c.mask_ratio = 1.0; }).validate());
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.masking = "both"; }).validate(),
                        "config: masking must be 'scenegraph' or 'word'");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.mode = "frozen"; }).validate(),
                        "config: mode must be 'dynamic' or 'static'");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.strategy = "hardest"; }).validate(),
                        "config: strategy must be 'random' or 'inbatch'");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.alpha = -0.1; }).validate(),
                        "config: alpha and lambdas must be finite and >= 0");
    REQUIRE_THROWS_WITH(
        broken([](RunConfig& c) { c.lambda_mlm = std::numeric_limits<double>::infinity(); })
            .validate(),
        "config: alpha and lambdas must be finite and >= 0");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.batch_size = 1; }).validate(),
                        "config: batch_size must be >= 2");
    REQUIRE_THROWS_WITH(broken([](RunConfig& c) { c.weight_decay = -0.1; }).validate(),
                        "config: weight_decay must be finite and >= 0");
}

TEST_CASE("config maps onto model, generator, and trainer settings") {
    RunConfig c;
    c.d = 16;
    c.layers = 1;
    c.heads = 2;
    c.d_ff = 24;
    c.regions = 6;
    c.d_img = 80;
    c.max_caption = 20;
    c.k = 5;
    c.l = 2;
    c.m = 3;
    c.tau = 0.7;
    c.mask_ratio = 0.3;
    c.masking = "word";
    c.alpha = 0.4;
    c.lambda_irtm = 2.0;
    c.lambda_mlm = 0.2;
    c.lambda_istm = 0.01;
    c.lambda_wod = 0.0;
    c.lambda_woc = 0.3;
    c.woc_all_positions = true;
    c.mode = "static";
    c.strategy = "inbatch";
    c.static_warmup = 10;
    c.steps = 40;
    c.batch_size = 4;
    c.lr = 0.004;
    c.clip = 2.0;
    c.weight_decay = 0.02;
    c.seed = 99;

    const tags::ModelDims dims = c.model_dims(94);
    REQUIRE(dims.vocab == 94);
    REQUIRE(dims.d == 16);
    REQUIRE(dims.layers == 1);
    REQUIRE(dims.heads == 2);
    REQUIRE(dims.d_ff == 24);
    REQUIRE(dims.regions == 6);
    REQUIRE(dims.d_img == 80);
    REQUIRE(dims.max_caption == 20);

    const tags::GenOptions gen = c.gen_options();
    REQUIRE(gen.K == 5);
    REQUIRE(gen.L == 2);
    REQUIRE(gen.tau == 0.7);
    REQUIRE(gen.mask_ratio == 0.3);
    REQUIRE(gen.word_masking);

    const tags::LossWeights w = c.loss_weights();
    REQUIRE(w.irtm == 2.0);
    REQUIRE(w.mlm == 0.2);
    REQUIRE(w.istm == 0.01);
    REQUIRE(w.wod == 0.0);
    REQUIRE(w.woc == 0.3);
    REQUIRE(w.alpha == 0.4);

    const tags::TrainSettings s = c.train_settings(94);
    REQUIRE(s.step.weights.irtm == 2.0);
    REQUIRE(s.step.gen.K == 5);
    REQUIRE(s.step.m == 3);
    REQUIRE(s.step.mode == tags::GeneratorMode::Static);
    REQUIRE(s.step.woc_all_positions);
    REQUIRE(s.strategy == tags::RetrievalStrategy::InBatchHardest);
    REQUIRE(s.steps == 40);
    REQUIRE(s.batch_size == 4);
    REQUIRE(s.static_warmup == 10);
    REQUIRE(s.lr == 0.004);
    REQUIRE(s.clip == 2.0);
    REQUIRE(s.weight_decay == 0.02);
    REQUIRE(s.seed == 99);
    REQUIRE(s.dims.d == 16);
    REQUIRE(s.dims.vocab == 94);

    c.mode = "dynamic";
    c.strategy = "random";
    c.masking = "scenegraph";
    const tags::TrainSettings s2 = c.train_settings(94);
    REQUIRE(s2.step.mode == tags::GeneratorMode::Dynamic);
    REQUIRE(s2.strategy == tags::RetrievalStrategy::Random);
    REQUIRE_FALSE(s2.step.gen.word_masking);
}
