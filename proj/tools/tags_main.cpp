// tags: synthetic hard-negative generation and image-text matching on a toy
// grammar world. Subcommands: datagen, train, generate-negatives, eval,
// compare-strategies.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tags/checkpoint.hpp"
#include "tags/config.hpp"
#include "tags/datagen.hpp"
#include "tags/eval.hpp"
#include "tags/generator.hpp"
#include "tags/training.hpp"

namespace {

constexpr const char* kUsage = R"(usage: tags <command> [--config FILE] [--KEY VALUE ...]

commands:
  datagen             write a synthetic dataset (--n, --seed, --out)
  train               train a matching model (--data, --checkpoint, --metrics)
  generate-negatives  write synthetic negatives per image (--checkpoint, --data, --out)
  eval                retrieval + word-task report (--checkpoint, --data, --out)
  compare-strategies  per-strategy difficulty-gap histograms (--checkpoint, --data, --out prefix)

Every config-file key can be passed as a --key value flag; flags win over the
file. Unknown keys are rejected.
)";

std::string normalize_key(std::string key) {
    for (char& c : key) {
        if (c == '-') c = '_';
    }
    return key;
}

tags::RunConfig parse_args(const std::vector<std::string>& args) {
    tags::RunConfig cfg;
    // config file first so flags can override it
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw tags::ConfigError("--config needs a path");
            cfg.load_file(args[i + 1]);
        }
    }
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            ++i;
            continue;
        }
        if (args[i].rfind("--", 0) != 0) {
            throw tags::ConfigError("unexpected argument '" + args[i] + "'");
        }
        if (i + 1 >= args.size()) {
            throw tags::ConfigError("flag '" + args[i] + "' needs a value");
        }
        cfg.set(normalize_key(args[i].substr(2)), args[i + 1]);
        ++i;
    }
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

tags::RoleLexicon lexicon_for(const tags::RunConfig& cfg, const tags::Grammar& grammar) {
    if (cfg.lexicon.empty()) return grammar.role_lexicon();
    return tags::RoleLexicon::load(cfg.lexicon);
}

int cmd_datagen(const tags::RunConfig& cfg) {
    if (cfg.n < 1) throw tags::ConfigError("config: n must be >= 1");
    const tags::Grammar grammar;
    const tags::Dataset ds = tags::generate_dataset(grammar, cfg.n, cfg.seed, cfg.regions);
    const std::string out = cfg.out.empty() ? cfg.data : cfg.out;
    tags::write_jsonl(ds, out);
    if (!cfg.lexicon.empty()) grammar.role_lexicon().save(cfg.lexicon);
    std::cout << "wrote " << ds.size() << " images to " << out << "\n";
    return 0;
}

int cmd_train(const tags::RunConfig& cfg) {
    cfg.validate();
    const tags::Grammar grammar;
    const tags::Vocabulary& vocab = grammar.vocabulary();
    const tags::Dataset ds = tags::read_jsonl(cfg.data, vocab, cfg.max_caption);
    const tags::RoleLexicon lexicon = lexicon_for(cfg, grammar);
    const tags::TrainRun run = tags::run_training(ds, vocab, lexicon, cfg.train_settings(vocab.size()));
    tags::save_checkpoint(run.model, cfg.checkpoint);
    write_text(cfg.metrics, tags::metrics_csv(run.reports));
    if (run.reports.empty()) {
        std::cout << "0 steps, checkpoint written to " << cfg.checkpoint << "\n";
        return 0;
    }
    const tags::StepReport& last = run.reports.back();
    std::cout << "final step: l_irtm=" << tags::g17(last.l_irtm)
              << " l_mlm=" << tags::g17(last.l_mlm)
              << " l_istm=" << tags::g17(last.l_istm)
              << " l_wod=" << tags::g17(last.l_wod)
              << " l_woc=" << tags::g17(last.l_woc)
              << " total=" << tags::g17(last.total) << "\n";
    std::cout << "checkpoint: " << cfg.checkpoint << "  metrics: " << cfg.metrics << "\n";
    return 0;
}

int cmd_generate(const tags::RunConfig& cfg) {
    cfg.validate();
    const tags::Grammar grammar;
    const tags::Vocabulary& vocab = grammar.vocabulary();
    const tags::MatchModel model = tags::load_checkpoint(cfg.checkpoint, cfg.heads, cfg.regions);
    const tags::Dataset ds = tags::read_jsonl(cfg.data, vocab, cfg.max_caption);
    const tags::RoleLexicon lexicon = lexicon_for(cfg, grammar);
    const std::string out = cfg.out.empty() ? "negatives.jsonl" : cfg.out;
    tags::Rng rng(cfg.seed);
    std::ofstream fh(out, std::ios::binary);
    if (!fh) throw std::runtime_error("cannot write " + out);
    std::size_t total = 0;
    for (const tags::RegionImage& img : ds.images) {
        const tags::TokenSeq& caption = img.captions[0];
        const tags::SceneGraph graph = tags::parse_scene_graph(caption, lexicon);
        const tags::NegativePool pool =
            tags::generate_pool(model, vocab, img, caption, graph, cfg.gen_options(), rng);
        for (const tags::SyntheticNegative& neg : pool.items) {
            nlohmann::json j;
            j["image_id"] = img.image_id;
            j["source"] = tags::detokenize(neg.source);
            j["synthetic"] = tags::detokenize(neg.caption);
            j["replaced_positions"] = neg.replaced_positions;
            j["itm"] = neg.itm;
            fh << j.dump() << '\n';
            ++total;
        }
    }
    if (!fh) throw std::runtime_error("write failed for " + out);
    std::cout << "wrote " << total << " negatives to " << out << "\n";
    return 0;
}

int cmd_eval(const tags::RunConfig& cfg) {
    cfg.validate();
    const tags::Grammar grammar;
    const tags::Vocabulary& vocab = grammar.vocabulary();
    const tags::MatchModel model = tags::load_checkpoint(cfg.checkpoint, cfg.heads, cfg.regions);
    const tags::Dataset ds = tags::read_jsonl(cfg.data, vocab, cfg.max_caption);
    const tags::RoleLexicon lexicon = lexicon_for(cfg, grammar);

    const tags::RetrievalReport r = tags::recall_at_k(model, ds);

    tags::Rng rng(cfg.seed);
    std::vector<tags::EvalTriple> triples;
    std::vector<tags::NegativeSample> samples;
    for (const tags::RegionImage& img : ds.images) {
        const tags::TokenSeq& caption = img.captions[0];
        const tags::SceneGraph graph = tags::parse_scene_graph(caption, lexicon);
        const tags::NegativePool pool =
            tags::generate_pool(model, vocab, img, caption, graph, cfg.gen_options(), rng);
        for (const tags::SyntheticNegative& neg : tags::mine_top_m(pool, cfg.m).items) {
            triples.push_back({&img, caption, neg.caption});
            samples.push_back({&img, neg});
        }
    }

    std::string csv = "metric,value\n";
    auto put = [&csv](const std::string& name, double v) {
        csv += name + "," + tags::g17(v) + "\n";
    };
    put("i2t_r1", r.i2t_r1);
    put("i2t_r5", r.i2t_r5);
    put("i2t_r10", r.i2t_r10);
    put("t2i_r1", r.t2i_r1);
    put("t2i_r5", r.t2i_r5);
    put("t2i_r10", r.t2i_r10);
    put("rsum", r.rsum);
    double disc = 0.0, wod = 0.0, woc = 0.0;
    if (!triples.empty()) {
        disc = tags::discrimination_accuracy(model, triples);
        wod = tags::wod_accuracy(model, samples);
        woc = tags::woc_accuracy(model, samples);
        put("discrimination_accuracy", disc);
        put("wod_accuracy", wod);
        put("woc_accuracy", woc);
    }
    const std::string out = cfg.out.empty() ? "eval.csv" : cfg.out;
    write_text(out, csv);
    std::printf("image-to-text  R@1 %.4f  R@5 %.4f  R@10 %.4f\n", r.i2t_r1, r.i2t_r5, r.i2t_r10);
    std::printf("text-to-image  R@1 %.4f  R@5 %.4f  R@10 %.4f\n", r.t2i_r1, r.t2i_r5, r.t2i_r10);
    std::printf("rsum %.2f\n", r.rsum);
    if (!triples.empty()) {
        std::printf("discrimination %.4f  wod %.4f  woc %.4f  (%zu synthetic negatives)\n",
                    disc, wod, woc, samples.size());
    } else {
        std::printf("no synthetic negatives survived filtering; word-task metrics skipped\n");
    }
    std::printf("report: %s\n", out.c_str());
    return 0;
}

int cmd_compare(const tags::RunConfig& cfg) {
    cfg.validate();
    const tags::Grammar grammar;
    const tags::Vocabulary& vocab = grammar.vocabulary();
    const tags::MatchModel model = tags::load_checkpoint(cfg.checkpoint, cfg.heads, cfg.regions);
    const tags::Dataset ds = tags::read_jsonl(cfg.data, vocab, cfg.max_caption);
    const tags::RoleLexicon lexicon = lexicon_for(cfg, grammar);
    const std::string prefix = cfg.out.empty() ? "gaps" : cfg.out;

    for (const tags::GapStrategy strategy :
         {tags::GapStrategy::InBatch, tags::GapStrategy::DatasetWide, tags::GapStrategy::Generated}) {
        tags::Rng rng(cfg.seed);
        const tags::GapHistogram hist = tags::difficulty_gap(
            model, ds, lexicon, strategy, cfg.gen_options(), vocab, cfg.gap_batch, rng);
        const std::string path = prefix + "_" + tags::gap_strategy_name(strategy) + ".csv";
        write_text(path, hist.to_csv());
        std::printf("%-12s mean gap %+.4f over %zu images -> %s\n",
                    tags::gap_strategy_name(strategy), hist.mean(), hist.values.size(), path.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 1;
    }
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        std::fputs(kUsage, stdout);
        return 0;
    }
    std::vector<std::string> args(argv + 2, argv + argc);
    try {
        const tags::RunConfig cfg = parse_args(args);
        if (cmd == "datagen") return cmd_datagen(cfg);
        if (cmd == "train") return cmd_train(cfg);
        if (cmd == "generate-negatives") return cmd_generate(cfg);
        if (cmd == "eval") return cmd_eval(cfg);
        if (cmd == "compare-strategies") return cmd_compare(cfg);
        std::fprintf(stderr, "unknown command '%s'\n%s", cmd.c_str(), kUsage);
        return 1;
    } catch (const tags::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
