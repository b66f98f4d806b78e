#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "tags/model.hpp"
#include "tags/training.hpp"

namespace tags {

// Config or usage problems exit with code 1; everything else with 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Every tunable, file-loadable as `key = value` lines ('#' comments) and
// overridable by --key value flags.
struct RunConfig {
    // model
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 64;
    std::size_t regions = 8;
    std::size_t d_img = 80;
    std::size_t max_caption = 24;
    // generation
    std::size_t k = 3;
    std::size_t l = 4;
    std::size_t m = 2;
    double tau = 1.0;
    double mask_ratio = 0.15;
    std::string masking = "scenegraph"; // or "word"
    // losses
    double alpha = 0.2;
    double lambda_irtm = 1.0;
    double lambda_mlm = 0.1;
    double lambda_istm = 0.001;
    double lambda_wod = 0.1;
    double lambda_woc = 0.1;
    bool woc_all_positions = false;
    // training
    std::string mode = "dynamic"; // or "static"
    std::string strategy = "random"; // or "inbatch"
    std::size_t static_warmup = 300;
    std::size_t steps = 500;
    std::size_t batch_size = 8;
    double lr = 0.01;
    double clip = 5.0;
    double weight_decay = 0.0;
    double region_jitter = 0.0;
    std::uint64_t seed = 1;
    // data and outputs
    std::size_t n = 64;
    std::size_t gap_batch = 8;
    std::string data = "data.jsonl";
    std::string out;
    std::string checkpoint = "model.ckpt";
    std::string metrics = "metrics.csv";
    std::string lexicon;

    void set(const std::string& key, const std::string& value) {
        auto as_size = [&]() -> std::size_t {
            try {
                std::size_t pos = 0;
                const unsigned long long v = std::stoull(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return static_cast<std::size_t>(v);
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key + "' needs a non-negative integer, got '" + value + "'");
            }
        };
        auto as_double = [&]() -> double {
            try {
                std::size_t pos = 0;
                const double v = std::stod(value, &pos);
                if (pos != value.size()) throw std::invalid_argument(value);
                return v;
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key + "' needs a number, got '" + value + "'");
            }
        };
        auto as_bool = [&]() -> bool {
            if (value == "1" || value == "true" || value == "yes") return true;
            if (value == "0" || value == "false" || value == "no") return false;
            throw ConfigError("config: key '" + key + "' needs a boolean, got '" + value + "'");
        };

        if (key == "d") d = as_size();
        else if (key == "layers") layers = as_size();
        else if (key == "heads") heads = as_size();
        else if (key == "d_ff") d_ff = as_size();
        else if (key == "regions") regions = as_size();
        else if (key == "d_img") d_img = as_size();
        else if (key == "max_caption") max_caption = as_size();
        else if (key == "k") k = as_size();
        else if (key == "l") l = as_size();
        else if (key == "m") m = as_size();
        else if (key == "tau") tau = as_double();
        else if (key == "mask_ratio") mask_ratio = as_double();
        else if (key == "masking") masking = value;
        else if (key == "alpha") alpha = as_double();
        else if (key == "lambda_irtm") lambda_irtm = as_double();
        else if (key == "lambda_mlm") lambda_mlm = as_double();
        else if (key == "lambda_istm") lambda_istm = as_double();
        else if (key == "lambda_wod") lambda_wod = as_double();
        else if (key == "lambda_woc") lambda_woc = as_double();
        else if (key == "woc_all_positions") woc_all_positions = as_bool();
        else if (key == "mode") mode = value;
        else if (key == "strategy") strategy = value;
        else if (key == "static_warmup") static_warmup = as_size();
        else if (key == "steps") steps = as_size();
        else if (key == "batch_size") batch_size = as_size();
        else if (key == "lr") lr = as_double();
        else if (key == "clip") clip = as_double();
        else if (key == "weight_decay") weight_decay = as_double();
        else if (key == "region_jitter") region_jitter = as_double();
        else if (key == "seed") seed = as_size();
        else if (key == "n") n = as_size();
        else if (key == "gap_batch") gap_batch = as_size();
        else if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "checkpoint") checkpoint = value;
        else if (key == "metrics") metrics = value;
        else if (key == "lexicon") lexicon = value;
        else throw ConfigError("config: unknown key '" + key + "'");
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot read " + path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config: " + path + " line " + std::to_string(lineno) +
                                  ": expected key = value");
            }
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void validate() const {
        if (d == 0 || heads == 0 || d % heads != 0) {
            throw ConfigError("config: d must be a positive multiple of heads");
        }
        if (k < 1 || l < 1 || m < 1) throw ConfigError("config: k, l, m must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("config: tau must be positive");
        if (!(mask_ratio > 0.0) || mask_ratio > 1.0) {
            throw ConfigError("config: mask_ratio must be in (0, 1]");
        }
        if (masking != "scenegraph" && masking != "word") {
            throw ConfigError("config: masking must be 'scenegraph' or 'word'");
        }
        if (mode != "dynamic" && mode != "static") {
            throw ConfigError("config: mode must be 'dynamic' or 'static'");
        }
        if (strategy != "random" && strategy != "inbatch") {
            throw ConfigError("config: strategy must be 'random' or 'inbatch'");
        }
        for (double v : {alpha, lambda_irtm, lambda_mlm, lambda_istm, lambda_wod, lambda_woc}) {
            if (!std::isfinite(v) || v < 0.0) {
                throw ConfigError("config: alpha and lambdas must be finite and >= 0");
            }
        }
        if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
            throw ConfigError("config: weight_decay must be finite and >= 0");
        }
        if (!std::isfinite(region_jitter) || region_jitter < 0.0) {
            throw ConfigError("config: region_jitter must be finite and >= 0");
        }
        if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
    }

    ModelDims model_dims(std::size_t vocab) const {
        ModelDims dims;
        dims.vocab = vocab;
        dims.d = d;
        dims.layers = layers;
        dims.heads = heads;
        dims.d_ff = d_ff;
        dims.regions = regions;
        dims.d_img = d_img;
        dims.max_caption = max_caption;
        return dims;
    }

    GenOptions gen_options() const {
        GenOptions g;
        g.K = k;
        g.L = l;
        g.tau = tau;
        g.mask_ratio = mask_ratio;
        g.word_masking = masking == "word";
        return g;
    }

    LossWeights loss_weights() const {
        LossWeights w;
        w.irtm = lambda_irtm;
        w.mlm = lambda_mlm;
        w.istm = lambda_istm;
        w.wod = lambda_wod;
        w.woc = lambda_woc;
        w.alpha = alpha;
        return w;
    }

    TrainSettings train_settings(std::size_t vocab) const {
        TrainSettings s;
        s.step.weights = loss_weights();
        s.step.gen = gen_options();
        s.step.m = m;
        s.step.mode = mode == "static" ? GeneratorMode::Static : GeneratorMode::Dynamic;
        s.step.woc_all_positions = woc_all_positions;
        s.strategy = strategy == "inbatch" ? RetrievalStrategy::InBatchHardest
                                           : RetrievalStrategy::Random;
        s.steps = steps;
        s.batch_size = batch_size;
        s.static_warmup = static_warmup;
        s.lr = lr;
        s.clip = clip;
        s.weight_decay = weight_decay;
        s.region_jitter = region_jitter;
        s.seed = seed;
        s.dims = model_dims(vocab);
        return s;
    }
};

} // namespace tags
