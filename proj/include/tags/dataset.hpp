#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tags/tensor.hpp"
#include "tags/text.hpp"

namespace tags {

inline constexpr std::size_t kCaptionsPerImage = 5;

// One pseudo image: a bag of region feature vectors plus its five reference
// captions.
struct RegionImage {
    std::int64_t image_id = 0;
    Tensor regions; // [R, d_img]
    std::vector<TokenSeq> captions;

    bool operator==(const RegionImage&) const = default;
};

struct Dataset {
    std::vector<RegionImage> images;

    std::size_t size() const { return images.size(); }
    bool operator==(const Dataset&) const = default;
};

// One JSON object per line: {"image_id": .., "regions": [[..],..], "captions": [..]}.
// Region values are emitted as full-precision doubles by the json library,
// so write -> read is lossless.
inline void write_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_jsonl: cannot write " + path);
    for (const RegionImage& img : ds.images) {
        nlohmann::json j;
        j["image_id"] = img.image_id;
        nlohmann::json regions = nlohmann::json::array();
        const std::size_t r = img.regions.rows(), d = img.regions.cols();
        for (std::size_t i = 0; i < r; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < d; ++c) row.push_back(img.regions.at(i, c));
            regions.push_back(std::move(row));
        }
        j["regions"] = std::move(regions);
        nlohmann::json caps = nlohmann::json::array();
        for (const TokenSeq& t : img.captions) caps.push_back(detokenize(t));
        j["captions"] = std::move(caps);
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write_jsonl: write failed for " + path);
}

inline Dataset read_jsonl(const std::string& path, const Vocabulary& vocab,
                          std::size_t max_caption = 24) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_jsonl: cannot read " + path);
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("read_jsonl: " + path + " line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) fail("malformed json");
        if (!j.contains("image_id") || !j.contains("regions") || !j.contains("captions")) {
            fail("missing field");
        }
        RegionImage img;
        img.image_id = j["image_id"].get<std::int64_t>();
        const auto& regions = j["regions"];
        if (!regions.is_array() || regions.empty()) fail("regions must be a non-empty array");
        const std::size_t r = regions.size();
        const std::size_t d = regions[0].is_array() ? regions[0].size() : 0;
        if (d == 0) fail("region rows must be non-empty arrays");
        img.regions = Tensor::zeros({r, d});
        for (std::size_t i = 0; i < r; ++i) {
            if (!regions[i].is_array() || regions[i].size() != d) fail("ragged region rows");
            for (std::size_t c = 0; c < d; ++c) {
                if (!regions[i][c].is_number()) fail("region values must be numbers");
                img.regions.at(i, c) = regions[i][c].get<double>();
            }
        }
        const auto& caps = j["captions"];
        if (!caps.is_array() || caps.size() != kCaptionsPerImage) {
            fail("expected exactly " + std::to_string(kCaptionsPerImage) + " captions");
        }
        for (const auto& c : caps) {
            if (!c.is_string()) fail("captions must be strings");
            TokenSeq t = tokenize(vocab, c.get<std::string>());
            if (t.empty()) fail("empty caption");
            if (t.size() > max_caption) {
                fail("caption longer than " + std::to_string(max_caption) + " tokens");
            }
            img.captions.push_back(std::move(t));
        }
        if (!ds.images.empty() && !img.regions.same_shape(ds.images[0].regions)) {
            fail("region shape differs from previous images");
        }
        ds.images.push_back(std::move(img));
    }
    return ds;
}

} // namespace tags
