#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tags/model.hpp"

namespace tags {

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& in, const char* what) {
    return std::bit_cast<double>(get_u64(in, what));
}

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   magic "TAGS", version u32, param count u32, then per param:
//   name length u32, name bytes, rank u32, dims u64 each, values f64 each.
inline void save_checkpoint(const MatchModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("TAGS", 4);
    detail::put_u32(out, kCheckpointVersion);
    const auto params = m.params();
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Param* p : params) {
        detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(p->value.shape.size()));
        for (std::size_t d : p->value.shape) detail::put_u64(out, d);
        for (double v : p->value.values) detail::put_f64(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Model hyperparameters are recovered from parameter shapes; the head count
// and expected region count are not visible in any shape so they are passed
// in (defaults match the standard configuration).
inline MatchModel load_checkpoint(const std::string& path, std::size_t heads = 4,
                                  std::size_t regions = 8) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "TAGS") {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = detail::get_u32(in, "version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = detail::get_u32(in, "param count");
    std::map<std::string, Tensor> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = detail::get_u32(in, "name length");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), nlen)) throw std::runtime_error("checkpoint: truncated reading name");
        const std::uint32_t rank = detail::get_u32(in, "rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<std::size_t>(detail::get_u64(in, "dim"));
        }
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.values) v = detail::get_f64(in, name.c_str());
        if (!entries.emplace(name, std::move(t)).second) {
            throw std::runtime_error("checkpoint: duplicate parameter " + name);
        }
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
        throw std::runtime_error("checkpoint: trailing bytes in " + path);
    }

    auto need = [&entries](const std::string& name) -> const Tensor& {
        auto it = entries.find(name);
        if (it == entries.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
        return it->second;
    };

    ModelDims dims;
    dims.vocab = need("tok_embed").rows();
    dims.d = need("tok_embed").cols();
    dims.max_caption = need("pos_embed").rows();
    dims.d_img = need("region_w").rows();
    dims.heads = heads;
    dims.regions = regions;
    dims.layers = 0;
    while (entries.count("enc" + std::to_string(dims.layers) + ".wq")) ++dims.layers;
    dims.d_ff = dims.layers ? need("enc0.ffn_w1").cols() : dims.d;
    dims.validate();

    Rng rng(0);
    MatchModel m = MatchModel::init(dims, rng);
    std::size_t used = 0;
    for (Param* p : m.params()) {
        const Tensor& t = need(p->name);
        if (t.shape != p->value.shape) {
            throw std::runtime_error("checkpoint: parameter " + p->name + " has shape " +
                                     t.shape_str() + ", expected " + p->value.shape_str());
        }
        p->value = t;
        ++used;
    }
    if (used != entries.size()) {
        for (const auto& kv : entries) {
            bool known = false;
            for (const Param* p : m.params()) known = known || p->name == kv.first;
            if (!known) throw std::runtime_error("checkpoint: unknown parameter " + kv.first);
        }
    }
    return m;
}

} // namespace tags
