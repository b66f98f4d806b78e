#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tags/datagen.hpp"
#include "tags/model.hpp"
#include "tags/rng.hpp"
#include "tags/tensor.hpp"

namespace testutil {

inline bool close(double a, double b, double rtol = 1e-9, double atol = 1e-12) {
    return std::abs(a - b) <= std::max(atol, rtol * std::max(std::abs(a), std::abs(b)));
}

inline bool grad_close(double analytic, double numeric, double rtol = 1e-4, double atol = 1e-7) {
    return std::abs(analytic - numeric) <=
           std::max(atol, rtol * std::max(std::abs(analytic), std::abs(numeric)));
}

// Central finite difference of f at coordinate x.
inline double fd(const std::function<double()>& f, double& x, double h = 1e-6) {
    const double saved = x;
    x = saved + h;
    const double fp = f();
    x = saved - h;
    const double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * h);
}

inline tags::Tensor random_tensor(std::vector<std::size_t> shape, tags::Rng& rng, double sd = 1.0) {
    tags::Tensor t = tags::Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = rng.normal(0.0, sd);
    return t;
}

// Checks every sampled coordinate of every parameter against central
// differences; loss must be a pure function of the parameter values.
inline bool check_param_gradients(const std::vector<tags::Param*>& params,
                                  const std::function<double()>& loss,
                                  const std::function<void()>& accumulate_grads,
                                  tags::Rng& rng, std::size_t coords_per_param = 2,
                                  double rtol = 1e-4) {
    for (tags::Param* p : params) p->zero_grad();
    accumulate_grads();
    for (tags::Param* p : params) {
        for (std::size_t c = 0; c < coords_per_param; ++c) {
            const std::size_t i = rng.below(p->value.size());
            const double numeric = fd(loss, p->value.values[i]);
            if (!grad_close(p->grad.values[i], numeric, rtol)) return false;
        }
    }
    return true;
}

inline tags::MatchModel small_model(std::size_t vocab, std::uint64_t seed,
                                    std::size_t d = 8, std::size_t layers = 1,
                                    std::size_t heads = 2, std::size_t regions = 3,
                                    std::size_t d_img = 6) {
    tags::ModelDims dims;
    dims.vocab = vocab;
    dims.d = d;
    dims.layers = layers;
    dims.heads = heads;
    dims.d_ff = d;
    dims.regions = regions;
    dims.d_img = d_img;
    dims.max_caption = 24;
    tags::Rng rng(seed);
    return tags::MatchModel::init(dims, rng);
}

inline tags::RegionImage random_image(const tags::MatchModel& m, tags::Rng& rng,
                                      std::int64_t id = 0) {
    tags::RegionImage img;
    img.image_id = id;
    img.regions = random_tensor({m.dims.regions, m.dims.d_img}, rng, 0.5);
    return img;
}

inline tags::TokenSeq seq_of(const std::vector<int>& ids, const tags::Vocabulary& v) {
    tags::TokenSeq t;
    for (int id : ids) {
        t.ids.push_back(id);
        t.surfaces.push_back(v.surface(id));
    }
    return t;
}

inline tags::TokenSeq random_caption(const tags::Vocabulary& v, std::size_t len, tags::Rng& rng) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < len; ++i) {
        ids.push_back(tags::Vocabulary::kReserved +
                      static_cast<int>(rng.below(v.size() - tags::Vocabulary::kReserved)));
    }
    return seq_of(ids, v);
}

inline void zero_params(tags::MatchModel& m) {
    for (tags::Param* p : m.params()) {
        std::fill(p->value.values.begin(), p->value.values.end(), 0.0);
    }
}

} // namespace testutil
