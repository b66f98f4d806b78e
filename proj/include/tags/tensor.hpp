#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tags {

// Dense row-major tensor of doubles. Rank 2 carries the whole model; other
// ranks only show up in checkpoints and tests.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != count(shape)) {
            throw std::invalid_argument("tensor: values do not fill shape " + shape_str(shape));
        }
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> s, double fill) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, fill));
    }

    static Tensor row(std::initializer_list<double> v) {
        std::vector<double> vals(v);
        const std::size_t n = vals.size();
        return Tensor({1, n}, std::move(vals));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor({r, c}, std::move(v));
    }

    std::size_t size() const { return values.size(); }

    std::size_t rows() const {
        require_rank2();
        return shape[0];
    }

    std::size_t cols() const {
        require_rank2();
        return shape[1];
    }

    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool operator==(const Tensor& o) const {
        return shape == o.shape && values == o.values;
    }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

    std::string shape_str() const { return shape_str(shape); }

private:
    void require_rank2() const {
        if (shape.size() != 2) {
            throw std::logic_error("tensor: rank-2 access on shape " + shape_str(shape));
        }
    }
};

// Learnable tensor with an accumulated gradient. grad is mutable scratch so
// forward passes over a const model can still register parameters on a tape.
struct Param {
    std::string name;
    Tensor value;
    mutable Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }

    void zero_grad() const {
        std::fill(grad.values.begin(), grad.values.end(), 0.0);
    }
};

} // namespace tags
