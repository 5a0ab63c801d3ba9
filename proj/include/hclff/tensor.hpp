#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hclff/common.hpp"

namespace hclff {

// Dense row-major N-d array. R is float for training builds and double for
// the test oracles; the two never mix inside one network.
template <class R>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<R> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, R fill = R(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }
    Tensor(std::vector<std::size_t> s, std::vector<R> values) : shape(std::move(s)), data(std::move(values)) {
        if (numel_of(shape) != data.size())
            throw argument_error("tensor: shape/product mismatch: " + shape_str() + " vs " +
                                 std::to_string(data.size()) + " elements");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    R& operator[](std::size_t i) { return data[i]; }
    const R& operator[](std::size_t i) const { return data[i]; }

    R& at(std::size_t i0) { return data[i0]; }
    const R& at(std::size_t i0) const { return data[i0]; }
    R& at(std::size_t i0, std::size_t i1) { return data[i0 * shape[1] + i1]; }
    const R& at(std::size_t i0, std::size_t i1) const { return data[i0 * shape[1] + i1]; }
    R& at(std::size_t i0, std::size_t i1, std::size_t i2) { return data[(i0 * shape[1] + i1) * shape[2] + i2]; }
    const R& at(std::size_t i0, std::size_t i1, std::size_t i2) const {
        return data[(i0 * shape[1] + i1) * shape[2] + i2];
    }
    R& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
        return data[((i0 * shape[1] + i1) * shape[2] + i2) * shape[3] + i3];
    }
    const R& at(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
        return data[((i0 * shape[1] + i1) * shape[2] + i2) * shape[3] + i3];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    Tensor reshaped(std::vector<std::size_t> s) const {
        if (numel_of(s) != numel())
            throw argument_error("tensor: reshape " + shape_str() + " changes element count");
        Tensor out = *this;
        out.shape = std::move(s);
        return out;
    }

    bool all_finite() const {
        for (const R& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class R2>
    Tensor<R2> cast() const {
        Tensor<R2> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (const R& v : data) out.data.push_back(static_cast<R2>(v));
        return out;
    }
};

template <class R>
inline Tensor<R> zeros_like(const Tensor<R>& t) {
    return Tensor<R>(t.shape);
}

template <class R>
inline void check_finite(const Tensor<R>& t, const char* ctx) {
    if (!t.all_finite()) throw numeric_error(std::string(ctx) + ": tensor contains NaN/Inf");
}

inline std::string shape_to_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class R>
inline void check_shape(const Tensor<R>& t, const std::vector<std::size_t>& expect, const char* ctx) {
    if (t.shape != expect)
        throw argument_error(std::string(ctx) + ": expected shape " + shape_to_str(expect) + ", got " +
                             t.shape_str());
}

}  // namespace hclff
