#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace retfuse {

/// Dense NCHW tensor. Vectors are stored as (N, features, 1, 1).
template <typename T>
struct Tensor {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }

    T& operator()(int i, int ch, int y, int x) {
        return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
    T operator()(int i, int ch, int y, int x) const {
        return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    std::string shape_string() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

}  // namespace retfuse
