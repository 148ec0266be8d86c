#pragma once

// Reference computations written independently of the library code. They are
// deliberately naive (direct sums, grid integration) so that agreement with
// the optimized implementation is meaningful.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace retfuse::oracle {

/// Bayes-optimal accuracy of guessing the label from age alone when
/// age | y=1 ~ U(a1, b1), age | y=0 ~ U(a0, b0) and P(y=1) = p.
/// Integrates max(p f1, (1-p) f0) over a fine grid.
inline double age_bayes_accuracy(double a1, double b1, double a0, double b0, double p, int steps = 2'000'000) {
    const double lo = std::min(a0, a1), hi = std::max(b0, b1);
    const double dx = (hi - lo) / steps;
    double acc = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double x = lo + (i + 0.5) * dx;
        const double f1 = (x >= a1 && x <= b1) ? 1.0 / (b1 - a1) : 0.0;
        const double f0 = (x >= a0 && x <= b0) ? 1.0 / (b0 - a0) : 0.0;
        acc += std::max(p * f1, (1.0 - p) * f0) * dx;
    }
    return acc;
}

/// Two-sided normal-approximation bound: |k/n - p| <= z sqrt(p(1-p)/n).
inline bool within_binomial_bound(std::size_t k, std::size_t n, double p, double z = 4.0) {
    const double frac = static_cast<double>(k) / static_cast<double>(n);
    return std::abs(frac - p) <= z * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

/// Perceptron run to convergence; true when it separates the data (points
/// given as rows of `dim` values with labels 0/1) within `max_passes`.
inline bool perceptron_separable(const std::vector<double>& x, const std::vector<int>& y, int dim, int max_passes = 10'000) {
    std::vector<double> w(dim + 1, 0.0);
    for (int pass = 0; pass < max_passes; ++pass) {
        bool clean = true;
        for (std::size_t i = 0; i < y.size(); ++i) {
            double s = w[dim];
            for (int d = 0; d < dim; ++d) s += w[d] * x[i * dim + d];
            const int t = y[i] == 1 ? 1 : -1;
            if (t * s <= 0) {
                clean = false;
                for (int d = 0; d < dim; ++d) w[d] += t * x[i * dim + d];
                w[dim] += t;
            }
        }
        if (clean) return true;
    }
    return false;
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x, std::size_t i,
                                 double eps) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    return (up - down) / (2.0 * eps);
}

/// Elementwise relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Direct 2-D convolution (cross-correlation) of one NCHW sample, no im2col.
inline std::vector<double> naive_conv(const std::vector<double>& x, int c, int h, int w, const std::vector<double>& k, int out_c, int ks,
                                      int stride, int pad) {
    const int oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
    std::vector<double> y(static_cast<std::size_t>(out_c) * oh * ow, 0.0);
    for (int o = 0; o < out_c; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int ci = 0; ci < c; ++ci)
                    for (int ky = 0; ky < ks; ++ky)
                        for (int kx = 0; kx < ks; ++kx) {
                            const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            s += k[((static_cast<std::size_t>(o) * c + ci) * ks + ky) * ks + kx] * x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
                        }
                y[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = s;
            }
    return y;
}

/// Rotates a square plane clockwise by 90 degrees (dst[y][x] = src[n-1-x][y]).
template <typename T>
std::vector<T> rotate_cw(const std::vector<T>& src, int n) {
    std::vector<T> dst(src.size());
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) dst[y * n + x] = src[(n - 1 - x) * n + y];
    return dst;
}

template <typename T>
std::vector<T> mirror(const std::vector<T>& src, int h, int w) {
    std::vector<T> dst(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) dst[y * w + x] = src[y * w + (w - 1 - x)];
    return dst;
}

}  // namespace retfuse::oracle
