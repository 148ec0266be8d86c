#include "retfuse/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "retfuse/error.hpp"

namespace retfuse::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_(Tensor<T>(out_channels, in_channels, kernel, kernel)) {
    if (bias) bias_ = std::make_unique<Parameter<T>>(Tensor<T>(1, out_channels, 1, 1));
}

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, std::mt19937_64& rng)
    : Conv2d(in_channels, out_channels, kernel, stride, padding, bias) {
    // He-normal over fan-in.
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel)));
    for (auto& v : weight_.value.data) v = static_cast<T>(dist(rng));
}

template <typename T>
std::unique_ptr<Conv2d<T>> Conv2d<T>::duplicated_input_channels() const {
    std::unique_ptr<Conv2d> wide(new Conv2d(2 * in_, out_, k_, stride_, pad_, bias_ != nullptr));
    const std::size_t kk = static_cast<std::size_t>(k_) * k_;
    for (int o = 0; o < out_; ++o)
        for (int half = 0; half < 2; ++half)
            for (int c = 0; c < in_; ++c)
                for (std::size_t j = 0; j < kk; ++j)
                    wide->weight_.value.data[(static_cast<std::size_t>(o) * 2 * in_ + half * in_ + c) * kk + j] =
                        weight_.value.data[(static_cast<std::size_t>(o) * in_ + c) * kk + j] * T(0.5);
    if (bias_) wide->bias_->value = bias_->value;
    return wide;
}

template <typename T>
void Conv2d<T>::im2col(const T* x, int height, int width, T* col) const {
    const int oh = out_size(height), ow = out_size(width);
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < in_; ++c)
        for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
                T* dst = col + (static_cast<std::size_t>(c * k_ + ky) * k_ + kx) * cols;
                const T* plane = x + static_cast<std::size_t>(c) * height * width;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride_ - pad_ + ky;
                    T* row = dst + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= height) {
                        std::fill(row, row + ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride_ - pad_ + kx;
                        row[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int height, int width, T* x) const {
    const int oh = out_size(height), ow = out_size(width);
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < in_; ++c)
        for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
                const T* src = col + (static_cast<std::size_t>(c * k_ + ky) * k_ + kx) * cols;
                T* plane = x + static_cast<std::size_t>(c) * height * width;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride_ - pad_ + ky;
                    if (iy < 0 || iy >= height) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * width;
                    const T* row = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride_ - pad_ + kx;
                        if (ix >= 0 && ix < width) dst[ix] += row[ox];
                    }
                }
            }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool training) {
    require(x.c == in_, "conv: expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c));
    const int oh = out_size(x.h), ow = out_size(x.w);
    require(oh > 0 && ow > 0, "conv: input " + x.shape_string() + " too small for kernel");
    Tensor<T> y(x.n, out_, oh, ow);
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    const int ckk = in_ * k_ * k_;
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * cols);
    CMapMat<T> W(weight_.value.data.data(), out_, ckk);
    for (int i = 0; i < x.n; ++i) {
        const T* colp = x.sample(i);
        if (!pointwise) {
            im2col(x.sample(i), x.h, x.w, col.data());
            colp = col.data();
        }
        MapMat<T> out(y.sample(i), out_, static_cast<Eigen::Index>(cols));
        out.noalias() = W * CMapMat<T>(colp, ckk, static_cast<Eigen::Index>(cols));
        if (bias_)
            for (int o = 0; o < out_; ++o) out.row(o).array() += bias_->value.data[o];
    }
    if (training) input_ = x;
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& g) {
    const Tensor<T>& x = input_;
    require(x.n == g.n && g.c == out_, "conv: backward without matching forward");
    const int oh = g.h, ow = g.w;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    const int ckk = in_ * k_ * k_;
    const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * cols);
    std::vector<T> dcol(static_cast<std::size_t>(ckk) * cols);
    CMapMat<T> W(weight_.value.data.data(), out_, ckk);
    MapMat<T> dW(weight_.grad.data.data(), out_, ckk);
    for (int i = 0; i < x.n; ++i) {
        const T* colp = x.sample(i);
        if (!pointwise) {
            im2col(x.sample(i), x.h, x.w, col.data());
            colp = col.data();
        }
        CMapMat<T> go(g.sample(i), out_, static_cast<Eigen::Index>(cols));
        dW.noalias() += go * CMapMat<T>(colp, ckk, static_cast<Eigen::Index>(cols)).transpose();
        if (bias_)
            for (int o = 0; o < out_; ++o) bias_->grad.data[o] += go.row(o).sum();
        if (pointwise) {
            MapMat<T>(dx.sample(i), ckk, static_cast<Eigen::Index>(cols)).noalias() = W.transpose() * go;
        } else {
            MapMat<T>(dcol.data(), ckk, static_cast<Eigen::Index>(cols)).noalias() = W.transpose() * go;
            col2im(dcol.data(), x.h, x.w, dx.sample(i));
        }
    }
    return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>&) {
    params.push_back({prefix + "weight", &weight_});
    if (bias_) params.push_back({prefix + "bias", bias_.get()});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Tensor<T>(1, channels, 1, 1, T(1))),
      beta_(Tensor<T>(1, channels, 1, 1)),
      running_mean_(1, channels, 1, 1),
      running_var_(1, channels, 1, 1, T(1)) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
    require(x.c == channels_, "batchnorm: channel mismatch");
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane_size();
    if (!training) {
        for (int c = 0; c < channels_; ++c) {
            const T scale = gamma_.value.data[c] / static_cast<T>(std::sqrt(static_cast<double>(running_var_.data[c]) + eps_));
            const T shift = beta_.value.data[c] - running_mean_.data[c] * scale;
            for (int i = 0; i < x.n; ++i) {
                const T* src = x.sample(i) + c * plane;
                T* dst = y.sample(i) + c * plane;
                for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * scale + shift;
            }
        }
        return y;
    }

    const double m = static_cast<double>(x.n) * static_cast<double>(plane);
    xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
    inv_std_.assign(channels_, T(0));
    for (int c = 0; c < channels_; ++c) {
        double sum = 0.0;
        for (int i = 0; i < x.n; ++i) {
            const T* src = x.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) sum += src[j];
        }
        const double mean = sum / m;
        double sq = 0.0;
        for (int i = 0; i < x.n; ++i) {
            const T* src = x.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = src[j] - mean;
                sq += d * d;
            }
        }
        const double var = sq / m;
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = static_cast<T>(inv);
        for (int i = 0; i < x.n; ++i) {
            const T* src = x.sample(i) + c * plane;
            T* xh = xhat_.sample(i) + c * plane;
            T* dst = y.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                xh[j] = static_cast<T>((src[j] - mean) * inv);
                dst[j] = gamma_.value.data[c] * xh[j] + beta_.value.data[c];
            }
        }
        const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
        running_mean_.data[c] = static_cast<T>((1.0 - momentum_) * running_mean_.data[c] + momentum_ * mean);
        running_var_.data[c] = static_cast<T>((1.0 - momentum_) * running_var_.data[c] + momentum_ * unbiased);
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& g) {
    require(g.same_shape(xhat_), "batchnorm: backward without matching forward");
    Tensor<T> dx(g.n, g.c, g.h, g.w);
    const std::size_t plane = g.plane_size();
    const double m = static_cast<double>(g.n) * static_cast<double>(plane);
    for (int c = 0; c < channels_; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int i = 0; i < g.n; ++i) {
            const T* gp = g.sample(i) + c * plane;
            const T* xh = xhat_.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_g += gp[j];
                sum_gx += static_cast<double>(gp[j]) * xh[j];
            }
        }
        gamma_.grad.data[c] += static_cast<T>(sum_gx);
        beta_.grad.data[c] += static_cast<T>(sum_g);
        const double gamma = gamma_.value.data[c];
        const double k = gamma * inv_std_[c] / m;
        for (int i = 0; i < g.n; ++i) {
            const T* gp = g.sample(i) + c * plane;
            const T* xh = xhat_.sample(i) + c * plane;
            T* d = dx.sample(i) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) d[j] = static_cast<T>(k * (m * gp[j] - sum_g - xh[j] * sum_gx));
        }
    }
    return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) {
    params.push_back({prefix + "gamma", &gamma_});
    params.push_back({prefix + "beta", &beta_});
    buffers.push_back({prefix + "running_mean", &running_mean_});
    buffers.push_back({prefix + "running_var", &running_var_});
}

// ---------------------------------------------------------------------------
// Activations and pooling

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = x;
    if (training) mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool on = y.data[i] > T(0);
        if (!on) y.data[i] = T(0);
        if (training) mask_[i] = on;
    }
    return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& g) {
    require(g.size() == mask_.size(), "relu: backward without matching forward");
    Tensor<T> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!mask_[i]) dx.data[i] = T(0);
    return dx;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, bool training) {
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    require(oh > 0 && ow > 0, "maxpool: input too small");
    Tensor<T> y(x.n, x.c, oh, ow);
    if (training) argmax_.assign(y.size(), 0);
    in_h_ = x.h;
    in_w_ = x.w;
    in_c_ = x.c;
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(i) * x.c + c) * x.plane_size();
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_at = base;
                    for (int ky = 0; ky < k_; ++ky) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            const std::size_t at = base + static_cast<std::size_t>(iy) * x.w + ix;
                            if (x.data[at] > best) {
                                best = x.data[at];
                                best_at = at;
                            }
                        }
                    }
                    y.data[o] = best;
                    if (training) argmax_[o] = best_at;
                }
        }
    return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& g) {
    require(g.size() == argmax_.size(), "maxpool: backward without matching forward");
    Tensor<T> dx(g.n, in_c_, in_h_, in_w_);
    for (std::size_t o = 0; o < g.size(); ++o) dx.data[argmax_[o]] += g.data[o];
    return dx;
}

template <typename T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x, bool) {
    const int oh = (x.h - k_) / stride_ + 1;
    const int ow = (x.w - k_) / stride_ + 1;
    require(oh > 0 && ow > 0, "avgpool: input too small");
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor<T> y(x.n, x.c, oh, ow);
    const T scale = T(1) / static_cast<T>(k_ * k_);
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T s = 0;
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) s += x(i, c, oy * stride_ + ky, ox * stride_ + kx);
                    y(i, c, oy, ox) = s * scale;
                }
    return y;
}

template <typename T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& g) {
    Tensor<T> dx(g.n, g.c, in_h_, in_w_);
    const T scale = T(1) / static_cast<T>(k_ * k_);
    for (int i = 0; i < g.n; ++i)
        for (int c = 0; c < g.c; ++c)
            for (int oy = 0; oy < g.h; ++oy)
                for (int ox = 0; ox < g.w; ++ox) {
                    const T v = g(i, c, oy, ox) * scale;
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) dx(i, c, oy * stride_ + ky, ox * stride_ + kx) += v;
                }
    return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, bool) {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor<T> y(x.n, x.c, 1, 1);
    const std::size_t plane = x.plane_size();
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c) {
            const T* p = x.sample(i) + c * plane;
            double s = 0.0;
            for (std::size_t j = 0; j < plane; ++j) s += p[j];
            y(i, c, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
        }
    return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& g) {
    Tensor<T> dx(g.n, g.c, in_h_, in_w_);
    const std::size_t plane = dx.plane_size();
    for (int i = 0; i < g.n; ++i)
        for (int c = 0; c < g.c; ++c) {
            const T v = g(i, c, 0, 0) / static_cast<T>(plane);
            std::fill_n(dx.sample(i) + c * plane, plane, v);
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features, std::mt19937_64& rng)
    : in_(in_features), out_(out_features), weight_(Tensor<T>(out_features, in_features, 1, 1)), bias_(Tensor<T>(1, out_features, 1, 1)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : weight_.value.data) v = static_cast<T>(dist(rng));
    for (auto& v : bias_.value.data) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool training) {
    require(static_cast<int>(x.sample_size()) == in_, "linear: expected " + std::to_string(in_) + " features, got " + x.shape_string());
    Tensor<T> y(x.n, out_, 1, 1);
    CMapMat<T> X(x.data.data(), x.n, in_);
    CMapMat<T> W(weight_.value.data.data(), out_, in_);
    MapMat<T> Y(y.data.data(), x.n, out_);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < x.n; ++i)
        for (int o = 0; o < out_; ++o) Y(i, o) += bias_.value.data[o];
    if (training) input_ = x;
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& g) {
    require(g.n == input_.n && static_cast<int>(g.sample_size()) == out_, "linear: backward without matching forward");
    CMapMat<T> G(g.data.data(), g.n, out_);
    CMapMat<T> X(input_.data.data(), input_.n, in_);
    MapMat<T>(weight_.grad.data.data(), out_, in_).noalias() += G.transpose() * X;
    for (int i = 0; i < g.n; ++i)
        for (int o = 0; o < out_; ++o) bias_.grad.data[o] += G(i, o);
    Tensor<T> dx(input_.n, input_.c, input_.h, input_.w);
    MapMat<T>(dx.data.data(), g.n, in_).noalias() = G * CMapMat<T>(weight_.value.data.data(), out_, in_);
    return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>&) {
    params.push_back({prefix + "weight", &weight_});
    params.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------------------
// Containers

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = x;
    for (auto& layer : layers_) h = layer->forward(h, training);
    return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& g) {
    Tensor<T> d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(prefix + std::to_string(i) + ".", params, buffers);
}

template <typename T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = main_->forward(x, training);
    if (shortcut_) {
        const Tensor<T> s = shortcut_->forward(x, training);
        require(s.same_shape(y), "residual: shortcut shape mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += s.data[i];
    } else {
        require(x.same_shape(y), "residual: identity shortcut shape mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
    }
    if (training) mask_.assign(y.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool on = y.data[i] > T(0);
        if (!on) y.data[i] = T(0);
        if (training) mask_[i] = on;
    }
    return y;
}

template <typename T>
Tensor<T> Residual<T>::backward(const Tensor<T>& g) {
    require(g.size() == mask_.size(), "residual: backward without matching forward");
    Tensor<T> gs = g;
    for (std::size_t i = 0; i < gs.size(); ++i)
        if (!mask_[i]) gs.data[i] = T(0);
    Tensor<T> dx = main_->backward(gs);
    if (shortcut_) {
        const Tensor<T> ds = shortcut_->backward(gs);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
    } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += gs.data[i];
    }
    return dx;
}

template <typename T>
void Residual<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) {
    main_->collect(prefix + "main.", params, buffers);
    if (shortcut_) shortcut_->collect(prefix + "shortcut.", params, buffers);
}

template <typename T>
Tensor<T> DenseConcat<T>::forward(const Tensor<T>& x, bool training) {
    const Tensor<T> f = branch_->forward(x, training);
    require(f.n == x.n && f.h == x.h && f.w == x.w, "dense: branch changed spatial shape");
    in_c_ = x.c;
    Tensor<T> y(x.n, x.c + f.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
        std::copy_n(x.sample(i), x.sample_size(), y.sample(i));
        std::copy_n(f.sample(i), f.sample_size(), y.sample(i) + x.sample_size());
    }
    return y;
}

template <typename T>
Tensor<T> DenseConcat<T>::backward(const Tensor<T>& g) {
    const int fc = g.c - in_c_;
    Tensor<T> gx(g.n, in_c_, g.h, g.w), gf(g.n, fc, g.h, g.w);
    for (int i = 0; i < g.n; ++i) {
        std::copy_n(g.sample(i), gx.sample_size(), gx.sample(i));
        std::copy_n(g.sample(i) + gx.sample_size(), gf.sample_size(), gf.sample(i));
    }
    const Tensor<T> d = branch_->backward(gf);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += d.data[i];
    return gx;
}

template <typename T>
void DenseConcat<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params, std::vector<BufferRef<T>>& buffers) {
    branch_->collect(prefix + "branch.", params, buffers);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> p(logits.n, logits.c, logits.h, logits.w);
    const std::size_t k = logits.sample_size();
    for (int i = 0; i < logits.n; ++i) {
        const T* z = logits.sample(i);
        T* out = p.sample(i);
        const T mx = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
        for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<T>(std::exp(static_cast<double>(z[j] - mx)) / sum);
    }
    return p;
}

#define RETFUSE_INSTANTIATE(T)              \
    template class Conv2d<T>;               \
    template class BatchNorm2d<T>;          \
    template class ReLU<T>;                 \
    template class MaxPool2d<T>;            \
    template class AvgPool2d<T>;            \
    template class GlobalAvgPool<T>;        \
    template class Linear<T>;               \
    template class Sequential<T>;           \
    template class Residual<T>;             \
    template class DenseConcat<T>;          \
    template Tensor<T> softmax_rows(const Tensor<T>&);

RETFUSE_INSTANTIATE(float)
RETFUSE_INSTANTIATE(double)

#undef RETFUSE_INSTANTIATE

}  // namespace retfuse::nn
