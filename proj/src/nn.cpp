#include "advdiff/nn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

#include "advdiff/error.hpp"

namespace advdiff::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// cols for one sample is [(c*k*k), (ho*wo)], row index (ci*k + ki)*k + kj.
// Working one sample at a time keeps the column buffer cache resident.
template <typename T>
void im2col(const Tensor<T>& x, int b, const Conv2d& cv, int ho, int wo, Buffer<T>& cols) {
    const int c = x.c(), h = x.h(), w = x.w(), k = cv.kernel;
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    cols.assign(static_cast<std::size_t>(c) * k * k * plane, T{});
    for (int ci = 0; ci < c; ++ci) {
        const T* src = x.data() + (static_cast<std::size_t>(b) * c + ci) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* dst = cols.data() + ((static_cast<std::size_t>(ci) * k + ki) * k + kj) * plane;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * cv.stride - cv.pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    const T* srow = src + static_cast<std::size_t>(ih) * w;
                    T* drow = dst + static_cast<std::size_t>(oh) * wo;
                    if (cv.stride == 1) {
                        const int shift = kj - cv.pad;
                        const int lo = std::max(0, -shift), hi = std::min(wo, w - shift);
                        for (int ow = lo; ow < hi; ++ow) drow[ow] = srow[ow + shift];
                    } else {
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * cv.stride - cv.pad + kj;
                            if (iw >= 0 && iw < w) drow[ow] = srow[iw];
                        }
                    }
                }
            }
        }
    }
}

// Scatter-adds one sample's column gradient into gx[b].
template <typename T>
void col2im(const Buffer<T>& cols, int b, const Conv2d& cv, int ho, int wo, Tensor<T>& gx) {
    const int c = gx.c(), h = gx.h(), w = gx.w(), k = cv.kernel;
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        T* dst = gx.data() + (static_cast<std::size_t>(b) * c + ci) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* src = cols.data() + ((static_cast<std::size_t>(ci) * k + ki) * k + kj) * plane;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * cv.stride - cv.pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    T* drow = dst + static_cast<std::size_t>(ih) * w;
                    const T* srow = src + static_cast<std::size_t>(oh) * wo;
                    if (cv.stride == 1) {
                        const int shift = kj - cv.pad;
                        const int lo = std::max(0, -shift), hi = std::min(wo, w - shift);
                        for (int ow = lo; ow < hi; ++ow) drow[ow + shift] += srow[ow];
                    } else {
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * cv.stride - cv.pad + kj;
                            if (iw >= 0 && iw < w) drow[iw] += srow[ow];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void check_conv_input(const Conv2d& cv, const Tensor<T>& x) {
    if (x.c() != cv.in)
        throw ShapeMismatch("conv2d expects " + std::to_string(cv.in) + " channels, got " + std::to_string(x.c()));
}

thread_local Buffer<float> tl_cols_f, tl_rows_f;
thread_local Buffer<double> tl_cols_d, tl_rows_d;

template <typename T>
Buffer<T>& cols_buffer() {
    if constexpr (std::is_same_v<T, float>) return tl_cols_f;
    else return tl_cols_d;
}
template <typename T>
Buffer<T>& rows_buffer() {
    if constexpr (std::is_same_v<T, float>) return tl_rows_f;
    else return tl_rows_d;
}

}  // namespace

template <typename T>
std::size_t Parameters<T>::add(std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int d : shape) size *= static_cast<std::size_t>(d);
    info_.push_back({std::move(name), std::move(shape), values_.size(), size});
    values_.resize(values_.size() + size, T{});
    return info_.size() - 1;
}

template <typename T>
Conv2d make_conv(Parameters<T>& p, const std::string& name, int in, int out, int kernel, int stride, int pad,
                 Rng& rng, double gain) {
    Conv2d cv{in, out, kernel, stride, pad, 0, 0};
    cv.weight = p.add(name + ".weight", {out, in, kernel, kernel});
    cv.bias = p.add(name + ".bias", {out});
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / (in * kernel * kernel)));
    for (T& v : p[cv.weight]) v = static_cast<T>(dist(rng));
    return cv;
}

template <typename T>
Linear make_linear(Parameters<T>& p, const std::string& name, int in, int out, Rng& rng, double gain) {
    Linear lin{in, out, 0, 0};
    lin.weight = p.add(name + ".weight", {out, in});
    lin.bias = p.add(name + ".bias", {out});
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / in));
    for (T& v : p[lin.weight]) v = static_cast<T>(dist(rng));
    return lin;
}

template <typename T>
Tensor<T> conv2d(const Parameters<T>& p, const Conv2d& cv, const Tensor<T>& x) {
    check_conv_input(cv, x);
    const int ho = cv.out_size(x.h()), wo = cv.out_size(x.w());
    const auto plane = static_cast<Eigen::Index>(ho) * wo;
    const int kdim = cv.in * cv.kernel * cv.kernel;
    auto& cols = cols_buffer<T>();
    CMapMat<T> wmat(p[cv.weight].data(), cv.out, kdim);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(p[cv.bias].data(), cv.out);
    Tensor<T> y(x.n(), cv.out, ho, wo);
    for (int b = 0; b < x.n(); ++b) {
        im2col(x, b, cv, ho, wo, cols);
        CMapMat<T> cmat(cols.data(), kdim, plane);
        MapMat<T> ymat(y.data() + b * cv.out * plane, cv.out, plane);
        ymat.noalias() = wmat * cmat;
        ymat.colwise() += bias;
    }
    return y;
}

template <typename T>
void conv2d_backward(const Parameters<T>& p, const Conv2d& cv, const Tensor<T>& x, const Tensor<T>& gy,
                     Buffer<T>& grads, Tensor<T>* gx) {
    check_conv_input(cv, x);
    const int ho = gy.h(), wo = gy.w();
    const auto plane = static_cast<Eigen::Index>(ho) * wo;
    const int kdim = cv.in * cv.kernel * cv.kernel;
    auto& cols = cols_buffer<T>();
    auto& dcols = rows_buffer<T>();
    CMapMat<T> wmat(p[cv.weight].data(), cv.out, kdim);
    MapMat<T> gw(grad_slice(grads, p, cv.weight).data(), cv.out, kdim);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_slice(grads, p, cv.bias).data(), cv.out);
    if (gx) *gx = Tensor<T>(x.shape());
    for (int b = 0; b < x.n(); ++b) {
        im2col(x, b, cv, ho, wo, cols);
        CMapMat<T> cmat(cols.data(), kdim, plane);
        CMapMat<T> gmat(gy.data() + b * cv.out * plane, cv.out, plane);
        gw.noalias() += gmat * cmat.transpose();
        gb += gmat.rowwise().sum();
        if (gx) {
            dcols.resize(static_cast<std::size_t>(kdim) * plane);
            MapMat<T> dc(dcols.data(), kdim, plane);
            dc.noalias() = wmat.transpose() * gmat;
            col2im(dcols, b, cv, ho, wo, *gx);
        }
    }
}

template <typename T>
Tensor<T> conv2d_input_grad(const Parameters<T>& p, const Conv2d& cv, const Tensor<T>& x, const Tensor<T>& gy) {
    check_conv_input(cv, x);
    const int ho = gy.h(), wo = gy.w();
    const auto plane = static_cast<Eigen::Index>(ho) * wo;
    const int kdim = cv.in * cv.kernel * cv.kernel;
    CMapMat<T> wmat(p[cv.weight].data(), cv.out, kdim);
    auto& dcols = rows_buffer<T>();
    dcols.resize(static_cast<std::size_t>(kdim) * plane);
    Tensor<T> gx(x.shape());
    for (int b = 0; b < x.n(); ++b) {
        CMapMat<T> gmat(gy.data() + b * cv.out * plane, cv.out, plane);
        MapMat<T> dc(dcols.data(), kdim, plane);
        dc.noalias() = wmat.transpose() * gmat;
        col2im(dcols, b, cv, ho, wo, gx);
    }
    return gx;
}

template <typename T>
Tensor<T> linear(const Parameters<T>& p, const Linear& lin, const Tensor<T>& x) {
    if (x.sample_size() != static_cast<std::size_t>(lin.in))
        throw ShapeMismatch("linear expects " + std::to_string(lin.in) + " features");
    Tensor<T> y(x.n(), lin.out, 1, 1);
    CMapMat<T> wm(p[lin.weight].data(), lin.out, lin.in);
    auto bias = p[lin.bias];
    // One aligned matrix-vector product per example: a batched GEMM would
    // make each row depend on the batch size.
    Eigen::Matrix<T, Eigen::Dynamic, 1> xv(lin.in), yv(lin.out);
    for (int b = 0; b < x.n(); ++b) {
        std::copy_n(x.data() + static_cast<std::size_t>(b) * lin.in, lin.in, xv.data());
        yv.noalias() = wm * xv;
        for (int o = 0; o < lin.out; ++o) y.data()[static_cast<std::size_t>(b) * lin.out + o] = yv[o] + bias[o];
    }
    return y;
}

template <typename T>
void linear_backward(const Parameters<T>& p, const Linear& lin, const Tensor<T>& x, const Tensor<T>& gy,
                     Buffer<T>* grads, Tensor<T>* gx) {
    CMapMat<T> xm(x.data(), x.n(), lin.in);
    CMapMat<T> gm(gy.data(), x.n(), lin.out);
    CMapMat<T> wm(p[lin.weight].data(), lin.out, lin.in);
    if (grads) {
        MapMat<T> gw(grad_slice(*grads, p, lin.weight).data(), lin.out, lin.in);
        gw.noalias() += gm.transpose() * xm;
        auto gb = grad_slice(*grads, p, lin.bias);
        for (int o = 0; o < lin.out; ++o) gb[o] += gm.col(o).sum();
    }
    if (gx) {
        *gx = Tensor<T>(x.shape());
        MapMat<T> gxm(gx->data(), x.n(), lin.in);
        gxm.noalias() = gm * wm;
    }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y.values()[i] = x.values()[i] > T{} ? x.values()[i] : T{};
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx.values()[i] = x.values()[i] > T{} ? gy.values()[i] : T{};
    return gx;
}

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const auto n = static_cast<Eigen::Index>(x.size());
    CArrMap<T> v(x.data(), n);
    ArrMap<T>(y.data(), n) = v / (T{1} + (-v).exp());
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
    Tensor<T> gx(x.shape());
    const auto n = static_cast<Eigen::Index>(x.size());
    CArrMap<T> v(x.data(), n);
    const Eigen::Array<T, Eigen::Dynamic, 1> s = T{1} / (T{1} + (-v).exp());
    ArrMap<T>(gx.data(), n) = CArrMap<T>(gy.data(), n) * (s + v * s * (T{1} - s));
    return gx;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j)
                    y(b, c, i, j) = T(0.25) * (x(b, c, 2 * i, 2 * j) + x(b, c, 2 * i, 2 * j + 1) +
                                               x(b, c, 2 * i + 1, 2 * j) + x(b, c, 2 * i + 1, 2 * j + 1));
    return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.n(), gy.c(), gy.h() * 2, gy.w() * 2);
    for (int b = 0; b < gy.n(); ++b)
        for (int c = 0; c < gy.c(); ++c)
            for (int i = 0; i < gx.h(); ++i)
                for (int j = 0; j < gx.w(); ++j) gx(b, c, i, j) = T(0.25) * gy(b, c, i / 2, j / 2);
    return gx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
    Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) y(b, c, i, j) = x(b, c, i / 2, j / 2);
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy) {
    Tensor<T> gx(gy.n(), gy.c(), gy.h() / 2, gy.w() / 2);
    for (int b = 0; b < gy.n(); ++b)
        for (int c = 0; c < gy.c(); ++c)
            for (int i = 0; i < gy.h(); ++i)
                for (int j = 0; j < gy.w(); ++j) gx(b, c, i / 2, j / 2) += gy(b, c, i, j);
    return gx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    Tensor<T> y(x.n(), x.c(), 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c) {
            const T* src = x.data() + (static_cast<std::size_t>(b) * x.c() + c) * plane;
            y(b, c, 0, 0) = std::accumulate(src, src + plane, T{}) / static_cast<T>(plane);
        }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& gy, int h, int w) {
    Tensor<T> gx(gy.n(), gy.c(), h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < gy.n(); ++b)
        for (int c = 0; c < gy.c(); ++c) {
            T* dst = gx.data() + (static_cast<std::size_t>(b) * gy.c() + c) * plane;
            std::fill_n(dst, plane, gy(b, c, 0, 0) / static_cast<T>(plane));
        }
    return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw ShapeMismatch("concat_channels");
    Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
    for (int i = 0; i < a.n(); ++i) {
        auto dst = y.sample(i);
        auto sa = a.sample(i);
        auto sb = b.sample(i);
        std::copy(sa.begin(), sa.end(), dst.begin());
        std::copy(sb.begin(), sb.end(), dst.begin() + sa.size());
    }
    return y;
}

template <typename T>
void split_channels(const Tensor<T>& g, int channels_a, Tensor<T>& ga, Tensor<T>& gb) {
    ga = Tensor<T>(g.n(), channels_a, g.h(), g.w());
    gb = Tensor<T>(g.n(), g.c() - channels_a, g.h(), g.w());
    for (int i = 0; i < g.n(); ++i) {
        auto src = g.sample(i);
        std::copy_n(src.begin(), ga.sample_size(), ga.sample(i).begin());
        std::copy(src.begin() + ga.sample_size(), src.end(), gb.sample(i).begin());
    }
}

template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.n() != x.n() || bias.c() != x.c()) throw ShapeMismatch("add_channel_bias");
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c) {
            T* dst = x.data() + (static_cast<std::size_t>(b) * x.c() + c) * plane;
            const T v = bias(b, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
        }
}

template <typename T>
Tensor<T> channel_bias_backward(const Tensor<T>& gy) {
    Tensor<T> g(gy.n(), gy.c(), 1, 1);
    const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
    for (int b = 0; b < gy.n(); ++b)
        for (int c = 0; c < gy.c(); ++c) {
            const T* src = gy.data() + (static_cast<std::size_t>(b) * gy.c() + c) * plane;
            g(b, c, 0, 0) = std::accumulate(src, src + plane, T{});
        }
    return g;
}

template <typename T>
Adam<T>::Adam(std::size_t size, AdamConfig cfg) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

template <typename T>
void Adam<T>::step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeMismatch("adam: size mismatch");
    double scale = 1.0;
    if (cfg_.clip_norm > 0) {
        double sq = 0.0;
        for (T g : grads) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = scale * grads[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m_[i] / c1, v_hat = v_[i] / c2;
        params[i] = static_cast<T>(params[i] - cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps));
    }
}

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}
bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

#define ADVDIFF_INSTANTIATE(T)                                                                                    \
    template class Parameters<T>;                                                                                 \
    template class Adam<T>;                                                                                       \
    template Conv2d make_conv<T>(Parameters<T>&, const std::string&, int, int, int, int, int, Rng&, double);     \
    template Linear make_linear<T>(Parameters<T>&, const std::string&, int, int, Rng&, double);                  \
    template Tensor<T> conv2d<T>(const Parameters<T>&, const Conv2d&, const Tensor<T>&);                          \
    template void conv2d_backward<T>(const Parameters<T>&, const Conv2d&, const Tensor<T>&, const Tensor<T>&,    \
                                     Buffer<T>&, Tensor<T>*);                                                \
    template Tensor<T> conv2d_input_grad<T>(const Parameters<T>&, const Conv2d&, const Tensor<T>&,                \
                                            const Tensor<T>&);                                                    \
    template Tensor<T> linear<T>(const Parameters<T>&, const Linear&, const Tensor<T>&);                          \
    template void linear_backward<T>(const Parameters<T>&, const Linear&, const Tensor<T>&, const Tensor<T>&,    \
                                     Buffer<T>*, Tensor<T>*);                                                \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> silu<T>(const Tensor<T>&);                                                                 \
    template Tensor<T> silu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                            \
    template Tensor<T> avg_pool2_backward<T>(const Tensor<T>&);                                                   \
    template Tensor<T> upsample2<T>(const Tensor<T>&);                                                            \
    template Tensor<T> upsample2_backward<T>(const Tensor<T>&);                                                   \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                                      \
    template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, int, int);                                   \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);                               \
    template void add_channel_bias<T>(Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> channel_bias_backward<T>(const Tensor<T>&);

ADVDIFF_INSTANTIATE(float)
ADVDIFF_INSTANTIATE(double)

#undef ADVDIFF_INSTANTIATE

}  // namespace advdiff::nn
