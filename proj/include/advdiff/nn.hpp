#pragma once

// Minimal layer toolkit for the classifier and the denoiser.
//
// Parameters of a network live in one flat buffer; layers only remember
// offsets into it. Gradients use a buffer with the same layout, so an
// optimizer step is a loop over two flat arrays and checkpoints are a list of
// named slices. Layer functions are stateless: the caller keeps whatever
// activations the backward pass needs.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advdiff/rng.hpp"
#include "advdiff/tensor.hpp"

namespace advdiff::nn {

struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

template <typename T>
class Parameters {
public:
    /// Registers a zero-initialised array and returns its index.
    std::size_t add(std::string name, std::vector<int> shape);

    std::span<T> operator[](std::size_t idx) { return {values_.data() + info_[idx].offset, info_[idx].size}; }
    std::span<const T> operator[](std::size_t idx) const {
        return {values_.data() + info_[idx].offset, info_[idx].size};
    }

    const std::vector<ParamInfo>& info() const { return info_; }
    Buffer<T>& values() { return values_; }
    const Buffer<T>& values() const { return values_; }
    std::size_t total() const { return values_.size(); }

private:
    std::vector<ParamInfo> info_;
    Buffer<T> values_;
};

template <typename T>
inline std::span<T> grad_slice(Buffer<T>& grads, const Parameters<T>& p, std::size_t idx) {
    return {grads.data() + p.info()[idx].offset, p.info()[idx].size};
}

struct Conv2d {
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    std::size_t weight = 0;  // [out, in, k, k]
    std::size_t bias = 0;    // [out]

    int out_size(int size) const { return (size + 2 * pad - kernel) / stride + 1; }
};

struct Linear {
    int in = 0;
    int out = 0;
    std::size_t weight = 0;  // [out, in]
    std::size_t bias = 0;    // [out]
};

/// He-normal weights, zero bias.
template <typename T>
Conv2d make_conv(Parameters<T>& p, const std::string& name, int in, int out, int kernel, int stride, int pad,
                 Rng& rng, double gain = 1.0);
template <typename T>
Linear make_linear(Parameters<T>& p, const std::string& name, int in, int out, Rng& rng, double gain = 1.0);

template <typename T>
Tensor<T> conv2d(const Parameters<T>& p, const Conv2d& conv, const Tensor<T>& x);

/// Accumulates weight/bias gradients into `grads`; writes the input gradient
/// into `gx` when it is non-null.
template <typename T>
void conv2d_backward(const Parameters<T>& p, const Conv2d& conv, const Tensor<T>& x, const Tensor<T>& gy,
                     Buffer<T>& grads, Tensor<T>* gx);

/// Same as conv2d_backward but without parameter gradients (attack path).
template <typename T>
Tensor<T> conv2d_input_grad(const Parameters<T>& p, const Conv2d& conv, const Tensor<T>& x, const Tensor<T>& gy);

// Dense layers operate on [n, features, 1, 1] tensors.
template <typename T>
Tensor<T> linear(const Parameters<T>& p, const Linear& lin, const Tensor<T>& x);
template <typename T>
void linear_backward(const Parameters<T>& p, const Linear& lin, const Tensor<T>& x, const Tensor<T>& gy,
                     Buffer<T>* grads, Tensor<T>* gx);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& gy);

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& gy);

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& gy, int h, int w);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a gradient of concat_channels(a, b) back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& g, int channels_a, Tensor<T>& ga, Tensor<T>& gb);

/// x[b, c, :, :] += bias[b, c] with bias shaped [n, c, 1, 1].
template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> channel_bias_backward(const Tensor<T>& gy);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 0.0;
};

template <typename T>
class Adam {
public:
    Adam(std::size_t size, AdamConfig cfg);
    void step(std::span<T> params, std::span<const T> grads);
    long steps_taken() const { return step_; }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    long step_ = 0;
};

bool all_finite(std::span<const float> v);
bool all_finite(std::span<const double> v);

}  // namespace advdiff::nn
