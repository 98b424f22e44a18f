#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advdiff/nn.hpp"
#include "advdiff/tensor.hpp"

namespace advdiff {

struct UNetConfig {
    int channels = 1;
    /// Width of the full-resolution stage; the two lower stages use 2x.
    int base_width = 32;
    /// Sinusoidal embedding size (even).
    int embed_dim = 32;
    /// Hidden size of the step-embedding MLP.
    int time_dim = 64;

    friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// U-Net shaped noise predictor eps(x_k, k).
///
/// Two stride-2 downsampling stages, a bottleneck at 1/4 resolution and two
/// nearest-neighbour upsampling stages that concatenate the matching encoder
/// activations. A sinusoidal step embedding goes through a small MLP and is
/// projected to a per-channel bias in every stage. Input height and width must
/// be divisible by 4.
class EpsilonPredictor {
public:
    EpsilonPredictor(UNetConfig config, std::uint64_t seed);

    const UNetConfig& config() const { return config_; }
    nn::Parameters<float>& params() { return params_; }
    const nn::Parameters<float>& params() const { return params_; }

    /// One step index per example.
    Images predict(const Images& x, std::span<const int> steps) const;
    Images predict(const Images& x, int step) const;

    /// Mean squared error between predict(x, steps) and target; gradients are
    /// accumulated into `grads` (same layout as params().values()).
    double loss_and_grads(const Images& x, std::span<const int> steps, const Images& target,
                          Buffer<float>& grads) const;

private:
    struct Activations;
    Tensor<float> forward(const Tensor<float>& x, std::span<const int> steps, Activations* acts) const;
    void backward(const Activations& acts, const Tensor<float>& gout, Buffer<float>& grads) const;
    Tensor<float> step_embedding(std::span<const int> steps) const;

    UNetConfig config_;
    nn::Parameters<float> params_;
    nn::Linear time1_, time2_;
    nn::Linear proj_d0_, proj_d1_, proj_mid_, proj_u1_, proj_u0_;
    nn::Conv2d conv_in_, conv_d0_, down0_, conv_d1_, down1_, conv_mid_, conv_u1_, conv_u0_, conv_out_;
};

}  // namespace advdiff
