#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "advdiff/nn.hpp"
#include "advdiff/rng.hpp"
#include "advdiff/schedule.hpp"
#include "advdiff/tensor.hpp"
#include "advdiff/unet.hpp"

namespace advdiff {

struct Diffused {
    Images noisy;
    Images noise;
};

/// x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps, one noise stream per example.
/// The result is not clamped.
Diffused forward_diffuse(const Images& x0, int k, const NoiseSchedule& schedule, NoiseStreams& streams);
Diffused forward_diffuse(const Images& x0, int k, const NoiseSchedule& schedule, std::uint64_t seed);

/// One ancestral step x_k -> x_{k-1} with sigma_k^2 = beta_k; the k == 1 step
/// adds no noise.
Images reverse_step(const Images& xk, int k, const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    NoiseStreams& streams);

struct PurifyResult {
    Images images;
    int reverse_steps = 0;
};

struct PurifyOptions {
    /// Examples processed together; the output does not depend on it.
    int batch_size = 64;
};

/// Diffuse to k = round(t*T), run the reverse chain down to 0 and clamp to [0,1].
/// Example i draws all of its noise from derive_seed(seed, first_index + i).
PurifyResult purify(const Images& x, double t, const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    std::uint64_t seed, PurifyOptions options = {}, std::size_t first_index = 0);

/// Simplified epsilon-prediction objective: returns the pre-update MSE and
/// applies one optimizer step.
double diffusion_train_step(EpsilonPredictor& predictor, const Images& batch, const NoiseSchedule& schedule,
                            Rng& rng, nn::Adam<float>& optimizer);

struct DiffusionTrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    UNetConfig unet{};
};

struct DiffusionTrainResult {
    EpsilonPredictor predictor;
    /// Mean training loss per epoch.
    std::vector<double> epoch_loss;
};

/// Throws NonFiniteError if the loss diverges.
DiffusionTrainResult train_diffusion(const Images& dataset, const NoiseSchedule& schedule,
                                     const DiffusionTrainConfig& config, bool verbose = false);

}  // namespace advdiff
