#include "advdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "advdiff/error.hpp"

namespace advdiff {

namespace {

void check_step(int k, const NoiseSchedule& s, int lowest) {
    if (k < lowest || k > s.num_steps())
        throw InvalidArgument("step " + std::to_string(k) + " outside [" + std::to_string(lowest) + ", " +
                              std::to_string(s.num_steps()) + "]");
}

void check_streams(const Images& x, const NoiseStreams& streams) {
    if (streams.size() != static_cast<std::size_t>(x.n()))
        throw ShapeMismatch("need one noise stream per example");
}

}  // namespace

Diffused forward_diffuse(const Images& x0, int k, const NoiseSchedule& schedule, NoiseStreams& streams) {
    check_step(k, schedule, 0);
    check_streams(x0, streams);
    const double signal = std::sqrt(schedule.alpha_bar(k));
    const double sigma = std::sqrt(1.0 - schedule.alpha_bar(k));
    Diffused out{Images(x0.shape()), Images(x0.shape())};
    for (int i = 0; i < x0.n(); ++i) {
        auto eps = out.noise.sample(i);
        fill_normal(eps, streams[i]);
        auto src = x0.sample(i);
        auto dst = out.noisy.sample(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = signal * src[j] + sigma * eps[j];
    }
    return out;
}

Diffused forward_diffuse(const Images& x0, int k, const NoiseSchedule& schedule, std::uint64_t seed) {
    NoiseStreams streams(seed, 0, x0.n());
    return forward_diffuse(x0, k, schedule, streams);
}

Images reverse_step(const Images& xk, int k, const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    NoiseStreams& streams) {
    check_step(k, schedule, 1);
    check_streams(xk, streams);
    const Images eps = predictor.predict(xk, k);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(k));
    const double eps_coef = schedule.beta(k) / std::sqrt(1.0 - schedule.alpha_bar(k));
    const double sigma = k > 1 ? std::sqrt(schedule.beta(k)) : 0.0;
    Images out(xk.shape());
    std::vector<double> z(xk.sample_size());
    for (int i = 0; i < xk.n(); ++i) {
        if (k > 1) fill_normal(z, streams[i]);
        auto src = xk.sample(i);
        auto e = eps.sample(i);
        auto dst = out.sample(i);
        for (std::size_t j = 0; j < src.size(); ++j) {
            double v = inv_sqrt_alpha * (src[j] - eps_coef * e[j]);
            if (k > 1) v += sigma * z[j];
            dst[j] = v;
        }
    }
    return out;
}

PurifyResult purify(const Images& x, double t, const EpsilonPredictor& predictor, const NoiseSchedule& schedule,
                    std::uint64_t seed, PurifyOptions options, std::size_t first_index) {
    const int k0 = fraction_to_step(t, schedule);
    const int chunk = std::max(1, options.batch_size);
    PurifyResult result{Images(x.shape()), k0};
    for (int begin = 0; begin < x.n(); begin += chunk) {
        const int count = std::min(chunk, x.n() - begin);
        NoiseStreams streams(seed, first_index + begin, count);
        Images cur = forward_diffuse(slice_samples(x, begin, count), k0, schedule, streams).noisy;
        for (int k = k0; k >= 1; --k) cur = reverse_step(cur, k, predictor, schedule, streams);
        for (double& v : cur.values()) v = std::clamp(v, 0.0, 1.0);
        write_samples(result.images, begin, cur);
    }
    return result;
}

double diffusion_train_step(EpsilonPredictor& predictor, const Images& batch, const NoiseSchedule& schedule,
                            Rng& rng, nn::Adam<float>& optimizer) {
    if (batch.n() == 0) throw InvalidArgument("diffusion_train_step: empty batch");
    std::uniform_int_distribution<int> step_dist(1, schedule.num_steps());
    std::vector<int> steps(batch.n());
    for (int& k : steps) k = step_dist(rng);
    Images noise(batch.shape());
    fill_normal(noise.values(), rng);
    Images noisy(batch.shape());
    for (int i = 0; i < batch.n(); ++i) {
        const double signal = std::sqrt(schedule.alpha_bar(steps[i]));
        const double sigma = std::sqrt(1.0 - schedule.alpha_bar(steps[i]));
        auto src = batch.sample(i);
        auto eps = noise.sample(i);
        auto dst = noisy.sample(i);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = signal * src[j] + sigma * eps[j];
    }
    Buffer<float> grads(predictor.params().total(), 0.0f);
    const double loss = predictor.loss_and_grads(noisy, steps, noise, grads);
    if (!std::isfinite(loss) || !nn::all_finite(grads)) throw NonFiniteError("diffusion loss diverged", -1);
    optimizer.step(predictor.params().values(), grads);
    return loss;
}

DiffusionTrainResult train_diffusion(const Images& dataset, const NoiseSchedule& schedule,
                                     const DiffusionTrainConfig& config, bool verbose) {
    if (dataset.n() == 0) throw InvalidArgument("train_diffusion: empty dataset");
    if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0))
        throw InvalidArgument("train_diffusion: invalid configuration");
    DiffusionTrainResult result{EpsilonPredictor(config.unet, derive_seed(config.seed, "init")), {}};
    nn::Adam<float> adam(result.predictor.params().total(),
                         nn::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8, config.clip_norm});
    Rng rng(derive_seed(config.seed, "train"));
    std::vector<std::size_t> order(dataset.n());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - begin);
            Images batch = gather_samples(dataset, std::span(order).subspan(begin, count));
            try {
                total += diffusion_train_step(result.predictor, batch, schedule, rng, adam);
            } catch (const NonFiniteError&) {
                throw NonFiniteError("diffusion training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batches),
                                     batches);
            }
            ++batches;
        }
        result.epoch_loss.push_back(total / batches);
        if (verbose) std::fprintf(stderr, "[diffusion] epoch %d loss %.5f\n", epoch + 1, result.epoch_loss.back());
    }
    return result;
}

}  // namespace advdiff
