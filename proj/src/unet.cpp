#include "advdiff/unet.hpp"

#include <cmath>
#include <string>

#include "advdiff/error.hpp"

namespace advdiff {


struct EpsilonPredictor::Activations {
    Tensor<float> x, emb, t1, t1a, t2, e;
    Tensor<float> h0, z0, a0, z1d, h1, z1, a1, z2d, h2, zm, am, cu1, zu1, au1, cu0, zu0, au0;
};

EpsilonPredictor::EpsilonPredictor(UNetConfig config, std::uint64_t seed) : config_(config) {
    if (config.channels < 1 || config.base_width < 1 || config.embed_dim < 2 || config.embed_dim % 2 != 0 ||
        config.time_dim < 1)
        throw InvalidArgument("invalid UNet configuration");
    Rng rng(seed);
    const int c = config.channels, w0 = config.base_width, w1 = 2 * config.base_width, td = config.time_dim;
    auto& p = params_;
    time1_ = nn::make_linear(p, "time.fc1", config.embed_dim, td, rng);
    time2_ = nn::make_linear(p, "time.fc2", td, td, rng);
    proj_d0_ = nn::make_linear(p, "down0.time_proj", td, w0, rng, 0.5);
    proj_d1_ = nn::make_linear(p, "down1.time_proj", td, w1, rng, 0.5);
    proj_mid_ = nn::make_linear(p, "mid.time_proj", td, w1, rng, 0.5);
    proj_u1_ = nn::make_linear(p, "up1.time_proj", td, w1, rng, 0.5);
    proj_u0_ = nn::make_linear(p, "up0.time_proj", td, w0, rng, 0.5);
    conv_in_ = nn::make_conv(p, "conv_in", c, w0, 3, 1, 1, rng);
    conv_d0_ = nn::make_conv(p, "down0.conv", w0, w0, 3, 1, 1, rng);
    down0_ = nn::make_conv(p, "down0.downsample", w0, w1, 3, 2, 1, rng);
    conv_d1_ = nn::make_conv(p, "down1.conv", w1, w1, 3, 1, 1, rng);
    down1_ = nn::make_conv(p, "down1.downsample", w1, w1, 3, 2, 1, rng);
    conv_mid_ = nn::make_conv(p, "mid.conv", w1, w1, 3, 1, 1, rng);
    conv_u1_ = nn::make_conv(p, "up1.conv", 2 * w1, w1, 3, 1, 1, rng);
    conv_u0_ = nn::make_conv(p, "up0.conv", w1 + w0, w0, 3, 1, 1, rng);
    conv_out_ = nn::make_conv(p, "conv_out", w0, c, 3, 1, 1, rng, 0.1);
}

Tensor<float> EpsilonPredictor::step_embedding(std::span<const int> steps) const {
    const int half = config_.embed_dim / 2;
    Tensor<float> emb(static_cast<int>(steps.size()), config_.embed_dim, 1, 1);
    for (std::size_t b = 0; b < steps.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = steps[b] * freq;
            emb(static_cast<int>(b), i, 0, 0) = static_cast<float>(std::sin(arg));
            emb(static_cast<int>(b), i + half, 0, 0) = static_cast<float>(std::cos(arg));
        }
    }
    return emb;
}

Tensor<float> EpsilonPredictor::forward(const Tensor<float>& x, std::span<const int> steps, Activations* acts) const {
    if (x.c() != config_.channels)
        throw ShapeMismatch("predictor expects " + std::to_string(config_.channels) + " channels");
    if (x.h() % 4 != 0 || x.w() % 4 != 0) throw ShapeMismatch("predictor needs height/width divisible by 4");
    if (steps.size() != static_cast<std::size_t>(x.n())) throw ShapeMismatch("predictor: one step per example");
    const auto& p = params_;

    Tensor<float> emb = step_embedding(steps);
    Tensor<float> t1 = nn::linear(p, time1_, emb);
    Tensor<float> t1a = nn::silu(t1);
    Tensor<float> t2 = nn::linear(p, time2_, t1a);
    Tensor<float> e = nn::silu(t2);

    Tensor<float> h0 = nn::conv2d(p, conv_in_, x);
    Tensor<float> z0 = nn::conv2d(p, conv_d0_, h0);
    nn::add_channel_bias(z0, nn::linear(p, proj_d0_, e));
    Tensor<float> a0 = nn::silu(z0);
    Tensor<float> z1d = nn::conv2d(p, down0_, a0);
    Tensor<float> h1 = nn::silu(z1d);
    Tensor<float> z1 = nn::conv2d(p, conv_d1_, h1);
    nn::add_channel_bias(z1, nn::linear(p, proj_d1_, e));
    Tensor<float> a1 = nn::silu(z1);
    Tensor<float> z2d = nn::conv2d(p, down1_, a1);
    Tensor<float> h2 = nn::silu(z2d);
    Tensor<float> zm = nn::conv2d(p, conv_mid_, h2);
    nn::add_channel_bias(zm, nn::linear(p, proj_mid_, e));
    Tensor<float> am = nn::silu(zm);
    Tensor<float> cu1 = nn::concat_channels(nn::upsample2(am), a1);
    Tensor<float> zu1 = nn::conv2d(p, conv_u1_, cu1);
    nn::add_channel_bias(zu1, nn::linear(p, proj_u1_, e));
    Tensor<float> au1 = nn::silu(zu1);
    Tensor<float> cu0 = nn::concat_channels(nn::upsample2(au1), a0);
    Tensor<float> zu0 = nn::conv2d(p, conv_u0_, cu0);
    nn::add_channel_bias(zu0, nn::linear(p, proj_u0_, e));
    Tensor<float> au0 = nn::silu(zu0);
    Tensor<float> out = nn::conv2d(p, conv_out_, au0);

    if (acts) {
        *acts = Activations{x,          std::move(emb), std::move(t1),  std::move(t1a), std::move(t2),
                            std::move(e), std::move(h0), std::move(z0), std::move(a0), std::move(z1d),
                            std::move(h1), std::move(z1), std::move(a1), std::move(z2d), std::move(h2),
                            std::move(zm), std::move(am), std::move(cu1), std::move(zu1), std::move(au1),
                            std::move(cu0), std::move(zu0), std::move(au0)};
    }
    return out;
}

void EpsilonPredictor::backward(const Activations& a, const Tensor<float>& gout, Buffer<float>& grads) const {
    const auto& p = params_;
    Tensor<float> ge(a.e.shape());
    auto accumulate_time = [&](const nn::Linear& proj, const Tensor<float>& gz) {
        Tensor<float> gbias = nn::channel_bias_backward(gz);
        Tensor<float> gpart;
        nn::linear_backward(p, proj, a.e, gbias, &grads, &gpart);
        for (std::size_t i = 0; i < ge.size(); ++i) ge.values()[i] += gpart.values()[i];
    };

    Tensor<float> g;
    nn::conv2d_backward(p, conv_out_, a.au0, gout, grads, &g);
    Tensor<float> gz = nn::silu_backward(a.zu0, g);
    accumulate_time(proj_u0_, gz);
    Tensor<float> gc;
    nn::conv2d_backward(p, conv_u0_, a.cu0, gz, grads, &gc);
    Tensor<float> g_up0, g_a0;
    nn::split_channels(gc, a.au1.c(), g_up0, g_a0);
    g = nn::upsample2_backward(g_up0);

    gz = nn::silu_backward(a.zu1, g);
    accumulate_time(proj_u1_, gz);
    nn::conv2d_backward(p, conv_u1_, a.cu1, gz, grads, &gc);
    Tensor<float> g_up1, g_a1;
    nn::split_channels(gc, a.am.c(), g_up1, g_a1);
    g = nn::upsample2_backward(g_up1);

    gz = nn::silu_backward(a.zm, g);
    accumulate_time(proj_mid_, gz);
    nn::conv2d_backward(p, conv_mid_, a.h2, gz, grads, &g);
    g = nn::silu_backward(a.z2d, g);
    nn::conv2d_backward(p, down1_, a.a1, g, grads, &g);
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += g_a1.values()[i];

    gz = nn::silu_backward(a.z1, g);
    accumulate_time(proj_d1_, gz);
    nn::conv2d_backward(p, conv_d1_, a.h1, gz, grads, &g);
    g = nn::silu_backward(a.z1d, g);
    nn::conv2d_backward(p, down0_, a.a0, g, grads, &g);
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += g_a0.values()[i];

    gz = nn::silu_backward(a.z0, g);
    accumulate_time(proj_d0_, gz);
    nn::conv2d_backward(p, conv_d0_, a.h0, gz, grads, &g);
    nn::conv2d_backward(p, conv_in_, a.x, g, grads, static_cast<Tensor<float>*>(nullptr));

    Tensor<float> gt2 = nn::silu_backward(a.t2, ge);
    Tensor<float> gt1a;
    nn::linear_backward(p, time2_, a.t1a, gt2, &grads, &gt1a);
    Tensor<float> gt1 = nn::silu_backward(a.t1, gt1a);
    nn::linear_backward(p, time1_, a.emb, gt1, &grads, static_cast<Tensor<float>*>(nullptr));
}

Images EpsilonPredictor::predict(const Images& x, std::span<const int> steps) const {
    return tensor_cast<double>(forward(tensor_cast<float>(x), steps, nullptr));
}

Images EpsilonPredictor::predict(const Images& x, int step) const {
    std::vector<int> steps(x.n(), step);
    return predict(x, steps);
}

double EpsilonPredictor::loss_and_grads(const Images& x, std::span<const int> steps, const Images& target,
                                        Buffer<float>& grads) const {
    if (!x.same_shape(target)) throw ShapeMismatch("predictor loss: target shape mismatch");
    if (grads.size() != params_.total()) grads.assign(params_.total(), 0.0f);
    Activations acts;
    Tensor<float> out = forward(tensor_cast<float>(x), steps, &acts);
    Tensor<float> gout(out.shape());
    double loss = 0.0;
    const double scale = 2.0 / static_cast<double>(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = static_cast<double>(out.values()[i]) - target.values()[i];
        loss += d * d;
        gout.values()[i] = static_cast<float>(scale * d);
    }
    backward(acts, gout, grads);
    return loss / static_cast<double>(out.size());
}

}  // namespace advdiff
