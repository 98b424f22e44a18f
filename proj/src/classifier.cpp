#include "advdiff/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advdiff/error.hpp"

namespace advdiff {

template <typename T>
ConvNet<T>::ConvNet(ClassifierConfig config, std::uint64_t seed) : config_(std::move(config)) {
    if (config_.channels < 1 || config_.widths.empty() ||
        std::any_of(config_.widths.begin(), config_.widths.end(), [](int w) { return w < 1; }))
        throw InvalidArgument("invalid classifier configuration");
    Rng rng(seed);
    int in = config_.channels + (config_.coord_channels ? 2 : 0);
    for (std::size_t i = 0; i < config_.widths.size(); ++i) {
        convs_.push_back(nn::make_conv(params_, "block" + std::to_string(i) + ".conv", in, config_.widths[i], 3, 1, 1,
                                       rng));
        in = config_.widths[i];
    }
    head_inputs_ = in;
    if (config_.spatial_head) {
        // Spatial size is only known per input; the head is sized for the
        // configured image size.
        const int side = config_.image_size >> (config_.widths.size() - 1);
        head_inputs_ = in * side * side;
    }
    head_ = nn::make_linear(params_, "head", head_inputs_, 2, rng, 0.5);
}

template <typename T>
Tensor<T> ConvNet<T>::with_coords(const Tensor<T>& x) const {
    if (x.c() != config_.channels)
        throw ShapeMismatch("classifier expects " + std::to_string(config_.channels) + " channels, got " +
                            std::to_string(x.c()));
    if (!config_.coord_channels) return x;
    Tensor<T> out(x.n(), x.c() + 2, x.h(), x.w());
    const double sy = x.h() > 1 ? 2.0 / (x.h() - 1) : 0.0;
    const double sx = x.w() > 1 ? 2.0 / (x.w() - 1) : 0.0;
    for (int b = 0; b < x.n(); ++b) {
        auto src = x.sample(b);
        std::copy(src.begin(), src.end(), out.sample(b).begin());
        for (int i = 0; i < x.h(); ++i)
            for (int j = 0; j < x.w(); ++j) {
                out(b, x.c(), i, j) = static_cast<T>(i * sy - 1.0);
                out(b, x.c() + 1, i, j) = static_cast<T>(j * sx - 1.0);
            }
    }
    return out;
}

template <typename T>
Tensor<T> ConvNet<T>::pool(const Tensor<T>& h) const {
    if (!config_.spatial_head) return nn::global_avg_pool(h);
    if (h.sample_size() != static_cast<std::size_t>(head_inputs_))
        throw ShapeMismatch("spatial head expects " + std::to_string(config_.image_size) + "px inputs");
    Tensor<T> flat(h.n(), static_cast<int>(h.sample_size()), 1, 1);
    flat.values() = h.values();
    return flat;
}

template <typename T>
Tensor<T> ConvNet<T>::logits(const Tensor<T>& x) const {
    Tensor<T> h = with_coords(x);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = nn::relu(nn::conv2d(params_, convs_[i], h));
        if (i + 1 < convs_.size()) h = nn::avg_pool2(h);
    }
    return nn::linear(params_, head_, pool(h));
}

template <typename T>
double ConvNet<T>::backprop(const Tensor<T>& x, std::span<const int> labels, Buffer<T>* param_grads,
                            Tensor<T>* input_grad) const {
    if (labels.size() != static_cast<std::size_t>(x.n())) throw ShapeMismatch("one label per example required");
    if (param_grads && param_grads->size() != params_.total()) param_grads->assign(params_.total(), T{});

    const std::size_t nb = convs_.size();
    std::vector<Tensor<T>> inputs(nb), pre(nb);
    Tensor<T> h = with_coords(x);
    for (std::size_t i = 0; i < nb; ++i) {
        inputs[i] = h;
        pre[i] = nn::conv2d(params_, convs_[i], h);
        h = nn::relu(pre[i]);
        if (i + 1 < nb) h = nn::avg_pool2(h);
    }
    const int last_h = h.h(), last_w = h.w();
    Tensor<T> pooled = pool(h);
    Tensor<T> z = nn::linear(params_, head_, pooled);

    double loss = 0.0;
    Tensor<T> gz(z.shape());
    for (int b = 0; b < x.n(); ++b) {
        const int y = labels[b];
        if (y != 0 && y != 1) throw InvalidArgument("labels must be 0 or 1");
        const double z0 = z(b, 0, 0, 0), z1 = z(b, 1, 0, 0);
        const double m = std::max(z0, z1);
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        loss += lse - (y == 0 ? z0 : z1);
        const double p0 = std::exp(z0 - lse), p1 = std::exp(z1 - lse);
        gz(b, 0, 0, 0) = static_cast<T>(p0 - (y == 0 ? 1.0 : 0.0));
        gz(b, 1, 0, 0) = static_cast<T>(p1 - (y == 1 ? 1.0 : 0.0));
    }

    Tensor<T> g;
    nn::linear_backward(params_, head_, pooled, gz, param_grads, &g);
    if (config_.spatial_head) {
        Tensor<T> unflat(x.n(), h.c(), last_h, last_w);
        unflat.values() = std::move(g.values());
        g = std::move(unflat);
    } else {
        g = nn::global_avg_pool_backward(g, last_h, last_w);
    }
    for (std::size_t ii = nb; ii-- > 0;) {
        if (ii + 1 < nb) g = nn::avg_pool2_backward(g);
        g = nn::relu_backward(pre[ii], g);
        const bool need_input = ii > 0 || input_grad != nullptr;
        if (param_grads) {
            Tensor<T> gin;
            nn::conv2d_backward(params_, convs_[ii], inputs[ii], g, *param_grads, need_input ? &gin : nullptr);
            g = std::move(gin);
        } else if (need_input) {
            g = nn::conv2d_input_grad(params_, convs_[ii], inputs[ii], g);
        }
    }
    if (input_grad) {
        *input_grad = Tensor<T>(x.shape());
        for (int b = 0; b < x.n(); ++b) {
            auto src = g.sample(b);
            std::copy_n(src.begin(), x.sample_size(), input_grad->sample(b).begin());
        }
    }
    return loss;
}

template class ConvNet<float>;
template class ConvNet<double>;

std::vector<Logits> ConvClassifier::logits(const Images& x) const {
    std::vector<Logits> out;
    out.reserve(x.n());
    for (int begin = 0; begin < x.n(); begin += kChunk) {
        const int count = std::min(kChunk, x.n() - begin);
        Tensor<float> z = net_.logits(tensor_cast<float>(slice_samples(x, begin, count)));
        for (int b = 0; b < count; ++b) out.push_back({z(b, 0, 0, 0), z(b, 1, 0, 0)});
    }
    return out;
}

double ConvClassifier::loss_and_input_grad(const Images& x, std::span<const int> labels, Images& grad) const {
    if (labels.size() != static_cast<std::size_t>(x.n())) throw ShapeMismatch("one label per example required");
    grad = Images(x.shape());
    double loss = 0.0;
    for (int begin = 0; begin < x.n(); begin += kChunk) {
        const int count = std::min(kChunk, x.n() - begin);
        Tensor<float> g;
        loss += net_.backprop(tensor_cast<float>(slice_samples(x, begin, count)), labels.subspan(begin, count),
                              nullptr, &g);
        for (int b = 0; b < count; ++b) {
            auto src = g.sample(b);
            if (!nn::all_finite(src))
                throw NonFiniteError("non-finite input gradient at batch index " + std::to_string(begin + b),
                                     begin + b);
            std::copy(src.begin(), src.end(), grad.sample(begin + b).begin());
        }
    }
    if (!std::isfinite(loss)) throw NonFiniteError("non-finite classifier loss", -1);
    return loss;
}

double ConvClassifier::loss_and_param_grads(const Images& x, std::span<const int> labels,
                                            Buffer<float>& grads) const {
    Buffer<float> summed(net_.params().total(), 0.0f);
    const double loss = net_.backprop(tensor_cast<float>(x), labels, &summed, nullptr);
    if (grads.size() != summed.size()) grads.assign(summed.size(), 0.0f);
    const float inv = 1.0f / static_cast<float>(x.n());
    for (std::size_t i = 0; i < summed.size(); ++i) grads[i] += summed[i] * inv;
    return loss / x.n();
}

ClassProbs softmax(const Logits& z) {
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    const double s = e0 + e1;
    return {e0 / s, e1 / s};
}

std::vector<ClassProbs> predict(const BinaryClassifier& classifier, const Images& x) {
    std::vector<ClassProbs> probs;
    const auto z = classifier.logits(x);
    if (z.size() != static_cast<std::size_t>(x.n())) throw ShapeMismatch("classifier returned wrong batch size");
    probs.reserve(z.size());
    for (const auto& row : z) probs.push_back(softmax(row));
    return probs;
}

int argmax(const ClassProbs& p) { return p[1] > p[0] ? 1 : 0; }

std::vector<int> predicted_labels(const BinaryClassifier& classifier, const Images& x) {
    std::vector<int> out;
    for (const auto& p : predict(classifier, x)) out.push_back(argmax(p));
    return out;
}

double accuracy(std::span<const ClassProbs> probs, std::span<const int> labels) {
    if (probs.size() != labels.size()) throw ShapeMismatch("accuracy: size mismatch");
    if (probs.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) correct += argmax(probs[i]) == labels[i];
    return static_cast<double>(correct) / probs.size();
}

}  // namespace advdiff
