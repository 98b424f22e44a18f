#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "advdiff/nn.hpp"
#include "advdiff/tensor.hpp"

namespace advdiff {

using ClassProbs = std::array<double, 2>;
using Logits = std::array<double, 2>;

/// Anything the attacks and defenses can query: two logits per image and the
/// gradient of the summed cross-entropy with respect to the input.
class BinaryClassifier {
public:
    virtual ~BinaryClassifier() = default;

    virtual std::vector<Logits> logits(const Images& x) const = 0;
    /// Returns the cross-entropy summed over the batch and writes d(loss)/dx.
    virtual double loss_and_input_grad(const Images& x, std::span<const int> labels, Images& grad) const = 0;
};

struct ClassifierConfig {
    int channels = 1;
    /// One 3x3 conv + ReLU block per entry; all but the last are followed by
    /// 2x2 average pooling.
    std::vector<int> widths{32, 64, 128};
    /// Append two fixed pixel-coordinate planes to the input so features can
    /// encode where in the image they were found.
    bool coord_channels = true;
    /// Feed the flattened last feature map to the head instead of its global
    /// average.
    bool spatial_head = true;
    /// Input side length; only used to size the spatial head.
    int image_size = 32;

    friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

/// Conv blocks, then global average pooling or the flattened last feature map,
/// then a linear head with 2 outputs.
template <typename T>
class ConvNet {
public:
    ConvNet(ClassifierConfig config, std::uint64_t seed);

    const ClassifierConfig& config() const { return config_; }
    nn::Parameters<T>& params() { return params_; }
    const nn::Parameters<T>& params() const { return params_; }

    /// [n, 2, 1, 1]
    Tensor<T> logits(const Tensor<T>& x) const;

    /// Summed cross-entropy. Parameter gradients are accumulated into
    /// `param_grads` and the input gradient is written to `input_grad` when the
    /// respective pointer is non-null.
    double backprop(const Tensor<T>& x, std::span<const int> labels, Buffer<T>* param_grads,
                    Tensor<T>* input_grad) const;

private:
    Tensor<T> with_coords(const Tensor<T>& x) const;
    Tensor<T> pool(const Tensor<T>& h) const;

    ClassifierConfig config_;
    nn::Parameters<T> params_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear head_;
    int head_inputs_ = 0;
};

/// Single-precision ConvNet behind the BinaryClassifier interface.
class ConvClassifier : public BinaryClassifier {
public:
    ConvClassifier(ClassifierConfig config, std::uint64_t seed) : net_(std::move(config), seed) {}

    std::vector<Logits> logits(const Images& x) const override;
    double loss_and_input_grad(const Images& x, std::span<const int> labels, Images& grad) const override;

    /// Mean loss over the batch; gradients are added to `grads`.
    double loss_and_param_grads(const Images& x, std::span<const int> labels, Buffer<float>& grads) const;

    ConvNet<float>& net() { return net_; }
    const ConvNet<float>& net() const { return net_; }
    const ClassifierConfig& config() const { return net_.config(); }

private:
    static constexpr int kChunk = 128;
    ConvNet<float> net_;
};

ClassProbs softmax(const Logits& z);

/// Softmax probabilities; rejects channel mismatches.
std::vector<ClassProbs> predict(const BinaryClassifier& classifier, const Images& x);
std::vector<int> predicted_labels(const BinaryClassifier& classifier, const Images& x);
int argmax(const ClassProbs& p);
double accuracy(std::span<const ClassProbs> probs, std::span<const int> labels);

}  // namespace advdiff
