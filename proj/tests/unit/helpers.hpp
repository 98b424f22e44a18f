#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "advdiff/classifier.hpp"
#include "advdiff/tensor.hpp"

namespace testutil {

using advdiff::Images;
using advdiff::Logits;

inline Images random_images(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Images x(n, c, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : x.values()) v = u(rng);
    return x;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("advdiff_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Logit of class 1 is w.x + b, class 0 is 0. Gradients are analytic, which
/// makes it an oracle for anything built on loss_and_input_grad.
class LogisticStub : public advdiff::BinaryClassifier {
public:
    LogisticStub(std::vector<double> w, double b) : w_(std::move(w)), b_(b) {}

    std::vector<Logits> logits(const Images& x) const override {
        std::vector<Logits> out(x.n());
        for (int i = 0; i < x.n(); ++i) out[i] = {0.0, score(x, i)};
        return out;
    }
    double loss_and_input_grad(const Images& x, std::span<const int> labels, Images& grad) const override {
        grad = Images(x.shape());
        double loss = 0.0;
        for (int i = 0; i < x.n(); ++i) {
            const double z = score(x, i);
            const double p1 = 1.0 / (1.0 + std::exp(-z));
            loss += labels[i] == 1 ? std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            const double dz = p1 - labels[i];
            auto g = grad.sample(i);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = dz * w_[j];
        }
        return loss;
    }

private:
    double score(const Images& x, int i) const {
        auto s = x.sample(i);
        double z = b_;
        for (std::size_t j = 0; j < s.size(); ++j) z += w_[j] * s[j];
        return z;
    }
    std::vector<double> w_;
    double b_;
};

/// Predicts a fixed label set: the truth (oracle) or its complement.
class LabelStub : public advdiff::BinaryClassifier {
public:
    LabelStub(std::vector<int> labels, bool invert) : labels_(std::move(labels)), invert_(invert) {}
    std::vector<Logits> logits(const Images& x) const override {
        std::vector<Logits> out(x.n());
        for (int i = 0; i < x.n(); ++i) {
            const int y = invert_ ? 1 - labels_[i] : labels_[i];
            out[i] = y == 1 ? Logits{0.0, 5.0} : Logits{5.0, 0.0};
        }
        return out;
    }
    double loss_and_input_grad(const Images& x, std::span<const int>, Images& grad) const override {
        grad = Images(x.shape());
        return 0.0;
    }

private:
    std::vector<int> labels_;
    bool invert_;
};

/// Zero logits and zero gradient everywhere.
class ConstantStub : public advdiff::BinaryClassifier {
public:
    std::vector<Logits> logits(const Images& x) const override { return std::vector<Logits>(x.n(), Logits{0, 0}); }
    double loss_and_input_grad(const Images& x, std::span<const int> labels, Images& grad) const override {
        grad = Images(x.shape());
        return static_cast<double>(labels.size()) * std::log(2.0);
    }
};

}  // namespace testutil
