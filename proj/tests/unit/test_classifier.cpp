#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "advdiff/classifier.hpp"
#include "advdiff/error.hpp"
#include "advdiff/train.hpp"
#include "helpers.hpp"

using namespace advdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ClassifierConfig micro_config(bool spatial) {
    ClassifierConfig c;
    c.widths = {4, 6};
    c.image_size = 8;
    c.spatial_head = spatial;
    return c;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Bright 2x2 square on the left (class 0) or right (class 1) half.
LabeledImages two_blobs(int n, std::uint64_t seed) {
    LabeledImages d{Images(n, 1, 8, 8), std::vector<int>(n)};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(0.0, 0.2);
    std::uniform_int_distribution<int> row(0, 6), col(0, 2);
    for (int i = 0; i < n; ++i) {
        d.labels[i] = i % 2;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) d.images(i, 0, r, c) = noise(rng);
        const int r0 = row(rng), c0 = col(rng) + (d.labels[i] ? 4 : 0);
        for (int r = r0; r < r0 + 2; ++r)
            for (int c = c0; c < c0 + 2; ++c) d.images(i, 0, r, c) = 0.9;
    }
    return d;
}

}  // namespace

TEST_CASE("input gradient matches central finite differences", "[classifier]") {
    for (bool spatial : {true, false}) {
        const ConvNet<double> net(micro_config(spatial), 5);
        const auto x = testutil::random_images(3, 1, 8, 8, 21);
        const std::vector<int> labels{0, 1, 1};
        Tensor<double> g;
        net.backprop(x, labels, nullptr, &g);
        REQUIRE(g.shape() == x.shape());
        std::mt19937_64 rng(8);
        std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
        const double h = 1e-5;
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t i = pick(rng);
            auto xp = x, xm = x;
            xp.values()[i] += h;
            xm.values()[i] -= h;
            const double fd = (net.backprop(xp, labels, nullptr, nullptr) - net.backprop(xm, labels, nullptr, nullptr)) /
                              (2 * h);
            worst = std::max(worst, rel_error(g.values()[i], fd));
        }
        CHECK(worst <= 1e-3);
    }
}

TEST_CASE("parameter gradient matches central finite differences", "[classifier]") {
    ConvNet<double> net(micro_config(true), 6);
    const auto x = testutil::random_images(2, 1, 8, 8, 22);
    const std::vector<int> labels{1, 0};
    Buffer<double> grads(net.params().total(), 0.0);
    net.backprop(x, labels, &grads, nullptr);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < net.params().total(); i += 37) {
        const double orig = net.params().values()[i];
        net.params().values()[i] = orig + h;
        const double lp = net.backprop(x, labels, nullptr, nullptr);
        net.params().values()[i] = orig - h;
        const double lm = net.backprop(x, labels, nullptr, nullptr);
        net.params().values()[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        if (std::abs(fd) > 1e-7 || std::abs(grads[i]) > 1e-7) worst = std::max(worst, rel_error(grads[i], fd));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("zero weights give a zero input gradient", "[classifier]") {
    ConvNet<double> net(micro_config(true), 1);
    std::fill(net.params().values().begin(), net.params().values().end(), 0.0);
    const auto x = testutil::random_images(2, 1, 8, 8, 3);
    Tensor<double> g;
    const std::vector<int> labels{0, 1};
    const double loss = net.backprop(x, labels, nullptr, &g);
    CHECK_THAT(loss, WithinRel(2.0 * std::log(2.0), 1e-12));
    for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("summed loss is additive over duplicated examples", "[classifier]") {
    const ConvClassifier clf(micro_config(true), 4);
    const auto x = testutil::random_images(1, 1, 8, 8, 4);
    Images xx(2, 1, 8, 8);
    write_samples(xx, 0, x);
    write_samples(xx, 1, x);
    Images g1, g2;
    const std::vector<int> one{1}, two{1, 1};
    const double l1 = clf.loss_and_input_grad(x, one, g1);
    const double l2 = clf.loss_and_input_grad(xx, two, g2);
    CHECK_THAT(l2, WithinRel(2.0 * l1, 1e-6));
    CHECK(slice_samples(g2, 1, 1) == g1);
}

TEST_CASE("probabilities form a distribution", "[classifier]") {
    CHECK(softmax({3.0, 3.0}) == ClassProbs{0.5, 0.5});
    CHECK(argmax({0.5, 0.5}) == 0);
    CHECK(argmax({0.4, 0.6}) == 1);
    const auto big = softmax({1000.0, -1000.0});
    CHECK(std::isfinite(big[1]));
    CHECK(big[0] == 1.0);

    const ConvClassifier clf(ClassifierConfig{}, 2);
    const auto x = testutil::random_images(5, 1, 32, 32, 5);
    for (const auto& p : predict(clf, x)) {
        CHECK(p[0] >= 0.0);
        CHECK(p[1] >= 0.0);
        CHECK_THAT(p[0] + p[1], WithinAbs(1.0, 1e-6));
    }
    CHECK_THROWS_AS(predict(clf, testutil::random_images(1, 3, 32, 32, 1)), ShapeMismatch);
    CHECK_THROWS_AS(predict(clf, testutil::random_images(1, 1, 16, 16, 1)), ShapeMismatch);
}

TEST_CASE("batched inference does not depend on chunking", "[classifier]") {
    const ConvClassifier clf(micro_config(true), 3);
    const auto x = testutil::random_images(300, 1, 8, 8, 6);
    const auto all = clf.logits(x);
    for (int i : {0, 127, 128, 299}) CHECK(clf.logits(slice_samples(x, i, 1))[0] == all[i]);
    CHECK(clf.logits(x) == all);
}

TEST_CASE("default classifier is about 100k parameters", "[classifier]") {
    const ConvClassifier clf(ClassifierConfig{}, 1);
    const auto n = clf.net().params().total();
    CHECK(n > 80000);
    CHECK(n < 130000);
}

TEST_CASE("training separates two blobs and is deterministic", "[classifier][train]") {
    const auto data = two_blobs(200, 1);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 20;
    cfg.learning_rate = 3e-3;
    cfg.seed = 4;
    cfg.model = micro_config(true);
    const auto r = train_classifier(data, cfg);
    CHECK(accuracy(predict(r.classifier, data.images), data.labels) == 1.0);
    CHECK(r.loss_curve.size() == 20);
    CHECK(r.loss_curve.back() < r.loss_curve.front());

    const auto again = train_classifier(data, cfg);
    CHECK(again.classifier.net().params().values() == r.classifier.net().params().values());

    cfg.epochs = 0;
    const auto untrained = train_classifier(data, cfg);
    const ConvClassifier init(cfg.model, derive_seed(cfg.seed, "init"));
    CHECK(untrained.classifier.net().params().values() == init.net().params().values());
    CHECK(untrained.loss_curve.empty());

    CHECK_THROWS_AS(train_classifier(LabeledImages{Images(0, 1, 8, 8), {}}, cfg), InvalidArgument);
    auto bad = data;
    bad.labels[0] = 2;
    CHECK_THROWS_AS(train_classifier(bad, cfg), InvalidArgument);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train_classifier(data, cfg), InvalidArgument);
}

TEST_CASE("collapse detection needs three chance-level epochs in a row", "[train]") {
    CHECK_FALSE(detect_collapse({0.6, 0.7, 0.8}));
    CHECK(detect_collapse({0.6, 0.51, 0.49, 0.5}));
    CHECK_FALSE(detect_collapse({0.51, 0.49, 0.6, 0.5, 0.5}));
    CHECK_FALSE(detect_collapse({}));
    CHECK(detect_collapse({0.52, 0.48, 0.5}));
    CHECK_FALSE(detect_collapse({0.53, 0.5, 0.5}));
}
