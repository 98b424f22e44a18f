#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "advdiff/defenses.hpp"
#include "advdiff/diffusion.hpp"
#include "advdiff/error.hpp"
#include "helpers.hpp"

using namespace advdiff;
using Catch::Matchers::WithinAbs;

namespace {

LabeledImages stripes(int n, std::uint64_t seed) {
    LabeledImages d{Images(n, 1, 8, 8), std::vector<int>(n)};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    for (int i = 0; i < n; ++i) {
        d.labels[i] = i % 2;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) d.images(i, 0, r, c) = u(rng) + ((c < 4) == (d.labels[i] == 0) ? 0.6 : 0.0);
    }
    return d;
}

ClassifierConfig tiny() {
    ClassifierConfig c;
    c.widths = {4, 6};
    c.image_size = 8;
    return c;
}

UNetConfig tiny_unet() {
    UNetConfig c;
    c.base_width = 8;
    return c;
}

void check_same_probs(const std::vector<ClassProbs>& a, const std::vector<ClassProbs>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

}  // namespace

TEST_CASE("defense kind names round trip") {
    for (auto k : {DefenseKind::none, DefenseKind::noise, DefenseKind::purify, DefenseKind::adv_trained})
        CHECK(parse_defense_kind(to_string(k)) == k);
    CHECK(to_string(DefenseKind::adv_trained) == "adv_trained");
    CHECK_THROWS_AS(parse_defense_kind("jpeg"), InvalidArgument);
}

TEST_CASE("defense spec validation") {
    CHECK_NOTHROW(DefenseSpec::noise(0.0, 1).validate());
    CHECK_NOTHROW(DefenseSpec::purify(1.0, 1).validate());
    CHECK_THROWS_AS(DefenseSpec::noise(-0.01, 1).validate(), InvalidArgument);
    CHECK_THROWS_AS(DefenseSpec::purify(1.5, 1).validate(), InvalidArgument);
    DefenseSpec bad = DefenseSpec::none();
    bad.t = 0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK_FALSE(DefenseSpec::adv_trained().uses_noise_level());
}

TEST_CASE("noise defense classifies the clamped forward-diffused image") {
    auto x = testutil::random_images(5, 1, 4, 4, 3);
    std::vector<double> w(16);
    for (int i = 0; i < 16; ++i) w[i] = std::sin(i + 1.0);
    testutil::LogisticStub model(w, -0.2);
    const auto sched = NoiseSchedule::linear();
    const double t = 0.1;
    const int k = fraction_to_step(t, sched);
    auto d = forward_diffuse(x, k, sched, 17);
    Images expect(x.shape());
    const double a = std::sqrt(sched.alpha_bar(k)), s = std::sqrt(1.0 - sched.alpha_bar(k));
    for (std::size_t i = 0; i < x.size(); ++i)
        expect.values()[i] = std::clamp(a * x.values()[i] + s * d.noise.values()[i], 0.0, 1.0);
    auto got = noise_defense_classify(model, x, t, sched, 17);
    auto want = predict(model, expect);
    for (std::size_t i = 0; i < got.size(); ++i)
        for (int c = 0; c < 2; ++c) CHECK_THAT(got[i][c], WithinAbs(want[i][c], 1e-12));
}

TEST_CASE("t = 0 makes noise and purify neutral") {
    auto x = testutil::random_images(6, 1, 8, 8, 4);
    ConvClassifier clf(tiny(), 2);
    EpsilonPredictor pred(tiny_unet(), 3);
    const auto sched = NoiseSchedule::linear();
    DefenseModels m{&clf, nullptr, &pred, &sched};
    const auto base = defended_classify(m, DefenseSpec::none(), x);
    check_same_probs(defended_classify(m, DefenseSpec::noise(0.0, 9), x), base);
    check_same_probs(defended_classify(m, DefenseSpec::purify(0.0, 9), x), base);
}

TEST_CASE("defended_classify dispatches and checks its models") {
    auto x = testutil::random_images(4, 1, 4, 4, 5);
    std::vector<int> labels{0, 1, 1, 0};
    testutil::LabelStub truth(labels, false), liar(labels, true);
    DefenseModels m{&truth, &liar, nullptr, nullptr};
    CHECK(accuracy(defended_classify(m, DefenseSpec::none(), x), labels) == 1.0);
    CHECK(accuracy(defended_classify(m, DefenseSpec::adv_trained(), x), labels) == 0.0);
    CHECK_THROWS_AS(defended_classify(m, DefenseSpec::noise(0.1, 1), x), InvalidArgument);
    CHECK_THROWS_AS(defended_classify(m, DefenseSpec::purify(0.1, 1), x), InvalidArgument);
    DefenseModels empty{};
    CHECK_THROWS_AS(defended_classify(empty, DefenseSpec::none(), x), InvalidArgument);
    DefenseModels no_robust{&truth, nullptr, nullptr, nullptr};
    CHECK_THROWS_AS(defended_classify(no_robust, DefenseSpec::adv_trained(), x), InvalidArgument);
}

TEST_CASE("noise defense is seed deterministic") {
    auto x = testutil::random_images(4, 1, 8, 8, 6);
    ConvClassifier clf(tiny(), 2);
    const auto sched = NoiseSchedule::linear();
    check_same_probs(noise_defense_classify(clf, x, 0.2, sched, 1), noise_defense_classify(clf, x, 0.2, sched, 1));
}

TEST_CASE("adversarial training at epsilon 0 is plain training") {
    const auto data = stripes(40, 8);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 10;
    cfg.seed = 6;
    cfg.model = tiny();
    auto plain = train_classifier(data, cfg);
    auto adv = adversarial_train(data, AttackConfig::with_epsilon(0.0, 1), cfg);
    CHECK(plain.classifier.net().params().values() == adv.classifier.net().params().values());
    CHECK(plain.loss_curve == adv.loss_curve);

    auto real = adversarial_train(data, AttackConfig::with_epsilon(0.1, 1), cfg);
    CHECK(real.classifier.net().params().values() != plain.classifier.net().params().values());
}

TEST_CASE("adversarial training validates the attack") {
    AttackConfig bad;
    bad.num_steps = 0;
    CHECK_THROWS_AS(adversarial_train(stripes(4, 1), bad, TrainConfig{}), InvalidArgument);
}

TEST_CASE("epsilon ramp starts from a clean epoch") {
    const auto data = stripes(40, 8);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.seed = 6;
    cfg.model = tiny();
    auto plain = train_classifier(data, cfg);
    cfg.epsilon_ramp_epochs = 2;
    auto ramped = adversarial_train(data, AttackConfig::with_epsilon(0.1, 1), cfg);
    CHECK(plain.classifier.net().params().values() == ramped.classifier.net().params().values());

    cfg.epochs = 2;
    cfg.epsilon_ramp_epochs = 1;
    auto two = adversarial_train(data, AttackConfig::with_epsilon(0.1, 1), cfg);
    CHECK(two.loss_curve[0] == plain.loss_curve[0]);

    cfg.epsilon_ramp_epochs = -1;
    CHECK_THROWS_AS(adversarial_train(data, AttackConfig::with_epsilon(0.1, 1), cfg), InvalidArgument);
}
