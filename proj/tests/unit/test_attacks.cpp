#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "advdiff/attacks.hpp"
#include "advdiff/error.hpp"
#include "advdiff/harness.hpp"
#include "helpers.hpp"

using namespace advdiff;
using Catch::Matchers::WithinAbs;

namespace {

// Weights with a mix of signs and exact zeros.
std::vector<double> mixed_weights(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = (i % 3 == 0) ? 0.0 : ((i % 3 == 1) ? 1.5 : -0.7);
    return w;
}

// For a linear logit the loss-maximising point of the box is a corner:
// move every coordinate by eps against (label 1) or along (label 0) sign(w).
Images linear_optimum(const Images& x, const std::vector<int>& labels, const std::vector<double>& w, double eps) {
    Images out = x;
    for (int i = 0; i < x.n(); ++i) {
        auto s = out.sample(i);
        const double dir = labels[i] == 1 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            const double sg = w[j] > 0 ? 1.0 : (w[j] < 0 ? -1.0 : 0.0);
            s[j] = std::clamp(s[j] + dir * sg * eps, 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("with_epsilon uses 20 steps of eps/4") {
    auto c = AttackConfig::with_epsilon(8.0 / 255, 3);
    CHECK(c.num_steps == 20);
    CHECK(c.step_size == 2.0 / 255);
    CHECK(c.random_start);
    CHECK(c.seed == 3u);
    CHECK(AttackConfig{}.epsilon == 2.0 / 255);
}

TEST_CASE("attack config validation") {
    AttackConfig c;
    CHECK_NOTHROW(c.validate());
    c.epsilon = 0.0;
    CHECK_NOTHROW(c.validate());
    c.epsilon = -0.1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c.epsilon = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = AttackConfig{};
    c.num_steps = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = AttackConfig{};
    c.step_size = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("project_linf clamps to the ball and the pixel range") {
    Images x0(1, 1, 1, 4), adv(1, 1, 1, 4);
    x0.values() = {0.5, 0.01, 0.99, 0.5};
    adv.values() = {0.9, -0.5, 1.5, 0.52};
    auto p = project_linf(adv, x0, 0.05);
    CHECK_THAT(p.values()[0], WithinAbs(0.55, 1e-15));
    CHECK(p.values()[1] == 0.0);
    CHECK(p.values()[2] == 1.0);
    CHECK(p.values()[3] == 0.52);
    CHECK_THROWS_AS(project_linf(Images(1, 1, 1, 3), x0, 0.1), ShapeMismatch);
}

TEST_CASE("pgd on a linear model reaches the analytic corner") {
    auto x = testutil::random_images(6, 1, 4, 4, 11, 0.1, 0.9);
    const auto w = mixed_weights(16);
    testutil::LogisticStub model(w, 0.0);
    std::vector<int> labels{0, 1, 0, 1, 1, 0};
    const double eps = 8.0 / 255;
    for (bool rs : {false, true}) {
        AttackConfig c = AttackConfig::with_epsilon(eps, 5);
        c.random_start = rs;
        auto adv = pgd_attack(model, x, labels, c);
        auto expect = linear_optimum(x, labels, w, eps);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (w[i % 16] == 0.0 && !rs) CHECK(adv.values()[i] == x.values()[i]);
            if (w[i % 16] != 0.0) CHECK_THAT(adv.values()[i], WithinAbs(expect.values()[i], 1e-12));
        }
        CHECK(linf_distance(adv, x) <= eps + 1e-12);
    }
}

TEST_CASE("pgd stays inside the ball and the pixel range") {
    auto x = testutil::random_images(8, 1, 4, 4, 12);
    testutil::LogisticStub model(std::vector<double>(16, 2.0), -16.0);
    std::vector<int> labels(8, 1);
    AttackConfig c = AttackConfig::with_epsilon(0.1, 2);
    c.num_steps = 7;
    c.step_size = 0.07;
    auto adv = pgd_attack(model, x, labels, c);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(adv.values()[i] >= 0.0);
        CHECK(adv.values()[i] <= 1.0);
        CHECK(std::abs(adv.values()[i] - x.values()[i]) <= 0.1 + 1e-12);
    }
}

TEST_CASE("sign(0) leaves zero-gradient coordinates in place") {
    auto x = testutil::random_images(3, 1, 2, 2, 13);
    testutil::ConstantStub model;
    AttackConfig c = AttackConfig::with_epsilon(0.1, 1);
    c.random_start = false;
    auto adv = pgd_attack(model, x, std::vector<int>{0, 1, 0}, c);
    CHECK(adv.values() == x.values());
}

TEST_CASE("epsilon zero is the identity, random start or not") {
    auto x = testutil::random_images(4, 1, 4, 4, 14);
    testutil::LogisticStub model(mixed_weights(16), 0.1);
    AttackConfig c = AttackConfig::with_epsilon(0.0, 9);
    c.step_size = 0.01;
    auto adv = pgd_attack(model, x, std::vector<int>{0, 1, 1, 0}, c);
    CHECK(adv.values() == x.values());
}

TEST_CASE("pgd is seed deterministic and the seed matters with random start") {
    auto x = testutil::random_images(4, 1, 4, 4, 15);
    testutil::ConstantStub model;
    std::vector<int> labels{0, 1, 0, 1};
    auto c = AttackConfig::with_epsilon(0.05, 21);
    auto a = pgd_attack(model, x, labels, c);
    auto b = pgd_attack(model, x, labels, c);
    CHECK(a.values() == b.values());
    c.seed = 22;
    auto d = pgd_attack(model, x, labels, c);
    CHECK(a.values() != d.values());
}

TEST_CASE("pgd rejects a label count mismatch") {
    testutil::ConstantStub model;
    CHECK_THROWS_AS(pgd_attack(model, Images(2, 1, 2, 2), std::vector<int>{0}, AttackConfig{}), ShapeMismatch);
}

TEST_CASE("boundary fraction and linf distance") {
    Images x0(1, 1, 1, 4), adv(1, 1, 1, 4);
    x0.values() = {0.5, 0.5, 0.0, 0.5};
    adv.values() = {0.6, 0.45, 0.0, 0.4};
    // Coordinate 2 is pinned at 0 and cannot reach the lower face; it is
    // ignored, leaving 2 of 3 on the perimeter.
    CHECK_THAT(boundary_fraction(adv, x0, 0.1), WithinAbs(2.0 / 3.0, 1e-12));
    CHECK_THAT(linf_distance(adv, x0), WithinAbs(0.1, 1e-12));
    CHECK(linf_distance(x0, x0) == 0.0);
}

TEST_CASE("craft_attacks records the set it produced") {
    auto x = testutil::random_images(5, 1, 4, 4, 16, 0.2, 0.8);
    LabeledImages test{x, {0, 1, 0, 1, 0}};
    testutil::LogisticStub model(mixed_weights(16), 0.0);
    auto c = AttackConfig::with_epsilon(0.03, 4);
    auto set = craft_attacks(model, test, c);
    CHECK(set.config == c);
    CHECK(set.adversarial.values() == pgd_attack(model, x, test.labels, c).values());
    CHECK(set.hash == images_hash(set.adversarial));
    CHECK_THAT(set.linf, WithinAbs(linf_distance(set.adversarial, x), 0));
    CHECK_THAT(set.boundary_fraction, WithinAbs(boundary_fraction(set.adversarial, x, 0.03), 0));
}
