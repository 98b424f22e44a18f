#include "advdiff/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "advdiff/error.hpp"
#include "advdiff/rng.hpp"

namespace advdiff {

namespace {

constexpr double kBoundaryTol = 1e-9;

void check_same(const Images& a, const Images& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeMismatch(std::string(what) + ": " + to_string(a.shape()) + " vs " +
                                              to_string(b.shape()));
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

AttackConfig AttackConfig::with_epsilon(double epsilon, std::uint64_t seed) {
    return AttackConfig{epsilon, 20, epsilon / 4.0, true, seed};
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw InvalidArgument("attack epsilon must lie in [0,1)");
    if (num_steps < 1) throw InvalidArgument("attack num_steps must be >= 1");
    if (!(step_size > 0.0) && !(epsilon == 0.0 && step_size == 0.0))
        throw InvalidArgument("attack step_size must be > 0");
}

Images project_linf(const Images& x_adv, const Images& x0, double epsilon) {
    check_same(x_adv, x0, "project_linf");
    Images out(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double lo = std::max(x0.values()[i] - epsilon, 0.0);
        const double hi = std::min(x0.values()[i] + epsilon, 1.0);
        out.values()[i] = std::clamp(x_adv.values()[i], lo, hi);
    }
    return out;
}

Images pgd_attack(const BinaryClassifier& classifier, const Images& x, std::span<const int> labels,
                  const AttackConfig& config) {
    config.validate();
    if (labels.size() != static_cast<std::size_t>(x.n())) throw ShapeMismatch("pgd_attack: one label per example");
    // Every step projects onto the zero ball, which only depends on x.
    if (config.epsilon == 0.0) return project_linf(x, x, 0.0);
    Images adv = x;
    if (config.random_start) {
        std::uniform_real_distribution<double> u(-config.epsilon, config.epsilon);
        for (int i = 0; i < x.n(); ++i) {
            Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
            for (double& v : adv.sample(i)) v += u(rng);
        }
        adv = project_linf(adv, x, config.epsilon);
    }
    Images grad;
    for (int step = 0; step < config.num_steps; ++step) {
        try {
            classifier.loss_and_input_grad(adv, labels, grad);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("pgd step " + std::to_string(step) + ": " + e.what(), e.index());
        }
        for (std::size_t i = 0; i < adv.size(); ++i) adv.values()[i] += config.step_size * sign(grad.values()[i]);
        adv = project_linf(adv, x, config.epsilon);
    }
    return adv;
}

double boundary_fraction(const Images& x_adv, const Images& x0, double epsilon) {
    check_same(x_adv, x0, "boundary_fraction");
    std::size_t counted = 0, on_boundary = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double a = x_adv.values()[i], o = x0.values()[i];
        const double delta = std::abs(a - o);
        const bool on_perimeter = std::abs(delta - epsilon) <= kBoundaryTol;
        const bool pinned_low = a <= kBoundaryTol && o - epsilon < -kBoundaryTol;
        const bool pinned_high = a >= 1.0 - kBoundaryTol && o + epsilon > 1.0 + kBoundaryTol;
        if (!on_perimeter && (pinned_low || pinned_high)) continue;
        ++counted;
        on_boundary += on_perimeter;
    }
    return counted == 0 ? 0.0 : static_cast<double>(on_boundary) / counted;
}

double linf_distance(const Images& x_adv, const Images& x0) {
    check_same(x_adv, x0, "linf_distance");
    double m = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) m = std::max(m, std::abs(x_adv.values()[i] - x0.values()[i]));
    return m;
}

}  // namespace advdiff
