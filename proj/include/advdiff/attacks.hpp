#pragma once

#include <cstdint>
#include <span>

#include "advdiff/classifier.hpp"
#include "advdiff/tensor.hpp"

namespace advdiff {

struct AttackConfig {
    static constexpr double kDefaultEpsilon = 2.0 / 255.0;

    double epsilon = kDefaultEpsilon;
    int num_steps = 20;
    double step_size = kDefaultEpsilon / 4.0;
    bool random_start = true;
    std::uint64_t seed = 0;

    /// Conventional settings: 20 steps of size epsilon/4 from a random start.
    static AttackConfig with_epsilon(double epsilon, std::uint64_t seed = 0);

    /// epsilon in [0,1) (0 is accepted as the degenerate ball), step_size > 0
    /// (or 0 together with epsilon 0), num_steps >= 1.
    void validate() const;

    friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// Clamp x_adv element-wise into [x0 - eps, x0 + eps] intersected with [0, 1].
Images project_linf(const Images& x_adv, const Images& x0, double epsilon);

/// L-inf PGD: x <- project(x + step * sign(grad loss)) for num_steps steps,
/// optionally from a uniform random start inside the ball. sign(0) = 0.
Images pgd_attack(const BinaryClassifier& classifier, const Images& x, std::span<const int> labels,
                  const AttackConfig& config);

/// Fraction of coordinates with |delta| == eps (within 1e-9), ignoring
/// coordinates pinned at 0 or 1 by the pixel range before reaching the ball
/// perimeter.
double boundary_fraction(const Images& x_adv, const Images& x0, double epsilon);

/// max_i |x_adv_i - x0_i|
double linf_distance(const Images& x_adv, const Images& x0);

}  // namespace advdiff
