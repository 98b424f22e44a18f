#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "advdiff/classifier.hpp"
#include "advdiff/data.hpp"
#include "advdiff/schedule.hpp"
#include "advdiff/train.hpp"
#include "advdiff/unet.hpp"

namespace advdiff {

enum class DefenseKind { none, noise, purify, adv_trained };

std::string_view to_string(DefenseKind kind);
DefenseKind parse_defense_kind(std::string_view name);

struct DefenseSpec {
    DefenseKind kind = DefenseKind::none;
    /// Noise fraction; meaningful only for noise and purify.
    double t = 0.0;
    std::uint64_t seed = 0;

    static DefenseSpec none() { return {}; }
    static DefenseSpec noise(double t, std::uint64_t seed) { return {DefenseKind::noise, t, seed}; }
    static DefenseSpec purify(double t, std::uint64_t seed) { return {DefenseKind::purify, t, seed}; }
    static DefenseSpec adv_trained() { return {DefenseKind::adv_trained, 0.0, 0}; }

    bool uses_noise_level() const { return kind == DefenseKind::noise || kind == DefenseKind::purify; }
    void validate() const;
};

/// Forward-diffuse to round(t*T), clamp to [0,1], classify.
std::vector<ClassProbs> noise_defense_classify(const BinaryClassifier& classifier, const Images& x, double t,
                                               const NoiseSchedule& schedule, std::uint64_t seed);

/// Classify purify(x, t).
std::vector<ClassProbs> purify_classify(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                                        const Images& x, double t, const NoiseSchedule& schedule,
                                        std::uint64_t seed);

/// Everything a defended pipeline may need. `robust_classifier` is used by
/// adv_trained; `predictor` by purify.
struct DefenseModels {
    const BinaryClassifier* classifier = nullptr;
    const BinaryClassifier* robust_classifier = nullptr;
    const EpsilonPredictor* predictor = nullptr;
    const NoiseSchedule* schedule = nullptr;
};

std::vector<ClassProbs> defended_classify(const DefenseModels& models, const DefenseSpec& spec, const Images& x);

/// Min-max training: each update first replaces the batch with PGD outputs
/// against the live weights. With epsilon == 0 this is exactly
/// train_classifier.
TrainResult adversarial_train(const LabeledImages& train, const AttackConfig& attack, TrainConfig config,
                              const LabeledImages* validation = nullptr, bool verbose = false);

}  // namespace advdiff
