#include "advdiff/defenses.hpp"

#include <algorithm>

#include "advdiff/diffusion.hpp"
#include "advdiff/error.hpp"

namespace advdiff {

std::string_view to_string(DefenseKind kind) {
    switch (kind) {
        case DefenseKind::none: return "none";
        case DefenseKind::noise: return "noise";
        case DefenseKind::purify: return "purify";
        case DefenseKind::adv_trained: return "adv_trained";
    }
    return "unknown";
}

DefenseKind parse_defense_kind(std::string_view name) {
    for (auto k : {DefenseKind::none, DefenseKind::noise, DefenseKind::purify, DefenseKind::adv_trained})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown defense kind '" + std::string(name) + "'");
}

void DefenseSpec::validate() const {
    if (uses_noise_level() && !(t >= 0.0 && t <= 1.0)) throw InvalidArgument("defense t must lie in [0,1]");
    if (!uses_noise_level() && t != 0.0) throw InvalidArgument("defense t only applies to noise and purify");
}

std::vector<ClassProbs> noise_defense_classify(const BinaryClassifier& classifier, const Images& x, double t,
                                               const NoiseSchedule& schedule, std::uint64_t seed) {
    const int k = fraction_to_step(t, schedule);
    Images noisy = forward_diffuse(x, k, schedule, seed).noisy;
    for (double& v : noisy.values()) v = std::clamp(v, 0.0, 1.0);
    return predict(classifier, noisy);
}

std::vector<ClassProbs> purify_classify(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                                        const Images& x, double t, const NoiseSchedule& schedule,
                                        std::uint64_t seed) {
    return predict(classifier, purify(x, t, predictor, schedule, seed).images);
}

std::vector<ClassProbs> defended_classify(const DefenseModels& m, const DefenseSpec& spec, const Images& x) {
    spec.validate();
    if (!m.classifier) throw InvalidArgument("defended_classify: classifier required");
    switch (spec.kind) {
        case DefenseKind::none: return predict(*m.classifier, x);
        case DefenseKind::noise:
            if (!m.schedule) throw InvalidArgument("noise defense needs a schedule");
            return noise_defense_classify(*m.classifier, x, spec.t, *m.schedule, spec.seed);
        case DefenseKind::purify:
            if (!m.schedule || !m.predictor) throw InvalidArgument("purify defense needs a predictor and schedule");
            return purify_classify(*m.classifier, *m.predictor, x, spec.t, *m.schedule, spec.seed);
        case DefenseKind::adv_trained:
            if (!m.robust_classifier) throw InvalidArgument("adv_trained defense needs the robust classifier");
            return predict(*m.robust_classifier, x);
    }
    throw InvalidArgument("unhandled defense kind");
}

TrainResult adversarial_train(const LabeledImages& train, const AttackConfig& attack, TrainConfig config,
                              const LabeledImages* validation, bool verbose) {
    attack.validate();
    config.adversarial = attack;
    return train_classifier(train, config, validation, verbose);
}

}  // namespace advdiff
