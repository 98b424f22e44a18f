#include "advdiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "advdiff/error.hpp"
#include "advdiff/rng.hpp"

namespace advdiff {

void TrainConfig::validate() const {
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0))
        throw InvalidArgument("train config: epochs >= 0, batch_size >= 1 and learning_rate > 0 required");
    if (adversarial) adversarial->validate();
    if (epsilon_ramp_epochs < 0) throw InvalidArgument("train config: epsilon_ramp_epochs >= 0 required");
}

bool detect_collapse(const std::vector<double>& acc, double band, int patience) {
    int run = 0;
    for (double a : acc) {
        run = std::abs(a - 0.5) <= band + 1e-12 ? run + 1 : 0;
        if (run >= patience) return true;
    }
    return false;
}

TrainResult train_classifier(const LabeledImages& train, const TrainConfig& config, const LabeledImages* validation,
                             bool verbose) {
    config.validate();
    if (train.size() == 0) throw InvalidArgument("train_classifier: empty dataset");
    for (int y : train.labels)
        if (y != 0 && y != 1) throw InvalidArgument("train_classifier: labels must be 0 or 1");

    TrainResult result{ConvClassifier(config.model, derive_seed(config.seed, "init")), {}, {}, {}, false};
    auto& model = result.classifier;
    nn::Adam<float> adam(model.net().params().total(), nn::AdamConfig{config.learning_rate});
    Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
    const std::uint64_t attack_seed = derive_seed(config.seed, "adversarial");
    std::vector<std::size_t> order(train.size());
    Buffer<float> grads;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double total = 0.0;
        int batches = 0;
        const double ramp =
            epoch < config.epsilon_ramp_epochs ? static_cast<double>(epoch) / config.epsilon_ramp_epochs : 1.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - begin);
            LabeledImages batch = subset(train, std::span(order).subspan(begin, count));
            if (config.adversarial) {
                AttackConfig ac = *config.adversarial;
                ac.seed = derive_seed(attack_seed, static_cast<std::uint64_t>(epoch) * 1000003ULL + batches);
                ac.epsilon *= ramp;
                ac.step_size *= ramp;
                batch.images = pgd_attack(model, batch.images, batch.labels, ac);
            }
            grads.assign(model.net().params().total(), 0.0f);
            const double loss = model.loss_and_param_grads(batch.images, batch.labels, grads);
            if (!std::isfinite(loss) || !nn::all_finite(grads))
                throw NonFiniteError("classifier training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batches),
                                     batches);
            adam.step(model.net().params().values(), grads);
            total += loss;
            ++batches;
        }
        result.loss_curve.push_back(total / batches);
        if (validation && validation->size() > 0) {
            result.val_standard_acc.push_back(accuracy(predict(model, validation->images), validation->labels));
            if (config.adversarial) {
                AttackConfig ac = *config.adversarial;
                ac.seed = derive_seed(attack_seed, "validation");
                Images adv = pgd_attack(model, validation->images, validation->labels, ac);
                result.val_robust_acc.push_back(accuracy(predict(model, adv), validation->labels));
            }
        }
        if (verbose) {
            std::fprintf(stderr, "[classifier] epoch %d loss %.4f", epoch + 1, result.loss_curve.back());
            if (!result.val_standard_acc.empty()) std::fprintf(stderr, " val %.3f", result.val_standard_acc.back());
            if (!result.val_robust_acc.empty()) std::fprintf(stderr, " val_adv %.3f", result.val_robust_acc.back());
            std::fprintf(stderr, "\n");
        }
    }
    result.collapsed = detect_collapse(result.val_standard_acc);
    return result;
}

}  // namespace advdiff
