#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "advdiff/attacks.hpp"
#include "advdiff/classifier.hpp"
#include "advdiff/data.hpp"

namespace advdiff {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
    ClassifierConfig model{};
    /// When set, every batch is replaced by a fresh PGD attack against the
    /// current weights before the update.
    std::optional<AttackConfig> adversarial;
    /// Training attacks grow linearly from 0 to the full epsilon (and step
    /// size) over this many epochs, so epoch 0 is clean. Validation always uses
    /// the full attack.
    int epsilon_ramp_epochs = 0;

    void validate() const;
};

struct TrainResult {
    ConvClassifier classifier;
    /// Mean training loss per epoch.
    std::vector<double> loss_curve;
    /// Per-epoch validation accuracy on clean inputs (empty without validation data).
    std::vector<double> val_standard_acc;
    /// Per-epoch validation accuracy under PGD against the current weights
    /// (adversarial runs only).
    std::vector<double> val_robust_acc;
    bool collapsed = false;
};

/// Collapse: validation standard accuracy within 0.02 of chance for 3
/// consecutive epochs.
bool detect_collapse(const std::vector<double>& val_standard_acc, double band = 0.02, int patience = 3);

/// Plain (or, with config.adversarial, min-max) training. Seed-deterministic.
/// Throws NonFiniteError on divergence.
TrainResult train_classifier(const LabeledImages& train, const TrainConfig& config,
                             const LabeledImages* validation = nullptr, bool verbose = false);

}  // namespace advdiff
