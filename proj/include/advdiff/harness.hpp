#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdiff/attacks.hpp"
#include "advdiff/data.hpp"
#include "advdiff/defenses.hpp"

namespace advdiff {

/// Adversarial copy of a test set, crafted once against the undefended
/// classifier and shared by every defense in a run.
struct AttackedSet {
    Images adversarial;
    AttackConfig config;
    double boundary_fraction = 0.0;
    double linf = 0.0;
    /// FNV-1a of the adversarial pixels; equal across reports of one run.
    std::uint64_t hash = 0;
    double seconds = 0.0;
};

AttackedSet craft_attacks(const BinaryClassifier& undefended, const LabeledImages& test, const AttackConfig& config);
std::uint64_t images_hash(const Images& x);

struct EvalReport {
    std::string run_id;
    DefenseSpec defense;
    double epsilon = 0.0;
    int attack_steps = 0;
    std::uint64_t attack_seed = 0;
    int n = 0;
    double standard_accuracy = 0.0;
    double robust_accuracy = 0.0;
    std::array<int, 2> class_counts{};
    std::array<int, 2> standard_correct{};
    std::array<int, 2> robust_correct{};
    double boundary_fraction = 0.0;
    std::uint64_t adversarial_hash = 0;
    double seconds = 0.0;
};

/// Standard accuracy on the clean test set and robust accuracy on
/// `attacked.adversarial`, both through the defense.
EvalReport evaluate(const DefenseModels& models, const DefenseSpec& defense, const LabeledImages& test,
                    const AttackedSet& attacked, const std::string& run_id = "run");

/// Crafts the attack against `classifier` and evaluates one defense with it.
EvalReport evaluate(const DefenseModels& models, const DefenseSpec& defense, const LabeledImages& test,
                    const AttackConfig& attack, const std::string& run_id = "run");

struct SweepRow {
    double t = 0.0;
    int steps = 0;
    double robust_accuracy = 0.0;
    /// Empty when the sweep skipped the clean set.
    std::optional<double> standard_accuracy;
    double seconds = 0.0;
    std::uint64_t seed = 0;
};

struct SweepResult {
    std::string run_id;
    std::vector<SweepRow> rows;
    AttackConfig attack;
    int n = 0;
    double boundary_fraction = 0.0;
    std::uint64_t adversarial_hash = 0;
};

/// 10 roughly geometric points over [0.001, 0.300].
std::vector<double> default_sweep_grid();
/// `count` points geometrically spaced over [t_min, t_max].
std::vector<double> geometric_grid(double t_min, double t_max, int count);

/// One purify_classify measurement per t on the same adversarial inputs.
/// With include_clean the clean set is purified too (doubles the cost).
SweepResult noise_sweep(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                        const NoiseSchedule& schedule, const LabeledImages& test, std::span<const double> grid,
                        const AttackedSet& attacked, std::uint64_t seed, const std::string& run_id = "sweep",
                        bool include_clean = true);

/// Grid point with the highest robust accuracy; ties go to the smaller t.
double select_t_star(const SweepResult& sweep);

enum class Timing { record, omit };

/// Columns: run_id,defense_kind,t,epsilon,attack_steps,n,standard_acc,
/// robust_acc,boundary_fraction,seconds,seed. With Timing::omit the seconds
/// column holds "-" so reruns compare byte-for-byte.
inline constexpr const char* kCsvHeader =
    "run_id,defense_kind,t,epsilon,attack_steps,n,standard_acc,robust_acc,boundary_fraction,seconds,seed";

std::string reports_csv(std::span<const EvalReport> reports, Timing timing = Timing::record);
std::string sweep_csv(const SweepResult& sweep, Timing timing = Timing::record);
std::string reports_summary(std::span<const EvalReport> reports);
std::string sweep_summary(const SweepResult& sweep);

/// Writes <stem>.csv and <stem>.txt under `dir`.
void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& dir, const std::string& stem,
                 Timing timing = Timing::record);
void emit_report(const SweepResult& sweep, const std::filesystem::path& dir, const std::string& stem,
                 Timing timing = Timing::record);

void write_text_file(const std::filesystem::path& path, const std::string& text);

struct PipelineStages {
    Images clean;
    Images adversarial;
    /// Forward-diffused adversarial image (unclamped).
    Images noised;
    /// Reverse process applied to `noised`, clamped.
    Images purified;
    int steps = 0;
};

/// Single-example walk through attack -> noise -> purification.
PipelineStages compute_pipeline_stages(const BinaryClassifier& classifier, const EpsilonPredictor& predictor,
                                       const NoiseSchedule& schedule, const Images& x, int label,
                                       const AttackConfig& attack, double t, std::uint64_t seed);

/// Writes clean.pgm, adversarial.pgm, noised.pgm, purified.pgm, delta.pgm
/// (perturbation mapped from [-eps, eps] to [0, 1]) and pipeline.pgm (all
/// side by side) as 16-bit binary netpbm files. Returns the written paths.
std::vector<std::filesystem::path> dump_pipeline_images(const PipelineStages& stages, double epsilon,
                                                        const std::filesystem::path& dir);

/// 16-bit PGM (1 channel) or PPM (3 channels) of a single image; values are
/// clamped to [0,1].
void write_netpbm(const Images& image, const std::filesystem::path& path);
Images read_netpbm(const std::filesystem::path& path);

/// Reference numbers from the PCam/ResNet101 study, for report context only.
struct PublishedReference {
    const char* defense;
    double standard;  // negative when not reported
    double robust;
};
std::span<const PublishedReference> published_reference();

}  // namespace advdiff
