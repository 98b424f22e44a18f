#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advdiff/classifier.hpp"
#include "advdiff/schedule.hpp"
#include "advdiff/unet.hpp"

namespace advdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    friend bool operator==(const CheckpointArray&, const CheckpointArray&) = default;
};

/// Versioned parameter container.
///
/// Layout (little-endian), followed by a u64 FNV-1a checksum of all preceding
/// bytes:
///
///     "ADVDCKPT" u32 version
///     str kind
///     u32 n_meta   { str key, str value }        keys sorted
///     u32 n_arrays { str name, u32 ndim, u32 dims[ndim], u8 dtype(0=f32),
///                    u64 n_bytes, bytes }
///
/// where str is a u32 length followed by raw bytes. Reals in metadata are
/// written in shortest round-trip form, so save -> load -> save is
/// byte-identical.
struct Checkpoint {
    std::string kind;
    std::map<std::string, std::string> meta;
    std::vector<CheckpointArray> arrays;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CorruptFile, VersionMismatch or IoError.
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string format_real(double v);

using ExtraMeta = std::map<std::string, std::string>;

void save_classifier(const ConvClassifier& model, std::uint64_t train_seed, const std::filesystem::path& path,
                     const ExtraMeta& extra = {});

struct LoadedClassifier {
    ConvClassifier model;
    std::uint64_t train_seed = 0;
    ExtraMeta meta;
};
LoadedClassifier load_classifier(const std::filesystem::path& path);

void save_predictor(const EpsilonPredictor& model, const NoiseSchedule& schedule, std::uint64_t train_seed,
                    const std::filesystem::path& path, const ExtraMeta& extra = {});

struct LoadedPredictor {
    EpsilonPredictor model;
    NoiseSchedule schedule;
    std::uint64_t train_seed = 0;
    ExtraMeta meta;
};
/// With `expected` set, a checkpoint trained under a different schedule is
/// rejected with ShapeMismatch.
LoadedPredictor load_predictor(const std::filesystem::path& path, const NoiseSchedule* expected = nullptr);

}  // namespace advdiff
