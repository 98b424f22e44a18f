#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advdiff/tensor.hpp"

namespace advdiff {

struct LabeledImages {
    Images images;
    std::vector<int> labels;

    int size() const { return images.n(); }
};

/// Parameters of the synthetic lesion dataset. A sample is labelled 1 iff at
/// least one lesion pixel falls inside the central window.
struct SyntheticSpec {
    int image_size = 32;
    int channels = 1;
    int center_size = 10;
    double radius_min = 1.0;
    double radius_max = 3.0;
    double amplitude_min = 0.35;
    double amplitude_max = 0.55;
    /// Std-dev of the Gaussian lesion profile as a fraction of the radius.
    double profile_width = 1.0;
    double background_mean = 0.45;
    double background_std = 0.08;
    /// Std-dev (pixels) of the Gaussian blur that correlates background noise.
    double background_smoothing = 1.5;
    /// Independent per-pixel noise added on top of the smooth texture.
    double pixel_noise_std = 0.04;
    /// Each image gets 0..max_distractors lesions entirely outside the window.
    int max_distractors = 2;
    int num_samples = 2400;
    std::uint64_t seed = 0;

    /// First and last pixel row/column of the central window.
    int window_begin() const { return (image_size - center_size) / 2; }
    int window_end() const { return window_begin() + center_size - 1; }

    void validate() const;
    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct Lesion {
    double cy = 0.0;
    double cx = 0.0;
    double radius = 0.0;
    double amplitude = 0.0;
};

struct Dataset : LabeledImages {
    SyntheticSpec spec;
    std::vector<std::vector<Lesion>> lesions;
};

/// Pixels (i, j) with (i-cy)^2 + (j-cx)^2 <= r^2 belong to the lesion.
bool lesion_touches_window(const Lesion& lesion, const SyntheticSpec& spec);
int label_from_geometry(std::span<const Lesion> lesions, const SyntheticSpec& spec);

/// Exactly half of the samples (even indices) are class 0.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
};

/// Seeded shuffle of [0, n) cut by fractions {train, val, test}. The test
/// split takes the remainder after rounding the first two.
DatasetSplit split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed);

LabeledImages subset(const LabeledImages& data, std::span<const std::size_t> indices);
LabeledImages head(const LabeledImages& data, int count);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

/// Binary dataset container (little-endian):
///   "ADVDDATA" u32 version
///   spec fields (i32 x5 as image_size, channels, center_size, max_distractors,
///   num_samples; f64 x9 radius/amplitude/profile/background/pixel noise; u64 seed)
///   i32 n, c, h, w; f64 pixels[n*c*h*w]; u8 labels[n]
///   per sample: u32 count, then (f64 cy, cx, radius, amplitude) per lesion
///   u64 FNV-1a checksum of everything before it
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace advdiff
