#include "advdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "advdiff/binary_io.hpp"
#include "advdiff/error.hpp"
#include "advdiff/rng.hpp"

namespace advdiff {

void SyntheticSpec::validate() const {
    if (image_size < 1 || channels < 1 || center_size < 1 || num_samples < 2)
        throw InvalidArgument("synthetic spec: sizes must be positive (num_samples >= 2)");
    if (center_size >= image_size) throw InvalidArgument("synthetic spec: center window must be smaller than image");
    if (num_samples % 2 != 0) throw InvalidArgument("synthetic spec: num_samples must be even for exact balance");
    if (!(radius_min > 0.0) || radius_max < radius_min) throw InvalidArgument("synthetic spec: bad lesion radius range");
    if (amplitude_min < 0.0 || amplitude_max < amplitude_min || !(profile_width > 0.0))
        throw InvalidArgument("synthetic spec: bad lesion amplitude or profile");
    if (background_std < 0.0 || background_smoothing < 0.0 || pixel_noise_std < 0.0 || max_distractors < 0)
        throw InvalidArgument("synthetic spec: bad background parameters");
    // A distractor centre must fit strictly between the image border and the
    // window with a full radius of clearance.
    if (static_cast<double>(window_begin()) <= radius_max)
        throw InvalidArgument("synthetic spec: lesion radius " + std::to_string(radius_max) +
                              " leaves no room for lesions outside the center window");
}

bool lesion_touches_window(const Lesion& l, const SyntheticSpec& spec) {
    const int lo = spec.window_begin(), hi = spec.window_end();
    const double r2 = l.radius * l.radius;
    for (int i = lo; i <= hi; ++i)
        for (int j = lo; j <= hi; ++j) {
            const double dy = i - l.cy, dx = j - l.cx;
            if (dy * dy + dx * dx <= r2) return true;
        }
    return false;
}

int label_from_geometry(std::span<const Lesion> lesions, const SyntheticSpec& spec) {
    return std::any_of(lesions.begin(), lesions.end(),
                       [&](const Lesion& l) { return lesion_touches_window(l, spec); })
               ? 1
               : 0;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    const double s = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= s;
    return k;
}

// Wrap-around separable blur so the texture statistics are position independent.
std::vector<double> correlated_noise(int size, double sigma, Rng& rng) {
    std::vector<double> field(static_cast<std::size_t>(size) * size);
    fill_normal(field, rng);
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(field.size(), 0.0);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            double acc = 0.0;
            for (int d = -r; d <= r; ++d) acc += k[d + r] * field[i * size + ((j + d) % size + size) % size];
            tmp[i * size + j] = acc;
        }
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            double acc = 0.0;
            for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp[(((i + d) % size + size) % size) * size + j];
            field[i * size + j] = acc;
        }
    const double mean = std::accumulate(field.begin(), field.end(), 0.0) / field.size();
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / field.size());
    for (double& v : field) v = sd > 0 ? (v - mean) / sd : 0.0;
    return field;
}

Lesion sample_lesion(const SyntheticSpec& spec, bool inside, Rng& rng) {
    std::uniform_real_distribution<double> radius(spec.radius_min, spec.radius_max);
    std::uniform_real_distribution<double> amp(spec.amplitude_min, spec.amplitude_max);
    Lesion l;
    l.radius = radius(rng);
    l.amplitude = amp(rng);
    if (inside) {
        // Centre inside the window: the nearest pixel is within sqrt(2)/2 <= r.
        std::uniform_real_distribution<double> pos(spec.window_begin() - 0.5, spec.window_end() + 0.5);
        do {
            l.cy = pos(rng);
            l.cx = pos(rng);
        } while (!lesion_touches_window(l, spec));
        return l;
    }
    std::uniform_real_distribution<double> pos(0.0, spec.image_size - 1.0);
    do {
        l.cy = pos(rng);
        l.cx = pos(rng);
    } while (lesion_touches_window(l, spec));
    return l;
}

void render_lesion(const Lesion& l, const SyntheticSpec& spec, std::span<double> plane) {
    const int n = spec.image_size;
    const double sigma = spec.profile_width * l.radius;
    const double r2 = l.radius * l.radius;
    const int i0 = std::max(0, static_cast<int>(std::floor(l.cy - l.radius)));
    const int i1 = std::min(n - 1, static_cast<int>(std::ceil(l.cy + l.radius)));
    const int j0 = std::max(0, static_cast<int>(std::floor(l.cx - l.radius)));
    const int j1 = std::min(n - 1, static_cast<int>(std::ceil(l.cx + l.radius)));
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) {
            const double d2 = (i - l.cy) * (i - l.cy) + (j - l.cx) * (j - l.cx);
            if (d2 <= r2) plane[i * n + j] += l.amplitude * std::exp(-0.5 * d2 / (sigma * sigma));
        }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Dataset d;
    d.spec = spec;
    const int n = spec.num_samples, size = spec.image_size;
    d.images = Images(n, spec.channels, size, size);
    d.labels.resize(n);
    d.lesions.resize(n);
    std::uniform_int_distribution<int> distractors(0, spec.max_distractors);
    for (int s = 0; s < n; ++s) {
        Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(s)));
        const int label = s % 2;
        auto& lesions = d.lesions[s];
        const int extra = distractors(rng);
        for (int i = 0; i < extra; ++i) lesions.push_back(sample_lesion(spec, false, rng));
        if (label == 1) lesions.push_back(sample_lesion(spec, true, rng));
        d.labels[s] = label;

        std::vector<double> plane = correlated_noise(size, spec.background_smoothing, rng);
        for (double& v : plane) v = spec.background_mean + spec.background_std * v;
        if (spec.pixel_noise_std > 0.0) {
            std::vector<double> white(plane.size());
            fill_normal(white, rng);
            for (std::size_t i = 0; i < plane.size(); ++i) plane[i] += spec.pixel_noise_std * white[i];
        }
        for (const auto& l : lesions) render_lesion(l, spec, plane);
        for (double& v : plane) v = std::clamp(v, 0.0, 1.0);
        auto dst = d.images.sample(s);
        for (int c = 0; c < spec.channels; ++c) std::copy(plane.begin(), plane.end(), dst.begin() + c * plane.size());
    }
    return d;
}

DatasetSplit split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions)
        if (!(f >= 0.0)) throw InvalidArgument("split fractions must be non-negative");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw InvalidArgument("split fractions must sum to 1");
    const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
    if (n_train + n_val >= n || n_train == 0 || n_val == 0)
        throw InvalidArgument("split of " + std::to_string(n) + " samples leaves an empty partition");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.test.assign(order.begin() + n_train + n_val, order.end());
    return split;
}

LabeledImages subset(const LabeledImages& data, std::span<const std::size_t> indices) {
    LabeledImages out{gather_samples(data.images, indices), {}};
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(data.labels.at(i));
    return out;
}

LabeledImages head(const LabeledImages& data, int count) {
    count = std::min(count, data.size());
    return {slice_samples(data.images, 0, count), {data.labels.begin(), data.labels.begin() + count}};
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    ByteWriter w;
    w.bytes("ADVDDATA", 8);
    w.u32(kDatasetFormatVersion);
    const auto& s = d.spec;
    for (int v : {s.image_size, s.channels, s.center_size, s.max_distractors, s.num_samples}) w.i32(v);
    for (double v : {s.radius_min, s.radius_max, s.amplitude_min, s.amplitude_max, s.profile_width,
                     s.background_mean, s.background_std, s.background_smoothing, s.pixel_noise_std})
        w.f64(v);
    w.u64(s.seed);
    const auto& sh = d.images.shape();
    for (int v : {sh.n, sh.c, sh.h, sh.w}) w.i32(v);
    for (double v : d.images.values()) w.f64(v);
    for (int l : d.labels) w.u8(static_cast<std::uint8_t>(l));
    for (int i = 0; i < sh.n; ++i) {
        const auto& ls = i < static_cast<int>(d.lesions.size()) ? d.lesions[i] : std::vector<Lesion>{};
        w.u32(static_cast<std::uint32_t>(ls.size()));
        for (const auto& l : ls)
            for (double v : {l.cy, l.cx, l.radius, l.amplitude}) w.f64(v);
    }
    w.finish_with_checksum();
    w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file_checked(path);
    r.expect_magic("ADVDDATA");
    const auto version = r.u32();
    if (version != kDatasetFormatVersion)
        throw VersionMismatch(path.string() + ": dataset version " + std::to_string(version) + ", expected " +
                              std::to_string(kDatasetFormatVersion));
    Dataset d;
    auto& s = d.spec;
    s.image_size = r.i32();
    s.channels = r.i32();
    s.center_size = r.i32();
    s.max_distractors = r.i32();
    s.num_samples = r.i32();
    s.radius_min = r.f64();
    s.radius_max = r.f64();
    s.amplitude_min = r.f64();
    s.amplitude_max = r.f64();
    s.profile_width = r.f64();
    s.background_mean = r.f64();
    s.background_std = r.f64();
    s.background_smoothing = r.f64();
    s.pixel_noise_std = r.f64();
    s.seed = r.u64();
    const int n = r.i32(), c = r.i32(), h = r.i32(), w = r.i32();
    if (n < 0 || c < 1 || h < 1 || w < 1 || static_cast<std::size_t>(n) * c * h * w * 8 > r.remaining())
        throw CorruptFile(path.string() + ": implausible image dimensions");
    d.images = Images(n, c, h, w);
    for (double& v : d.images.values()) v = r.f64();
    d.labels.resize(n);
    for (int& l : d.labels) {
        l = r.u8();
        if (l > 1) throw CorruptFile(path.string() + ": label out of range");
    }
    d.lesions.resize(n);
    for (auto& ls : d.lesions) {
        const auto count = r.u32();
        if (count > 1024) throw CorruptFile(path.string() + ": implausible lesion count");
        ls.resize(count);
        for (auto& l : ls) {
            l.cy = r.f64();
            l.cx = r.f64();
            l.radius = r.f64();
            l.amplitude = r.f64();
        }
    }
    r.expect_end();
    return d;
}

}  // namespace advdiff
