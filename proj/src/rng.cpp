#include "advdiff/rng.hpp"

namespace advdiff {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view component) {
    auto bytes = std::span(reinterpret_cast<const unsigned char*>(component.data()), component.size());
    return splitmix64(splitmix64(master) ^ fnv1a64(bytes));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) + splitmix64(index ^ 0x5851f42d4c957f2dULL));
}

void fill_normal(std::span<double> out, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : out) v = dist(rng);
}

NoiseStreams::NoiseStreams(std::uint64_t seed, std::size_t first, std::size_t count) {
    streams_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) streams_.emplace_back(derive_seed(seed, first + i));
}

}  // namespace advdiff
