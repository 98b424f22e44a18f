#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace advdiff {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for a named component, e.g. derive_seed(master, "attack").
std::uint64_t derive_seed(std::uint64_t master, std::string_view component);
/// Child seed for an indexed stream (batch, example, epoch...).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

void fill_normal(std::span<double> out, Rng& rng);

/// One independent generator per example, seeded from (seed, first + i).
/// Keeps results independent of how a batch is chunked.
class NoiseStreams {
public:
    NoiseStreams(std::uint64_t seed, std::size_t first, std::size_t count);

    std::size_t size() const { return streams_.size(); }
    Rng& operator[](std::size_t i) { return streams_[i]; }

private:
    std::vector<Rng> streams_;
};

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace advdiff
