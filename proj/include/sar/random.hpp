#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace sar {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Independent generator for a named sub-stream of a run seed. All random
// decisions of a run derive from (seed, stream) pairs.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

std::vector<double> gaussian(Rng& rng, std::size_t n, double stddev = 1.0);

// Random permutation of 0..n-1.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace sar
