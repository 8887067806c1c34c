#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "hafl/matrix.hpp"

namespace hafl {

using Rng = std::mt19937_64;

// Mixes a base seed with stream tags (round, client id, purpose) into an
// independent generator seed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

// Purpose tags for derive_seed streams.
namespace stream {
inline constexpr std::uint64_t kBase = 1;
inline constexpr std::uint64_t kResidual = 2;
inline constexpr std::uint64_t kFeatures = 3;
inline constexpr std::uint64_t kPartition = 4;
inline constexpr std::uint64_t kSampling = 5;
inline constexpr std::uint64_t kLocalTrain = 6;
inline constexpr std::uint64_t kAdapterInit = 7;
}  // namespace stream

}  // namespace hafl
