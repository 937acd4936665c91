#pragma once

#include <cstdint>
#include <random>

#include "moesumm/tensor.hpp"

namespace moesumm {

using Rng = std::mt19937_64;

inline constexpr double kInitStddev = 0.02;

/// Independent stream seed derived from a run seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Trainable tensor with entries ~ N(0, stddev^2).
Tensor normal_parameter(Shape shape, Rng& rng, double stddev = kInitStddev);
/// Trainable tensor filled with a constant.
Tensor constant_parameter(Shape shape, double value);

}  // namespace moesumm
