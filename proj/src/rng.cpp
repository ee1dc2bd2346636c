// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/rng.hpp"

#include <cmath>
#include <numbers>

namespace qtune {

std::uint64_t SplitMix64::next() noexcept
{
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SplitMix64::uniform() noexcept
{
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::uint64_t SplitMix64::uniform_index(std::uint64_t n) noexcept
{
    if (n <= 1) {
        return 0;
    }
    // Largest multiple of n that fits; values above it are rejected.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v = next();
    while (v >= limit) {
        v = next();
    }
    return v % n;
}

double SplitMix64::normal() noexcept
{
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    // u1 in (0, 1] keeps log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    return radius * std::cos(angle);
}

std::uint64_t SplitMix64::derive(std::uint64_t seed, std::uint64_t stream) noexcept
{
    SplitMix64 g(seed ^ (stream * 0xD1B54A32D192ED03ULL));
    return g.next();
}

} // namespace qtune
