// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>

namespace qtune {

/// SplitMix64 generator. State transition:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// All arithmetic is modulo 2^64. Every seeded routine in the library draws
/// from this generator only, so seeds reproduce across platforms and ports.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept;

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform() noexcept;

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept;

    /// Stream derived from this seed for an independent purpose (e.g. per-layer init).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) noexcept;

private:
    std::uint64_t state_;
    std::optional<double> spare_;
};

} // namespace qtune
