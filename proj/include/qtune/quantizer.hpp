// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace qtune {

// Uniform asymmetric quantization onto the unsigned grid [0, 2^b - 1]:
//
//   code = clip(round(x * 2^b / alpha) + z, 0, 2^b - 1)
//   x^   = (code - z) * alpha / 2^b
//
// round() is nearest with ties away from zero everywhere in this library.

enum class Strategy { MinMax, OutlierAware, MSE };
enum class Granularity { PerTensor, PerRow };

std::string_view to_string(Strategy s);
std::string_view to_string(Granularity g);
Strategy parse_strategy(std::string_view s);
Granularity parse_granularity(std::string_view s);

struct QuantConfig {
    int bits = 4;
    Strategy strategy = Strategy::OutlierAware;
    Granularity granularity = Granularity::PerTensor;

    /// Throws unless bits is 2, 4 or 8.
    void validate() const;
};

/// Scaling factor and zero-point of one quantization group.
struct GroupParams {
    float alpha = 1.0f;
    std::uint32_t zero = 0;

    bool operator==(const GroupParams&) const = default;
};

struct QuantParams {
    std::vector<float> alphas;
    std::vector<std::uint16_t> zeros;

    std::size_t size() const noexcept { return alphas.size(); }
    GroupParams group(std::size_t g) const { return {alphas.at(g), zeros.at(g)}; }

    bool operator==(const QuantParams&) const = default;
};

/// Real interval that quantizes without clipping: width alpha, half a step
/// beyond the lowest and highest grid points.
struct QuantWindow {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

QuantWindow quantization_window(GroupParams p, int bits);

/// Nearest integer, ties away from zero. Exact for |v| < 2^52.
inline double round_half_away(double v) noexcept
{
    const double t = static_cast<double>(static_cast<std::int64_t>(v));
    const double d = v - t;
    if (d >= 0.5) {
        return t + 1.0;
    }
    if (d <= -0.5) {
        return t - 1.0;
    }
    return t;
}

std::uint8_t quantize_value(float x, GroupParams p, int bits) noexcept;
float dequantize_value(std::uint8_t code, GroupParams p, int bits) noexcept;

/// Degenerate parameters for a constant group: alpha = 1, z = 2^(b-1).
GroupParams degenerate_params(int bits);

GroupParams estimate_minmax(std::span<const float> values, int bits);
GroupParams estimate_outlier_aware(const TensorStats& s, int bits);
/// Search set of the MSE strategy, sorted by (alpha, z): the min-max window
/// scaled about the mean by 0.10, 0.11, ..., 1.20, plus the exact min-max and
/// outlier-aware parameters. A constant group yields only the degenerate pair.
std::vector<GroupParams> mse_candidates(std::span<const float> values, int bits);

/// Candidate with the lowest group_squared_error; ties go to the earlier one.
GroupParams estimate_mse(std::span<const float> values, int bits);

/// Dispatches on cfg.strategy for a single group.
GroupParams estimate_params(std::span<const float> values, const QuantConfig& cfg);

/// Sum of squared reconstruction errors of one group under p.
double group_squared_error(std::span<const float> values, GroupParams p, int bits) noexcept;

/// Packed low-bit tensor with one (alpha, z) per group.
class QuantizedTensor {
public:
    /// Validates shape, bit-width, group count, parameter ranges and packed length.
    QuantizedTensor(std::size_t rows, std::size_t cols, int bits, Granularity granularity, QuantParams params,
                    std::vector<std::uint8_t> packed);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }
    int bits() const noexcept { return bits_; }
    Granularity granularity() const noexcept { return granularity_; }
    const QuantParams& params() const noexcept { return params_; }
    const std::vector<std::uint8_t>& packed() const noexcept { return packed_; }

    std::size_t group_count() const noexcept { return params_.size(); }
    std::size_t group_of_row(std::size_t r) const noexcept { return granularity_ == Granularity::PerRow ? r : 0; }

    std::vector<std::uint8_t> codes() const;

    /// Same codes and zero-points with replaced scaling factors.
    QuantizedTensor with_alphas(std::vector<float> alphas) const;

    bool operator==(const QuantizedTensor&) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    int bits_;
    Granularity granularity_;
    QuantParams params_;
    std::vector<std::uint8_t> packed_;
};

std::size_t group_count_for(std::size_t rows, Granularity g);

QuantizedTensor quantize(const Matrix& m, const QuantConfig& cfg);

/// Quantizes with caller-supplied parameters (one entry per group).
QuantizedTensor quantize_with_params(const Matrix& m, int bits, Granularity g, const QuantParams& params);

Matrix dequantize(const QuantizedTensor& q);

/// L2 distance between m and its quantize/dequantize round trip.
double quant_error(const Matrix& m, const QuantConfig& cfg);

/// Per-column L2 reconstruction error (length m.cols()).
std::vector<double> quant_error_per_column(const Matrix& m, const QuantConfig& cfg);

} // namespace qtune
