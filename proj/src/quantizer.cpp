// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/quantizer.hpp"

#include "qtune/error.hpp"
#include "qtune/packing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qtune {

namespace {

constexpr double kRoundLimit = 0x1.0p40; // scaled values are clamped before rounding

double grid_levels(int bits)
{
    return static_cast<double>(1U << bits);
}

std::uint32_t max_code(int bits)
{
    return (1U << bits) - 1U;
}

// z = clip(round(-lower * 2^b / alpha), 0, 2^b - 1)
std::uint32_t zero_point_for(double lower, float alpha, int bits)
{
    const double v = std::clamp(-lower * grid_levels(bits) / static_cast<double>(alpha), -kRoundLimit, kRoundLimit);
    const double z = std::clamp(round_half_away(v), 0.0, static_cast<double>(max_code(bits)));
    return static_cast<std::uint32_t>(z);
}

bool usable_alpha(float alpha)
{
    return alpha > 0.0f && std::isfinite(alpha);
}

} // namespace

std::string_view to_string(Strategy s)
{
    switch (s) {
    case Strategy::MinMax:
        return "minmax";
    case Strategy::OutlierAware:
        return "outlier";
    case Strategy::MSE:
        return "mse";
    }
    return "unknown";
}

std::string_view to_string(Granularity g)
{
    return g == Granularity::PerRow ? "row" : "tensor";
}

Strategy parse_strategy(std::string_view s)
{
    for (Strategy v : {Strategy::MinMax, Strategy::OutlierAware, Strategy::MSE}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw Error("unknown strategy '" + std::string(s) + "'");
}

Granularity parse_granularity(std::string_view s)
{
    for (Granularity v : {Granularity::PerTensor, Granularity::PerRow}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw Error("unknown granularity '" + std::string(s) + "'");
}

void QuantConfig::validate() const
{
    if (bits != 2 && bits != 4 && bits != 8) {
        throw Error("bits must be 2, 4 or 8, got " + std::to_string(bits));
    }
}

QuantWindow quantization_window(GroupParams p, int bits)
{
    const double step = static_cast<double>(p.alpha) / grid_levels(bits);
    const double z = p.zero;
    return {(-z - 0.5) * step, (grid_levels(bits) - 0.5 - z) * step};
}

std::uint8_t quantize_value(float x, GroupParams p, int bits) noexcept
{
    const double v =
        std::clamp(static_cast<double>(x) * grid_levels(bits) / static_cast<double>(p.alpha), -kRoundLimit, kRoundLimit);
    const double code = std::clamp(round_half_away(v) + static_cast<double>(p.zero), 0.0,
                                   static_cast<double>(max_code(bits)));
    return static_cast<std::uint8_t>(code);
}

float dequantize_value(std::uint8_t code, GroupParams p, int bits) noexcept
{
    const double centered = static_cast<double>(code) - static_cast<double>(p.zero);
    return static_cast<float>(centered * static_cast<double>(p.alpha) / grid_levels(bits));
}

GroupParams degenerate_params(int bits)
{
    return {1.0f, 1U << (bits - 1)};
}

GroupParams estimate_minmax(std::span<const float> values, int bits)
{
    const TensorStats s = stats(values);
    if (s.min == s.max) {
        return degenerate_params(bits);
    }
    // Correction (2^b)/(2^b - 1) puts min and max on the extreme grid points.
    const auto alpha = static_cast<float>((s.max - s.min) * grid_levels(bits) / (grid_levels(bits) - 1.0));
    if (!usable_alpha(alpha)) {
        if (alpha > 0.0f) {
            throw Error("value range too large to quantize");
        }
        return degenerate_params(bits);
    }
    return {alpha, zero_point_for(s.min, alpha, bits)};
}

GroupParams estimate_outlier_aware(const TensorStats& s, int bits)
{
    if (!(s.variance >= 0.0)) {
        throw Error("variance must be non-negative");
    }
    const double sigma = s.stddev();
    const auto alpha = static_cast<float>(6.0 * sigma);
    if (sigma == 0.0 || !usable_alpha(alpha)) {
        return degenerate_params(bits);
    }
    // Window [mu - 3 sigma, mu + 3 sigma].
    return {alpha, zero_point_for(s.mean - 3.0 * sigma, alpha, bits)};
}

double group_squared_error(std::span<const float> values, GroupParams p, int bits) noexcept
{
    // Same arithmetic as quantize_value/dequantize_value, without branches
    // (the rounding direction is unpredictable on real data). Dividing by 2^b
    // is an exact scaling, so multiplying by its reciprocal changes nothing.
    const double levels = grid_levels(bits);
    const double inv_levels = 1.0 / levels;
    const double alpha = p.alpha;
    const double z = p.zero;
    const double top = max_code(bits);
    double acc = 0.0;
    for (float x : values) {
        const double v = std::min(std::max(static_cast<double>(x) * levels / alpha, -kRoundLimit), kRoundLimit);
        const double t = static_cast<double>(static_cast<std::int64_t>(v));
        // 2 * (v - t) is exact and lies in (-2, 2); truncating it gives the
        // away-from-zero carry of round_half_away.
        const double r = t + static_cast<double>(static_cast<std::int64_t>(2.0 * (v - t)));
        const double code = std::min(std::max(r + z, 0.0), top);
        const auto xhat = static_cast<float>((code - z) * alpha * inv_levels);
        const double d = static_cast<double>(x) - static_cast<double>(xhat);
        acc += d * d;
    }
    return acc;
}

namespace {

// Sorted copy of a group with prefix sums. Codes are non-decreasing in x, so
// each code covers a contiguous run and a candidate's error needs one binary
// search per non-empty code instead of a pass over every value.
class SortedGroup {
public:
    explicit SortedGroup(std::span<const float> values) : xs_(values.begin(), values.end())
    {
        std::sort(xs_.begin(), xs_.end());
        s1_.assign(xs_.size() + 1, 0.0);
        s2_.assign(xs_.size() + 1, 0.0);
        double max_abs = 0.0;
        for (std::size_t i = 0; i < xs_.size(); ++i) {
            const double x = xs_[i];
            s1_[i + 1] = s1_[i] + x;
            s2_[i + 1] = s2_[i] + x * x;
            max_abs = std::max(max_abs, std::fabs(x));
        }
        // Every term below is bounded by s2 + n * max^2 in magnitude.
        scale_ = s2_.back() + static_cast<double>(xs_.size()) * max_abs * max_abs;
    }

    double squared_error(GroupParams p, int bits) const
    {
        const std::size_t n_values = xs_.size();
        const double step = static_cast<double>(p.alpha) / grid_levels(bits);
        double acc = 0.0;
        std::size_t lo = 0;
        while (lo < n_values) {
            const std::uint8_t code = quantize_value(xs_[lo], p, bits);
            std::size_t hi = n_values;
            if (code < max_code(bits)) {
                // Search near the analytic edge, then settle it with the exact mapping.
                const double edge = (static_cast<double>(code) - p.zero + 0.5) * step;
                hi = static_cast<std::size_t>(std::lower_bound(xs_.begin() + static_cast<std::ptrdiff_t>(lo),
                                                               xs_.end(), edge,
                                                               [](float x, double e) { return x < e; }) -
                                              xs_.begin());
                while (hi > lo && quantize_value(xs_[hi - 1], p, bits) > code) {
                    --hi;
                }
                while (hi < n_values && quantize_value(xs_[hi], p, bits) <= code) {
                    ++hi;
                }
            }
            const double xhat = dequantize_value(code, p, bits);
            const double n = static_cast<double>(hi - lo);
            acc += (s2_[hi] - s2_[lo]) - 2.0 * xhat * (s1_[hi] - s1_[lo]) + n * xhat * xhat;
            lo = hi;
        }
        return std::max(acc, 0.0);
    }

    double scale() const noexcept { return scale_; }

private:
    std::vector<float> xs_;
    std::vector<double> s1_;
    std::vector<double> s2_;
    double scale_ = 0.0;
};

} // namespace

std::vector<GroupParams> mse_candidates(std::span<const float> values, int bits)
{
    const TensorStats s = stats(values);
    if (s.min == s.max) {
        return {degenerate_params(bits)};
    }
    std::vector<GroupParams> candidates;
    candidates.reserve(113);
    const double full_alpha = (s.max - s.min) * grid_levels(bits) / (grid_levels(bits) - 1.0);
    for (int i = 0; i <= 110; ++i) {
        const double f = static_cast<double>(10 + i) / 100.0;
        const auto alpha = static_cast<float>(f * full_alpha);
        if (!usable_alpha(alpha)) {
            continue;
        }
        // Shrink [min, max] about the mean by f; its lower edge fixes z.
        const double lower = s.mean + f * (s.min - s.mean);
        candidates.push_back({alpha, zero_point_for(lower, alpha, bits)});
    }
    candidates.push_back(estimate_minmax(values, bits));
    candidates.push_back(estimate_outlier_aware(s, bits));

    std::stable_sort(candidates.begin(), candidates.end(), [](const GroupParams& a, const GroupParams& b) {
        return a.alpha < b.alpha || (a.alpha == b.alpha && a.zero < b.zero);
    });
    return candidates;
}

GroupParams estimate_mse(std::span<const float> values, int bits)
{
    const std::vector<GroupParams> candidates = mse_candidates(values, bits);
    if (candidates.size() == 1) {
        return candidates.front();
    }

    // Exact scoring; the first strictly lower error wins.
    const auto pick = [&](const std::vector<std::size_t>& which) {
        std::size_t best = which.front();
        double best_err = std::numeric_limits<double>::infinity();
        for (std::size_t i : which) {
            const double err = group_squared_error(values, candidates[i], bits);
            if (err < best_err) {
                best_err = err;
                best = i;
            }
        }
        return candidates[best];
    };

    const auto n = static_cast<double>(values.size());
    if (grid_levels(bits) * std::log2(n) >= n) {
        std::vector<std::size_t> all(candidates.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = i;
        }
        return pick(all);
    }

    // Large groups: screen with the sorted form, then rescore every candidate
    // within rounding distance of the best exactly, so the choice matches
    // exhaustive exact scoring.
    const SortedGroup sorted(values);
    std::vector<double> fast(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        fast[i] = sorted.squared_error(candidates[i], bits);
    }
    const double floor_err = *std::min_element(fast.begin(), fast.end());
    const double slack = 1e-9 * sorted.scale();
    std::vector<std::size_t> near;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (fast[i] <= floor_err + slack) {
            near.push_back(i);
        }
    }
    return pick(near);
}

GroupParams estimate_params(std::span<const float> values, const QuantConfig& cfg)
{
    switch (cfg.strategy) {
    case Strategy::MinMax:
        return estimate_minmax(values, cfg.bits);
    case Strategy::OutlierAware:
        return estimate_outlier_aware(stats(values), cfg.bits);
    case Strategy::MSE:
        return estimate_mse(values, cfg.bits);
    }
    throw Error("unknown strategy");
}

std::size_t group_count_for(std::size_t rows, Granularity g)
{
    return g == Granularity::PerRow ? rows : 1;
}

QuantizedTensor::QuantizedTensor(std::size_t rows, std::size_t cols, int bits, Granularity granularity,
                                 QuantParams params, std::vector<std::uint8_t> packed)
    : rows_(rows), cols_(cols), bits_(bits), granularity_(granularity), params_(std::move(params)),
      packed_(std::move(packed))
{
    QuantConfig{bits, Strategy::MinMax, granularity}.validate();
    if (rows_ == 0 || cols_ == 0) {
        throw Error("quantized tensor shape must be positive");
    }
    const std::size_t groups = group_count_for(rows_, granularity_);
    if (params_.alphas.size() != groups || params_.zeros.size() != groups) {
        throw Error("expected " + std::to_string(groups) + " quantization groups, got " +
                    std::to_string(params_.alphas.size()));
    }
    for (std::size_t g = 0; g < groups; ++g) {
        if (!usable_alpha(params_.alphas[g])) {
            throw Error("scaling factor must be positive and finite");
        }
        if (params_.zeros[g] > max_code(bits_)) {
            throw Error("zero-point " + std::to_string(params_.zeros[g]) + " out of range for " +
                        std::to_string(bits_) + " bits");
        }
    }
    if (packed_.size() != packed_size(size(), bits_)) {
        throw Error("packed code length mismatch");
    }
    if (!padding_is_clear(packed_, size(), bits_)) {
        throw Error("packed codes carry nonzero padding bits");
    }
}

std::vector<std::uint8_t> QuantizedTensor::codes() const
{
    return unpack_codes(packed_, size(), bits_);
}

QuantizedTensor QuantizedTensor::with_alphas(std::vector<float> alphas) const
{
    QuantParams p{std::move(alphas), params_.zeros};
    return QuantizedTensor(rows_, cols_, bits_, granularity_, std::move(p), packed_);
}

QuantizedTensor quantize_with_params(const Matrix& m, int bits, Granularity g, const QuantParams& params)
{
    if (m.empty()) {
        throw Error("empty input");
    }
    if (params.size() != group_count_for(m.rows(), g)) {
        throw Error("parameter group count does not match granularity");
    }
    std::vector<std::uint8_t> codes(m.size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const GroupParams p = params.group(g == Granularity::PerRow ? r : 0);
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            codes[r * m.cols() + c] = quantize_value(row[c], p, bits);
        }
    }
    return QuantizedTensor(m.rows(), m.cols(), bits, g, params, pack_codes(codes, bits));
}

QuantizedTensor quantize(const Matrix& m, const QuantConfig& cfg)
{
    cfg.validate();
    if (m.empty()) {
        throw Error("empty input");
    }
    QuantParams params;
    const auto add = [&](GroupParams p) {
        params.alphas.push_back(p.alpha);
        params.zeros.push_back(static_cast<std::uint16_t>(p.zero));
    };
    if (cfg.granularity == Granularity::PerRow) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            add(estimate_params(m.row(r), cfg));
        }
    } else {
        add(estimate_params(m.values(), cfg));
    }
    return quantize_with_params(m, cfg.bits, cfg.granularity, params);
}

Matrix dequantize(const QuantizedTensor& q)
{
    const auto codes = q.codes();
    std::vector<float> out(q.size());
    for (std::size_t r = 0; r < q.rows(); ++r) {
        const GroupParams p = q.params().group(q.group_of_row(r));
        for (std::size_t c = 0; c < q.cols(); ++c) {
            const std::size_t i = r * q.cols() + c;
            out[i] = dequantize_value(codes[i], p, q.bits());
        }
    }
    return Matrix(q.rows(), q.cols(), std::move(out));
}

double quant_error(const Matrix& m, const QuantConfig& cfg)
{
    return l2_distance(m, dequantize(quantize(m, cfg)));
}

std::vector<double> quant_error_per_column(const Matrix& m, const QuantConfig& cfg)
{
    const Matrix rec = dequantize(quantize(m, cfg));
    std::vector<double> acc(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double d = static_cast<double>(m(r, c)) - static_cast<double>(rec(r, c));
            acc[c] += d * d;
        }
    }
    for (double& v : acc) {
        v = std::sqrt(v);
    }
    return acc;
}

} // namespace qtune
