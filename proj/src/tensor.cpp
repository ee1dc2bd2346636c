// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/tensor.hpp"

#include "qtune/error.hpp"
#include "qtune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace qtune {

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows * cols) {
        throw Error("matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                    std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw Error("matrix values must be finite");
        }
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw Error("ragged rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

double TensorStats::stddev() const
{
    return std::sqrt(variance);
}

TensorStats stats(std::span<const float> values)
{
    if (values.empty()) {
        throw Error("empty input");
    }
    TensorStats s;
    s.count = values.size();
    s.min = values[0];
    s.max = values[0];
    double sum = 0.0;
    for (float v : values) {
        sum += v;
        s.min = std::min(s.min, static_cast<double>(v));
        s.max = std::max(s.max, static_cast<double>(v));
    }
    s.mean = std::clamp(sum / static_cast<double>(s.count), s.min, s.max);
    // Two-pass variance around the double mean.
    double sq = 0.0;
    for (float v : values) {
        const double d = v - s.mean;
        sq += d * d;
    }
    s.variance = s.min == s.max ? 0.0 : sq / static_cast<double>(s.count);
    return s;
}

TensorStats stats(const Matrix& m)
{
    return stats(m.values());
}

double l2_distance(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size()) {
        throw Error("shape mismatch in l2_distance");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

double l2_distance(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error("shape mismatch in l2_distance");
    }
    return l2_distance(a.values(), b.values());
}

namespace {

void validate(const OutlierMatrixSpec& spec)
{
    if (spec.rows == 0 || spec.cols == 0) {
        throw Error("generator shape must be positive");
    }
    if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma) || !std::isfinite(spec.mean)) {
        throw Error("generator sigma must be positive and finite");
    }
    if (!(spec.outlier_fraction >= 0.0 && spec.outlier_fraction < 1.0)) {
        throw Error("outlier fraction must lie in [0, 1)");
    }
    if (!(spec.outlier_magnitude >= 0.0) || !std::isfinite(spec.outlier_magnitude)) {
        throw Error("outlier magnitude must be non-negative and finite");
    }
}

// First k entries of a seeded Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> sample_without_replacement(SplitMix64& rng, std::size_t n, std::size_t k)
{
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::size_t outlier_column_count(const OutlierMatrixSpec& spec)
{
    if (spec.outlier_fraction == 0.0) {
        return 0;
    }
    const auto c = static_cast<std::size_t>(std::ceil(spec.outlier_fraction * static_cast<double>(spec.cols)));
    return std::clamp<std::size_t>(c, 1, spec.cols);
}

} // namespace

std::vector<std::size_t> planted_outlier_columns(const OutlierMatrixSpec& spec)
{
    validate(spec);
    SplitMix64 rng(SplitMix64::derive(spec.seed, 1));
    auto cols = sample_without_replacement(rng, spec.cols, outlier_column_count(spec));
    std::sort(cols.begin(), cols.end());
    return cols;
}

Matrix gen_gaussian_with_outliers(const OutlierMatrixSpec& spec)
{
    validate(spec);
    const std::size_t n = spec.rows * spec.cols;
    std::vector<float> data(n);
    SplitMix64 gauss(spec.seed);
    for (auto& v : data) {
        v = static_cast<float>(spec.mean + spec.sigma * gauss.normal());
    }

    const std::size_t n_cols = outlier_column_count(spec);
    if (n_cols > 0) {
        // Column draw and cell draw share one stream, separate from the Gaussian stream.
        SplitMix64 rng(SplitMix64::derive(spec.seed, 1));
        const auto columns = sample_without_replacement(rng, spec.cols, n_cols);
        auto n_out = static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(n)));
        n_out = std::clamp<std::size_t>(n_out, 1, n_cols * spec.rows);
        const auto cells = sample_without_replacement(rng, n_cols * spec.rows, n_out);
        const double offset = spec.outlier_magnitude * spec.sigma;
        for (std::size_t cell : cells) {
            const std::size_t col = columns[cell / spec.rows];
            const std::size_t row = cell % spec.rows;
            const double sign = (rng.next() & 1U) ? 1.0 : -1.0;
            data[row * spec.cols + col] = static_cast<float>(spec.mean + sign * offset);
        }
    }
    return Matrix(spec.rows, spec.cols, std::move(data));
}

} // namespace qtune
