// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace qtune {

/// Dense row-major matrix of finite 32-bit floats.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    /// Throws if data.size() != rows * cols or any value is NaN/Inf.
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

    std::span<const float> values() const noexcept { return data_; }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

struct TensorStats {
    double mean = 0.0;
    double variance = 0.0; // population variance
    double min = 0.0;
    double max = 0.0;
    std::size_t count = 0;

    double stddev() const;
};

TensorStats stats(std::span<const float> values);
TensorStats stats(const Matrix& m);

/// Euclidean norm of a - b, accumulated in double.
double l2_distance(const Matrix& a, const Matrix& b);
double l2_distance(std::span<const float> a, std::span<const float> b);

/// Seeded synthetic weights: N(mean, sigma^2) entries plus planted outliers at
/// mean +/- magnitude*sigma, concentrated in ceil(fraction * cols) columns.
struct OutlierMatrixSpec {
    std::size_t rows = 0;
    std::size_t cols = 0;
    double mean = 0.0;
    double sigma = 1.0;
    double outlier_fraction = 0.0;
    double outlier_magnitude = 10.0; // in units of sigma
    std::uint64_t seed = 42;
};

Matrix gen_gaussian_with_outliers(const OutlierMatrixSpec& spec);

/// Columns holding planted outliers for the given settings, ascending. Reproduces
/// the generator's column draw without generating the matrix.
std::vector<std::size_t> planted_outlier_columns(const OutlierMatrixSpec& spec);

} // namespace qtune
