// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qtune {

/// Tail outliers of one matrix. Dimensions are columns (the hidden axis).
struct OutlierReport {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<bool> mask;            // row-major, true = outlier
    std::vector<std::size_t> dim_counts; // outliers per column
    double threshold_k = 3.0;

    std::size_t total() const;
};

/// Trainable column subset of a [rows x cols] matrix, stored ascending.
struct DimSelection {
    std::vector<std::size_t> dims;
    std::size_t r = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const noexcept { return dims.size(); }
    bool contains(std::size_t col) const;
    bool operator==(const DimSelection&) const = default;
};

constexpr double kDefaultOutlierK = 3.0;

/// w is an outlier iff |w - mu| > k * sigma. A constant matrix has none.
OutlierReport detect_outliers(const Matrix& m, double k = kDefaultOutlierK);

/// Density threshold -> z-score cutoff: the Gaussian pdf falls below epsilon
/// exactly when |w - mu| > k * sigma with k = sqrt(2 ln(1 / (epsilon sigma sqrt(2 pi)))).
double k_from_density_threshold(double epsilon, double sigma);

/// Columns by outlier count, descending; ties by ascending index.
std::vector<std::size_t> rank_dimensions(const OutlierReport& rep);

DimSelection select_trainable_dims(const OutlierReport& rep, std::size_t r);

/// Uniform sample of min(r, cols) distinct columns.
DimSelection random_dims(std::size_t rows, std::size_t cols, std::size_t r, std::uint64_t seed);

/// 100 * r / hidden_dim.
double trainable_ratio(std::size_t r, std::size_t hidden_dim);

/// Percentage with two decimals, e.g. "1.95".
std::string format_ratio(double percent);

/// round(total_params * r / hidden_dim), half up.
std::uint64_t trainable_param_count(std::uint64_t total_params, std::size_t r, std::size_t hidden_dim);

/// |a n b| / |a u b|. Two empty selections are an error.
double jaccard(const DimSelection& a, const DimSelection& b);

} // namespace qtune
