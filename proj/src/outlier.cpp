// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/outlier.hpp"

#include "qtune/error.hpp"
#include "qtune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace qtune {

std::size_t OutlierReport::total() const
{
    return std::accumulate(dim_counts.begin(), dim_counts.end(), std::size_t{0});
}

bool DimSelection::contains(std::size_t col) const
{
    return std::binary_search(dims.begin(), dims.end(), col);
}

OutlierReport detect_outliers(const Matrix& m, double k)
{
    if (!(k > 0.0) || !std::isfinite(k)) {
        throw Error("outlier threshold k must be positive");
    }
    const TensorStats s = stats(m);
    OutlierReport rep;
    rep.rows = m.rows();
    rep.cols = m.cols();
    rep.threshold_k = k;
    rep.mask.assign(m.size(), false);
    rep.dim_counts.assign(m.cols(), 0);
    const double sigma = s.stddev();
    if (sigma == 0.0) {
        return rep;
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double z = std::abs(static_cast<double>(m(r, c)) - s.mean) / sigma;
            if (z > k) {
                rep.mask[r * m.cols() + c] = true;
                ++rep.dim_counts[c];
            }
        }
    }
    return rep;
}

double k_from_density_threshold(double epsilon, double sigma)
{
    if (!(epsilon > 0.0) || !(sigma > 0.0)) {
        throw Error("density threshold and sigma must be positive");
    }
    const double peak = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
    if (epsilon >= peak) {
        throw Error("density threshold is at or above the Gaussian peak");
    }
    return std::sqrt(2.0 * std::log(peak / epsilon));
}

std::vector<std::size_t> rank_dimensions(const OutlierReport& rep)
{
    std::vector<std::size_t> order(rep.dim_counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rep.dim_counts[a] > rep.dim_counts[b]; });
    return order;
}

DimSelection select_trainable_dims(const OutlierReport& rep, std::size_t r)
{
    if (r < 1) {
        throw Error("r must be at least 1");
    }
    auto order = rank_dimensions(rep);
    order.resize(std::min(r, order.size()));
    std::sort(order.begin(), order.end());
    return {std::move(order), r, rep.rows, rep.cols};
}

DimSelection random_dims(std::size_t rows, std::size_t cols, std::size_t r, std::uint64_t seed)
{
    if (r < 1) {
        throw Error("r must be at least 1");
    }
    if (cols == 0) {
        throw Error("cols must be positive");
    }
    SplitMix64 rng(seed);
    std::vector<std::size_t> pool(cols);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const std::size_t k = std::min(r, cols);
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + rng.uniform_index(cols - i)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return {std::move(pool), r, rows, cols};
}

double trainable_ratio(std::size_t r, std::size_t hidden_dim)
{
    if (hidden_dim == 0) {
        throw Error("hidden dimension must be positive");
    }
    return 100.0 * static_cast<double>(r) / static_cast<double>(hidden_dim);
}

std::string format_ratio(double percent)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", percent);
    return buf;
}

std::uint64_t trainable_param_count(std::uint64_t total_params, std::size_t r, std::size_t hidden_dim)
{
    if (hidden_dim == 0) {
        throw Error("hidden dimension must be positive");
    }
    // Integer half-up rounding of total * r / hidden.
    const unsigned __int128 num = static_cast<unsigned __int128>(total_params) * r * 2 + hidden_dim;
    return static_cast<std::uint64_t>(num / (static_cast<unsigned __int128>(hidden_dim) * 2));
}

double jaccard(const DimSelection& a, const DimSelection& b)
{
    if (a.dims.empty() && b.dims.empty()) {
        throw Error("jaccard of two empty selections is undefined");
    }
    std::vector<std::size_t> inter;
    std::vector<std::size_t> uni;
    std::set_intersection(a.dims.begin(), a.dims.end(), b.dims.begin(), b.dims.end(), std::back_inserter(inter));
    std::set_union(a.dims.begin(), a.dims.end(), b.dims.begin(), b.dims.end(), std::back_inserter(uni));
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

} // namespace qtune
