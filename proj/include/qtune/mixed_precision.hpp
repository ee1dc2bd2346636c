// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/pipeline.hpp"
#include "qtune/quantizer.hpp"

#include <string_view>
#include <vector>

namespace qtune {

/// Bit-width per layer, index 0 = bottom layer.
struct LayerPlan {
    std::vector<int> bits_per_layer;

    std::size_t size() const noexcept { return bits_per_layer.size(); }
    void validate() const;
    bool operator==(const LayerPlan&) const = default;
};

enum class PlanRegion { None, BottomThird, BottomTwoThirds, TopThird, TopTwoThirds };

std::string_view to_string(PlanRegion r);
PlanRegion parse_plan_region(std::string_view s);

/// Thirds split at floor(n/3) and floor(2n/3): the region gets low_bits, the
/// rest high_bits. Requires n_layers >= 3.
LayerPlan make_thirds_plan(std::size_t n_layers, PlanRegion region, int low_bits, int high_bits);

struct PlanEvaluation {
    std::vector<double> layer_errors;
    double total_error = 0.0; // root-sum-square of layer_errors
};

PlanEvaluation apply_plan(const std::vector<Matrix>& layers, const LayerPlan& plan, Strategy strategy,
                          Granularity granularity);

struct PlanRunResult {
    LayerPlan plan;
    double final_loss = 0.0;
    double quant_error = 0.0; // stage-1 RSS error of the plan
};

/// One outlier-dims pipeline run per plan, same seeds throughout.
std::vector<PlanRunResult> run_mixed_pipeline(const Teacher& teacher, const std::vector<LayerPlan>& plans,
                                              const PipelineConfig& cfg);

} // namespace qtune
