// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/mixed_precision.hpp"

#include "qtune/error.hpp"

#include <cmath>
#include <string>

namespace qtune {

void LayerPlan::validate() const
{
    if (bits_per_layer.empty()) {
        throw Error("layer plan is empty");
    }
    for (int b : bits_per_layer) {
        QuantConfig{b, Strategy::MinMax, Granularity::PerTensor}.validate();
    }
}

std::string_view to_string(PlanRegion r)
{
    switch (r) {
    case PlanRegion::None:
        return "none";
    case PlanRegion::BottomThird:
        return "bottom-third";
    case PlanRegion::BottomTwoThirds:
        return "bottom-two-thirds";
    case PlanRegion::TopThird:
        return "top-third";
    case PlanRegion::TopTwoThirds:
        return "top-two-thirds";
    }
    return "unknown";
}

PlanRegion parse_plan_region(std::string_view s)
{
    for (PlanRegion r : {PlanRegion::None, PlanRegion::BottomThird, PlanRegion::BottomTwoThirds, PlanRegion::TopThird,
                         PlanRegion::TopTwoThirds}) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw Error("unknown plan region '" + std::string(s) + "'");
}

LayerPlan make_thirds_plan(std::size_t n_layers, PlanRegion region, int low_bits, int high_bits)
{
    if (n_layers < 3) {
        throw Error("thirds plans need at least 3 layers");
    }
    const std::size_t one = n_layers / 3;
    const std::size_t two = 2 * n_layers / 3;
    std::size_t lo = 0;
    std::size_t hi = 0; // half-open [lo, hi) gets low_bits
    switch (region) {
    case PlanRegion::None:
        break;
    case PlanRegion::BottomThird:
        hi = one;
        break;
    case PlanRegion::BottomTwoThirds:
        hi = two;
        break;
    case PlanRegion::TopThird:
        lo = two;
        hi = n_layers;
        break;
    case PlanRegion::TopTwoThirds:
        lo = one;
        hi = n_layers;
        break;
    }
    LayerPlan plan;
    for (std::size_t i = 0; i < n_layers; ++i) {
        plan.bits_per_layer.push_back(i >= lo && i < hi ? low_bits : high_bits);
    }
    plan.validate();
    return plan;
}

PlanEvaluation apply_plan(const std::vector<Matrix>& layers, const LayerPlan& plan, Strategy strategy,
                          Granularity granularity)
{
    plan.validate();
    if (layers.size() != plan.size()) {
        throw Error("plan has " + std::to_string(plan.size()) + " entries for " + std::to_string(layers.size()) +
                    " layers");
    }
    PlanEvaluation ev;
    double acc = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const double e = quant_error(layers[i], QuantConfig{plan.bits_per_layer[i], strategy, granularity});
        ev.layer_errors.push_back(e);
        acc += e * e;
    }
    ev.total_error = std::sqrt(acc);
    return ev;
}

std::vector<PlanRunResult> run_mixed_pipeline(const Teacher& teacher, const std::vector<LayerPlan>& plans,
                                              const PipelineConfig& cfg)
{
    std::vector<PlanRunResult> out;
    for (const LayerPlan& plan : plans) {
        plan.validate();
        PipelineConfig c = cfg;
        c.layer_bits = plan.bits_per_layer;
        c.modes = {TuneMode::OutlierDims};
        const ExperimentReport rep = run_two_stage_pipeline(teacher, c);
        double acc = 0.0;
        for (double e : rep.stage1_layer_errors) {
            acc += e * e;
        }
        out.push_back({plan, rep.result(TuneMode::OutlierDims).training.final_loss, std::sqrt(acc)});
    }
    return out;
}

} // namespace qtune
