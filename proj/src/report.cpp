// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/report.hpp"

#include "qtune/error.hpp"

#include <cmath>

namespace qtune {

namespace {

void check_finite(const Json& j, const std::string& path)
{
    if (j.is_number_float() && !std::isfinite(j.get<double>())) {
        throw Error("non-finite value at " + path);
    }
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            check_finite(v, path + "." + k);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            check_finite(j[i], path + "[" + std::to_string(i) + "]");
        }
    }
}

Json number_array(const std::vector<double>& v, std::string_view what)
{
    Json out = Json::array();
    for (double x : v) {
        out.push_back(finite_number(x, what));
    }
    return out;
}

} // namespace

Json finite_number(double v, std::string_view what)
{
    if (!std::isfinite(v)) {
        throw Error("non-finite value for " + std::string(what));
    }
    return v;
}

Json make_report(std::string_view command, Json config, Json results)
{
    Json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["command"] = std::string(command);
    doc["config"] = std::move(config);
    doc["results"] = std::move(results);
    return doc;
}

std::string dump_report(const Json& doc)
{
    check_finite(doc, "$");
    return doc.dump(2) + "\n";
}

Json to_json(const QuantConfig& cfg)
{
    Json j;
    j["bits"] = cfg.bits;
    j["strategy"] = std::string(to_string(cfg.strategy));
    j["granularity"] = std::string(to_string(cfg.granularity));
    return j;
}

Json to_json(const PipelineConfig& cfg)
{
    Json j;
    j["quant"] = to_json(cfg.quant);
    j["activation_quant"] = cfg.activation_quant;
    j["r"] = cfg.r;
    j["outlier_k"] = finite_number(cfg.outlier_k, "outlier_k");
    Json modes = Json::array();
    for (TuneMode m : cfg.modes) {
        modes.push_back(std::string(to_string(m)));
    }
    j["modes"] = std::move(modes);
    j["learning_rate"] = finite_number(cfg.train.learning_rate, "learning_rate");
    j["steps"] = cfg.train.steps;
    j["batch_size"] = cfg.train.batch_size;
    j["eval_every"] = cfg.train.eval_every;
    j["task_shift"] = finite_number(cfg.task_shift, "task_shift");
    j["train_size"] = cfg.train_size;
    j["eval_size"] = cfg.eval_size;
    j["seed"] = cfg.seed;
    return j;
}

Json to_json(const ExperimentReport& rep)
{
    Json j;
    j["layer_bits"] = rep.layer_bits;
    j["stage1_layer_errors"] = number_array(rep.stage1_layer_errors, "stage1_layer_errors");
    Json modes = Json::array();
    for (const ModeResult& m : rep.modes) {
        Json e;
        e["mode"] = std::string(to_string(m.mode));
        e["initial_loss"] = finite_number(m.training.initial_loss, "initial_loss");
        e["final_loss"] = finite_number(m.training.final_loss, "final_loss");
        e["quant_error_before"] = finite_number(m.quant_error_before, "quant_error_before");
        e["quant_error_after"] = finite_number(m.quant_error_after, "quant_error_after");
        e["trainable_params"] = m.trainable_params;
        e["trainable_weights"] = m.trainable_weights;
        e["total_weights"] = m.total_weights;
        e["selected_dims"] = m.selected_dims;
        Json curve = Json::array();
        for (const auto& [step, loss] : m.training.loss_curve) {
            curve.push_back(Json::array({step, finite_number(loss, "loss_curve")}));
        }
        e["loss_curve"] = std::move(curve);
        modes.push_back(std::move(e));
    }
    j["modes"] = std::move(modes);
    return j;
}

Json to_json(const std::vector<SweepRow>& rows)
{
    Json out = Json::array();
    for (const SweepRow& r : rows) {
        Json e;
        e["train_size"] = r.train_size;
        e["full_loss"] = finite_number(r.full_loss, "full_loss");
        e["outlier_loss"] = finite_number(r.outlier_loss, "outlier_loss");
        e["gap"] = finite_number(r.gap, "gap");
        out.push_back(std::move(e));
    }
    return out;
}

Json to_json(const std::vector<PlanRunResult>& runs)
{
    Json out = Json::array();
    for (const PlanRunResult& r : runs) {
        Json e;
        e["bits_per_layer"] = r.plan.bits_per_layer;
        e["final_loss"] = finite_number(r.final_loss, "final_loss");
        e["quant_error"] = finite_number(r.quant_error, "quant_error");
        out.push_back(std::move(e));
    }
    return out;
}

Json to_json(const PlanEvaluation& eval)
{
    Json j;
    j["layer_errors"] = number_array(eval.layer_errors, "layer_errors");
    j["total_error"] = finite_number(eval.total_error, "total_error");
    return j;
}

Json outlier_summary(const OutlierReport& rep, const DimSelection& sel)
{
    const double ratio = trainable_ratio(sel.size(), rep.cols);
    Json j;
    j["rows"] = rep.rows;
    j["cols"] = rep.cols;
    j["k"] = finite_number(rep.threshold_k, "k");
    j["outlier_count"] = rep.total();
    j["outlier_fraction"] = finite_number(static_cast<double>(rep.total()) / static_cast<double>(rep.rows * rep.cols),
                                          "outlier_fraction");
    j["dim_counts"] = rep.dim_counts;
    j["ranking"] = rank_dimensions(rep);
    j["r"] = sel.r;
    j["selected_dims"] = sel.dims;
    j["trainable_ratio_percent"] = finite_number(ratio, "trainable_ratio_percent");
    j["trainable_ratio"] = format_ratio(ratio) + "%";
    return j;
}

} // namespace qtune
