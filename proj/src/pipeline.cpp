// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/pipeline.hpp"

#include "qtune/error.hpp"
#include "qtune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace qtune {

namespace {

// Seed streams; fixed so reports stay reproducible.
enum Stream : std::uint64_t {
    kPlanted = 10,
    kStudent = 11,
    kPretrainData = 12,
    kPretrainBatches = 13,
    kInjectBase = 20,
    kTaskTarget = 1,
    kTrainData = 2,
    kEvalData = 3,
    kBatches = 4,
    kRandomDimsBase = 100,
};

Batch gather(const Batch& src, const std::vector<std::size_t>& idx)
{
    Batch out{idx.size(), src.dim, std::vector<double>(idx.size() * src.dim)};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(&src.values[idx[i] * src.dim], src.dim, &out.values[i * src.dim]);
    }
    return out;
}

double evaluate(const ToyModel& model, const Dataset& data)
{
    return mse_loss(predict(model, data.inputs), data.targets);
}

double rss_distance(const std::vector<Matrix>& a, const std::vector<Matrix>& b)
{
    double acc = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) {
        const double d = l2_distance(a[l], b[l]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

} // namespace

Dataset make_dataset(const ToyModel& target, std::size_t count, std::uint64_t seed)
{
    if (count == 0) {
        throw Error("dataset size must be positive");
    }
    SplitMix64 rng(seed);
    Dataset d;
    d.inputs = Batch{count, target.input_dim(), std::vector<double>(count * target.input_dim())};
    for (double& v : d.inputs.values) {
        v = rng.normal();
    }
    d.targets = predict(target, d.inputs);
    return d;
}

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw Error("learning rate must be positive");
    }
    if (steps < 1) {
        throw Error("steps must be at least 1");
    }
    if (batch_size < 1) {
        throw Error("batch size must be at least 1");
    }
    if (eval_every < 1) {
        throw Error("eval interval must be at least 1");
    }
}

TrainResult train(ToyModel& model, const Dataset& train_set, const Dataset& eval_set, const TrainConfig& cfg)
{
    cfg.validate();
    SplitMix64 rng(cfg.seed);
    TrainResult result;
    result.initial_loss = evaluate(model, eval_set);
    result.loss_curve.emplace_back(0, result.initial_loss);
    std::vector<std::size_t> idx(cfg.batch_size);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        for (auto& i : idx) {
            i = rng.uniform_index(train_set.size());
        }
        if (cfg.mode != TuneMode::Frozen) {
            const Batch x = gather(train_set.inputs, idx);
            const Batch y = gather(train_set.targets, idx);
            const ForwardCache cache = forward(model, x);
            sgd_step(model, backward(model, cache, y, cfg.mode), cfg.mode, cfg.learning_rate);
        }
        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            result.loss_curve.emplace_back(step, evaluate(model, eval_set));
        }
    }
    result.final_loss = result.loss_curve.back().second;
    return result;
}

Teacher pretrain_teacher(const PretrainConfig& cfg)
{
    if (cfg.widths.size() < 2) {
        throw Error("need at least input and output widths");
    }
    Teacher t;
    t.planted = random_dense_model(cfg.widths, cfg.target_gain, SplitMix64::derive(cfg.task_seed, kPlanted));
    t.model = random_dense_model(cfg.widths, 1.0, SplitMix64::derive(cfg.task_seed, kStudent));
    const Dataset data = make_dataset(t.planted, cfg.dataset_size, SplitMix64::derive(cfg.task_seed, kPretrainData));

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.mode = TuneMode::FullFT;
    tc.validate();
    SplitMix64 rng(SplitMix64::derive(cfg.task_seed, kPretrainBatches));
    std::vector<std::size_t> idx(cfg.batch_size);
    double loss = evaluate(t.model, data);
    std::size_t step = 0;
    constexpr std::size_t kCheckEvery = 250;
    while (loss >= cfg.target_loss && step < cfg.max_steps) {
        const std::size_t chunk = std::min(kCheckEvery, cfg.max_steps - step);
        for (std::size_t s = 0; s < chunk; ++s) {
            for (auto& i : idx) {
                i = rng.uniform_index(data.size());
            }
            const Batch x = gather(data.inputs, idx);
            const Batch y = gather(data.targets, idx);
            sgd_step(t.model, backward(t.model, forward(t.model, x), y, TuneMode::FullFT), TuneMode::FullFT,
                     cfg.learning_rate);
        }
        step += chunk;
        loss = evaluate(t.model, data);
    }
    t.pretrain_loss = loss;
    t.pretrain_steps = step;
    if (!(loss < cfg.target_loss)) {
        throw Error("pretraining did not converge: loss " + std::to_string(loss) + " after " + std::to_string(step) +
                    " steps");
    }

    for (std::size_t l = 0; l < t.model.layers.size(); ++l) {
        auto& d = std::get<DenseLinear>(t.model.layers[l].weight);
        std::vector<std::size_t> injected;
        if (cfg.outlier_columns > 0) {
            injected = random_dims(d.rows, d.cols, cfg.outlier_columns, SplitMix64::derive(cfg.task_seed, kInjectBase + l))
                           .dims;
        }
        for (std::size_t c : injected) {
            for (std::size_t r = 0; r < d.rows; ++r) {
                d.weight[r * d.cols + c] *= cfg.outlier_scale;
            }
        }
        t.outlier_columns.push_back(std::move(injected));
    }
    return t;
}

void PipelineConfig::validate() const
{
    quant.validate();
    if (layer_bits) {
        for (int b : *layer_bits) {
            QuantConfig{b, quant.strategy, quant.granularity}.validate();
        }
    }
    if (r < 1) {
        throw Error("r must be at least 1");
    }
    if (modes.empty()) {
        throw Error("no tuning modes requested");
    }
    if (train_size < 1 || eval_size < 1) {
        throw Error("dataset sizes must be positive");
    }
    if (!(task_shift >= 0.0) || !std::isfinite(task_shift)) {
        throw Error("task shift must be non-negative");
    }
    train.validate();
}

const ModeResult& ExperimentReport::result(TuneMode m) const
{
    for (const auto& r : modes) {
        if (r.mode == m) {
            return r;
        }
    }
    throw Error("mode '" + std::string(to_string(m)) + "' not in report");
}

ToyModel perturbed_task(const ToyModel& teacher, double shift, std::uint64_t seed)
{
    SplitMix64 rng(seed);
    ToyModel target = teacher;
    target.activation_quant = false;
    for (auto& layer : target.layers) {
        auto& d = std::get<DenseLinear>(layer.weight);
        const double sd = shift / std::sqrt(static_cast<double>(d.cols));
        for (double& v : d.weight) {
            v += sd * rng.normal();
        }
        for (double& v : layer.bias) {
            v += sd * rng.normal();
        }
    }
    return target;
}

ExperimentReport run_two_stage_pipeline(const Teacher& teacher, const PipelineConfig& cfg)
{
    cfg.validate();
    const ToyModel& base_model = teacher.model;
    base_model.validate();
    const std::size_t n_layers = base_model.layers.size();
    for (const auto& layer : base_model.layers) {
        if (layer.is_quantized()) {
            throw Error("teacher must be full precision");
        }
    }

    ExperimentReport report;
    report.config = cfg;
    report.layer_bits = cfg.layer_bits.value_or(std::vector<int>(n_layers, cfg.quant.bits));
    if (report.layer_bits.size() != n_layers) {
        throw Error("layer plan has " + std::to_string(report.layer_bits.size()) + " entries for " +
                    std::to_string(n_layers) + " layers");
    }

    // Stage 1: task-agnostic quantization and outlier-column selection.
    const std::vector<Matrix> teacher_weights = layer_weights(base_model);
    std::vector<QuantizedTensor> bases;
    std::vector<DimSelection> outlier_sel;
    std::vector<DimSelection> random_sel;
    std::vector<DimSelection> empty_sel;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const Matrix& w = teacher_weights[l];
        const QuantConfig qc{report.layer_bits[l], cfg.quant.strategy, cfg.quant.granularity};
        bases.push_back(quantize(w, qc));
        report.stage1_layer_errors.push_back(l2_distance(w, dequantize(bases.back())));
        outlier_sel.push_back(select_trainable_dims(detect_outliers(w, cfg.outlier_k), cfg.r));
        random_sel.push_back(random_dims(w.rows(), w.cols(), cfg.r, SplitMix64::derive(cfg.seed, kRandomDimsBase + l)));
        empty_sel.push_back(DimSelection{{}, 0, w.rows(), w.cols()});
    }

    // Stage 2: downstream fine-tuning.
    const ToyModel target = perturbed_task(base_model, cfg.task_shift, SplitMix64::derive(cfg.seed, kTaskTarget));
    const Dataset train_set = make_dataset(target, cfg.train_size, SplitMix64::derive(cfg.seed, kTrainData));
    const Dataset eval_set = make_dataset(target, cfg.eval_size, SplitMix64::derive(cfg.seed, kEvalData));

    for (TuneMode mode : cfg.modes) {
        ToyModel model;
        if (mode == TuneMode::FullFT) {
            model = base_model;
        } else {
            const auto& sel = mode == TuneMode::OutlierDims  ? outlier_sel
                              : mode == TuneMode::RandomDims ? random_sel
                                                             : empty_sel;
            model = quantize_model(base_model, bases, sel);
            model.activation_quant = cfg.activation_quant;
        }

        ModeResult res;
        res.mode = mode;
        res.quant_error_before = rss_distance(teacher_weights, layer_weights(model));
        TrainConfig tc = cfg.train;
        tc.mode = mode;
        tc.seed = SplitMix64::derive(cfg.seed, kBatches);
        res.training = train(model, train_set, eval_set, tc);
        res.quant_error_after = rss_distance(teacher_weights, layer_weights(model));
        res.trainable_params = trainable_parameter_count(model, mode);
        for (const auto& layer : model.layers) {
            res.total_weights += layer.output_dim() * layer.input_dim();
            if (const auto* q = std::get_if<QuantizedLinear>(&layer.weight)) {
                res.selected_dims.push_back(q->trainable_dims.dims);
                if (mode == TuneMode::OutlierDims || mode == TuneMode::RandomDims) {
                    res.trainable_weights += q->rows() * q->trainable_dims.size();
                }
            } else {
                res.selected_dims.emplace_back();
                if (mode == TuneMode::FullFT) {
                    res.trainable_weights += layer.output_dim() * layer.input_dim();
                }
            }
        }
        report.modes.push_back(std::move(res));
    }
    return report;
}

std::vector<SweepRow> low_resource_sweep(const Teacher& teacher, const PipelineConfig& cfg,
                                         const std::vector<std::size_t>& sizes)
{
    if (sizes.empty()) {
        throw Error("no dataset sizes given");
    }
    std::vector<SweepRow> rows;
    for (std::size_t n : sizes) {
        PipelineConfig c = cfg;
        c.train_size = n;
        c.modes = {TuneMode::FullFT, TuneMode::OutlierDims};
        const ExperimentReport rep = run_two_stage_pipeline(teacher, c);
        SweepRow row;
        row.train_size = n;
        row.full_loss = rep.result(TuneMode::FullFT).training.final_loss;
        row.outlier_loss = rep.result(TuneMode::OutlierDims).training.final_loss;
        row.gap = row.outlier_loss - row.full_loss;
        rows.push_back(row);
    }
    return rows;
}

} // namespace qtune
