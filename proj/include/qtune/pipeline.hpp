// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/toy_model.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace qtune {

/// Regression data: inputs ~ N(0, I), targets = target network outputs.
struct Dataset {
    Batch inputs;
    Batch targets;

    std::size_t size() const noexcept { return inputs.count; }
};

Dataset make_dataset(const ToyModel& target, std::size_t count, std::uint64_t seed);

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t steps = 1500;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
    TuneMode mode = TuneMode::OutlierDims;
    std::size_t eval_every = 100;

    void validate() const;
};

struct TrainResult {
    std::vector<std::pair<std::size_t, double>> loss_curve; // (step, eval loss)
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Minibatch SGD on `train` (batches drawn with replacement); loss is tracked on `eval`.
TrainResult train(ToyModel& model, const Dataset& train, const Dataset& eval, const TrainConfig& cfg);

struct PretrainConfig {
    std::vector<std::size_t> widths{32, 32, 32, 1};
    std::uint64_t task_seed = 42;
    std::size_t dataset_size = 1024;
    double learning_rate = 0.2;
    std::size_t batch_size = 32;
    std::size_t max_steps = 100000;
    double target_loss = 1e-3;
    double target_gain = 1.0;      // planted network weight scale
    std::size_t outlier_columns = 1; // per layer, scaled after training
    double outlier_scale = 8.0;
};

struct Teacher {
    ToyModel model;   // pretrained, with injected outlier columns
    ToyModel planted; // the pretraining target
    double pretrain_loss = 0.0;
    std::size_t pretrain_steps = 0;
    std::vector<std::vector<std::size_t>> outlier_columns; // per layer, ascending
};

/// Trains a full-precision network on the planted regression task until the
/// training loss drops below target_loss (throws with the final loss if it
/// never does), then scales `outlier_columns` random columns of every layer
/// by `outlier_scale`.
Teacher pretrain_teacher(const PretrainConfig& cfg);

struct PipelineConfig {
    QuantConfig quant{4, Strategy::OutlierAware, Granularity::PerTensor};
    std::optional<std::vector<int>> layer_bits; // overrides quant.bits per layer
    bool activation_quant = false; // 8-bit activations in the quantized modes
    std::size_t r = 2;
    double outlier_k = kDefaultOutlierK;
    std::vector<TuneMode> modes{TuneMode::FullFT, TuneMode::OutlierDims, TuneMode::RandomDims, TuneMode::AlphaOnly,
                                TuneMode::Frozen};
    TrainConfig train;
    double task_shift = 0.1; // downstream perturbation, relative to 1/sqrt(fan_in)
    std::size_t train_size = 256;
    std::size_t eval_size = 1024;
    std::uint64_t seed = 42;

    void validate() const;
};

struct ModeResult {
    TuneMode mode = TuneMode::Frozen;
    TrainResult training;
    double quant_error_before = 0.0; // RSS over layers of L2(teacher, effective weight)
    double quant_error_after = 0.0;
    std::size_t trainable_params = 0;
    std::size_t trainable_weights = 0; // excluding biases
    std::size_t total_weights = 0;
    std::vector<std::vector<std::size_t>> selected_dims; // per layer
};

struct ExperimentReport {
    PipelineConfig config;
    std::vector<int> layer_bits;
    std::vector<double> stage1_layer_errors;
    std::vector<ModeResult> modes;

    const ModeResult& result(TuneMode m) const;
};

/// Stage 1 quantizes every teacher layer without touching task data; stage 2
/// fine-tunes each requested mode on the perturbed downstream task.
ExperimentReport run_two_stage_pipeline(const Teacher& teacher, const PipelineConfig& cfg);

/// Downstream target: teacher weights and biases plus shift * N(0, 1/fan_in) noise.
ToyModel perturbed_task(const ToyModel& teacher, double shift, std::uint64_t seed);

struct SweepRow {
    std::size_t train_size = 0;
    double full_loss = 0.0;
    double outlier_loss = 0.0;
    double gap = 0.0; // outlier_loss - full_loss
};

std::vector<SweepRow> low_resource_sweep(const Teacher& teacher, const PipelineConfig& cfg,
                                         const std::vector<std::size_t>& sizes);

} // namespace qtune
