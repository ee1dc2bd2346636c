// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/outlier.hpp"
#include "qtune/quantizer.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <variant>
#include <vector>

namespace qtune {

/// Which parameters receive updates during fine-tuning.
enum class TuneMode {
    FullFT,      // full-precision model, every weight and bias
    OutlierDims, // quantized model, outlier-selected columns + biases
    RandomDims,  // quantized model, randomly selected columns + biases
    AlphaOnly,   // quantized model, per-group scaling factors + biases
    Frozen,      // quantized model, nothing
};

std::string_view to_string(TuneMode m);
TuneMode parse_tune_mode(std::string_view s);

/// Full-precision weight, [rows x cols] row-major.
struct DenseLinear {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> weight;
};

/// Frozen low-bit weight with a few high-precision trainable columns.
///
/// Effective weight: dequantized base (using the working `alphas`), with the
/// columns in `trainable_dims` replaced by `trainable_values`.
struct QuantizedLinear {
    QuantizedTensor base;
    DimSelection trainable_dims;
    std::vector<double> trainable_values; // rows x |dims|, row-major
    std::vector<double> alphas;           // working copy, one per group
    std::vector<std::uint8_t> codes;      // unpacked base codes

    /// Trainable columns start from their dequantized values.
    QuantizedLinear(QuantizedTensor base, DimSelection dims);

    std::size_t rows() const noexcept { return base.rows(); }
    std::size_t cols() const noexcept { return base.cols(); }

    /// Base with the working scaling factors; codes and zero-points untouched.
    QuantizedTensor current_base() const;

    /// Fraction of weights still served from low-bit codes.
    double frozen_fraction() const;
};

struct ToyLayer {
    std::variant<DenseLinear, QuantizedLinear> weight;
    std::vector<double> bias;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    bool is_quantized() const noexcept { return std::holds_alternative<QuantizedLinear>(weight); }
};

/// Stack of linear layers with tanh between them (none after the last).
struct ToyModel {
    std::vector<ToyLayer> layers;
    bool activation_quant = false; // 8-bit min-max fake quantization between layers

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    /// Throws when consecutive layer shapes do not chain.
    void validate() const;
};

/// Row-major [count x dim] block of vectors.
struct Batch {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> values;
};

std::vector<double> effective_weight(const ToyLayer& layer);

struct ForwardCache {
    std::vector<Batch> inputs;      // input to each layer
    std::vector<Batch> activations; // tanh output of each hidden layer
    Batch output;
};

ForwardCache forward(const ToyModel& model, const Batch& x);
Batch predict(const ToyModel& model, const Batch& x);

/// Mean over all output entries of the squared error.
double mse_loss(const Batch& prediction, const Batch& target);

/// Gradients of one layer; only the vectors for the mode's trainable
/// parameters are populated.
struct LayerGradients {
    std::vector<double> weight;    // FullFT
    std::vector<double> trainable; // OutlierDims / RandomDims
    std::vector<double> alpha;     // AlphaOnly
    std::vector<double> bias;      // every mode except Frozen
};

struct Gradients {
    std::vector<LayerGradients> layers;

    /// Concatenation in trainable_parameters() order.
    std::vector<double> flat() const;
};

/// Exact gradients of mse_loss. With activation_quant the fake quantizer is
/// passed through unchanged (identity derivative).
Gradients backward(const ToyModel& model, const ForwardCache& cache, const Batch& target, TuneMode mode);

/// Pointers to the trainable scalars of the mode, in flat() order.
std::vector<double*> trainable_parameters(ToyModel& model, TuneMode mode);

std::size_t trainable_parameter_count(const ToyModel& model, TuneMode mode);

/// Plain SGD step: p -= lr * g. Scaling factors are kept positive.
void sgd_step(ToyModel& model, const Gradients& grads, TuneMode mode, double learning_rate);

/// Random full-precision model with N(0, gain^2 / fan_in) weights and zero biases.
ToyModel random_dense_model(const std::vector<std::size_t>& widths, double gain, std::uint64_t seed);

/// Replaces each dense weight of `model` with the matching quantized base and
/// column selection; biases carry over.
ToyModel quantize_model(const ToyModel& model, const std::vector<QuantizedTensor>& bases,
                        const std::vector<DimSelection>& selections);

/// Each layer's weight as a float matrix (quantized layers give the effective weight).
std::vector<Matrix> layer_weights(const ToyModel& model);

} // namespace qtune
