// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/toy_model.hpp"

#include "qtune/error.hpp"
#include "qtune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qtune {

std::string_view to_string(TuneMode m)
{
    switch (m) {
    case TuneMode::FullFT:
        return "full";
    case TuneMode::OutlierDims:
        return "outlier";
    case TuneMode::RandomDims:
        return "random";
    case TuneMode::AlphaOnly:
        return "alpha";
    case TuneMode::Frozen:
        return "frozen";
    }
    return "unknown";
}

TuneMode parse_tune_mode(std::string_view s)
{
    for (TuneMode m : {TuneMode::FullFT, TuneMode::OutlierDims, TuneMode::RandomDims, TuneMode::AlphaOnly,
                       TuneMode::Frozen}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    throw Error("unknown tuning mode '" + std::string(s) + "'");
}

QuantizedLinear::QuantizedLinear(QuantizedTensor base_in, DimSelection dims)
    : base(std::move(base_in)), trainable_dims(std::move(dims)), codes(base.codes())
{
    if (!std::is_sorted(trainable_dims.dims.begin(), trainable_dims.dims.end()) ||
        std::adjacent_find(trainable_dims.dims.begin(), trainable_dims.dims.end()) != trainable_dims.dims.end()) {
        throw Error("trainable dims must be sorted and distinct");
    }
    if (!trainable_dims.dims.empty() && trainable_dims.dims.back() >= base.cols()) {
        throw Error("trainable dim out of range");
    }
    alphas.assign(base.params().alphas.begin(), base.params().alphas.end());
    const Matrix deq = dequantize(base);
    const std::size_t k = trainable_dims.size();
    trainable_values.resize(base.rows() * k);
    for (std::size_t r = 0; r < base.rows(); ++r) {
        for (std::size_t s = 0; s < k; ++s) {
            trainable_values[r * k + s] = deq(r, trainable_dims.dims[s]);
        }
    }
}

QuantizedTensor QuantizedLinear::current_base() const
{
    std::vector<float> a(alphas.size());
    std::transform(alphas.begin(), alphas.end(), a.begin(), [](double v) { return static_cast<float>(v); });
    return base.with_alphas(std::move(a));
}

double QuantizedLinear::frozen_fraction() const
{
    return 1.0 - static_cast<double>(trainable_dims.size()) / static_cast<double>(cols());
}

std::size_t ToyLayer::input_dim() const
{
    return std::visit([](const auto& w) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(w)>, DenseLinear>) {
            return w.cols;
        } else {
            return w.cols();
        }
    }, weight);
}

std::size_t ToyLayer::output_dim() const
{
    return std::visit([](const auto& w) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(w)>, DenseLinear>) {
            return w.rows;
        } else {
            return w.rows();
        }
    }, weight);
}

std::size_t ToyModel::input_dim() const
{
    return layers.empty() ? 0 : layers.front().input_dim();
}

std::size_t ToyModel::output_dim() const
{
    return layers.empty() ? 0 : layers.back().output_dim();
}

void ToyModel::validate() const
{
    if (layers.empty()) {
        throw Error("model has no layers");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const ToyLayer& layer = layers[l];
        if (layer.bias.size() != layer.output_dim()) {
            throw Error("layer " + std::to_string(l) + " bias length mismatch");
        }
        if (const auto* d = std::get_if<DenseLinear>(&layer.weight); d && d->weight.size() != d->rows * d->cols) {
            throw Error("layer " + std::to_string(l) + " weight length mismatch");
        }
        if (l > 0 && layers[l - 1].output_dim() != layer.input_dim()) {
            throw Error("layer " + std::to_string(l) + " input dim " + std::to_string(layer.input_dim()) +
                        " does not match previous output " + std::to_string(layers[l - 1].output_dim()));
        }
    }
}

std::vector<double> effective_weight(const ToyLayer& layer)
{
    if (const auto* d = std::get_if<DenseLinear>(&layer.weight)) {
        return d->weight;
    }
    const auto& q = std::get<QuantizedLinear>(layer.weight);
    const std::size_t rows = q.rows();
    const std::size_t cols = q.cols();
    const double levels = static_cast<double>(1U << q.base.bits());
    std::vector<double> w(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t g = q.base.group_of_row(r);
        const double step = q.alphas[g] / levels;
        const double zero = q.base.params().zeros[g];
        for (std::size_t c = 0; c < cols; ++c) {
            w[r * cols + c] = (static_cast<double>(q.codes[r * cols + c]) - zero) * step;
        }
        const std::size_t k = q.trainable_dims.size();
        for (std::size_t s = 0; s < k; ++s) {
            w[r * cols + q.trainable_dims.dims[s]] = q.trainable_values[r * k + s];
        }
    }
    return w;
}

namespace {

// y = x W^T + b
Batch affine(const Batch& x, const std::vector<double>& w, const std::vector<double>& b, std::size_t out)
{
    Batch y{x.count, out, std::vector<double>(x.count * out)};
    for (std::size_t n = 0; n < x.count; ++n) {
        const double* xi = &x.values[n * x.dim];
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = &w[o * x.dim];
            double acc = b[o];
            for (std::size_t i = 0; i < x.dim; ++i) {
                acc += wr[i] * xi[i];
            }
            y.values[n * out + o] = acc;
        }
    }
    return y;
}

void fake_quantize_activations(Batch& a)
{
    std::vector<float> f(a.values.begin(), a.values.end());
    const Matrix m(a.count, a.dim, std::move(f));
    const Matrix deq = dequantize(quantize(m, QuantConfig{8, Strategy::MinMax, Granularity::PerTensor}));
    std::copy(deq.values().begin(), deq.values().end(), a.values.begin());
}

bool trains_bias(TuneMode mode)
{
    return mode != TuneMode::Frozen;
}

void check_mode(const ToyLayer& layer, TuneMode mode)
{
    if (mode == TuneMode::FullFT && layer.is_quantized()) {
        throw Error("full fine-tuning requires a full-precision model");
    }
    if (mode != TuneMode::FullFT && mode != TuneMode::Frozen && !layer.is_quantized()) {
        throw Error(std::string("mode '") + std::string(to_string(mode)) + "' requires quantized layers");
    }
}

} // namespace

ForwardCache forward(const ToyModel& model, const Batch& x)
{
    model.validate();
    if (x.dim != model.input_dim() || x.values.size() != x.count * x.dim) {
        throw Error("input dim " + std::to_string(x.dim) + " does not match model input " +
                    std::to_string(model.input_dim()));
    }
    ForwardCache cache;
    Batch current = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const ToyLayer& layer = model.layers[l];
        cache.inputs.push_back(current);
        Batch z = affine(current, effective_weight(layer), layer.bias, layer.output_dim());
        if (l + 1 == model.layers.size()) {
            cache.output = std::move(z);
            break;
        }
        for (double& v : z.values) {
            v = std::tanh(v);
        }
        cache.activations.push_back(z);
        if (model.activation_quant) {
            fake_quantize_activations(z);
        }
        current = std::move(z);
    }
    return cache;
}

Batch predict(const ToyModel& model, const Batch& x)
{
    return forward(model, x).output;
}

double mse_loss(const Batch& prediction, const Batch& target)
{
    if (prediction.values.size() != target.values.size() || prediction.values.empty()) {
        throw Error("prediction/target size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.values.size(); ++i) {
        const double d = prediction.values[i] - target.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(prediction.values.size());
}

std::vector<double> Gradients::flat() const
{
    std::vector<double> out;
    for (const auto& g : layers) {
        out.insert(out.end(), g.weight.begin(), g.weight.end());
        out.insert(out.end(), g.trainable.begin(), g.trainable.end());
        out.insert(out.end(), g.alpha.begin(), g.alpha.end());
        out.insert(out.end(), g.bias.begin(), g.bias.end());
    }
    return out;
}

Gradients backward(const ToyModel& model, const ForwardCache& cache, const Batch& target, TuneMode mode)
{
    const std::size_t n_layers = model.layers.size();
    if (cache.inputs.size() != n_layers) {
        throw Error("forward cache does not match model");
    }
    if (target.values.size() != cache.output.values.size()) {
        throw Error("target size mismatch");
    }
    for (const auto& layer : model.layers) {
        check_mode(layer, mode);
    }

    Gradients grads;
    grads.layers.resize(n_layers);
    if (mode == TuneMode::Frozen) {
        return grads;
    }

    // dL/dz for the output layer.
    Batch delta = cache.output;
    const double scale = 2.0 / static_cast<double>(delta.values.size());
    for (std::size_t i = 0; i < delta.values.size(); ++i) {
        delta.values[i] = scale * (cache.output.values[i] - target.values[i]);
    }

    for (std::size_t li = n_layers; li-- > 0;) {
        const ToyLayer& layer = model.layers[li];
        const Batch& in = cache.inputs[li];
        const std::size_t rows = layer.output_dim();
        const std::size_t cols = layer.input_dim();
        LayerGradients& g = grads.layers[li];

        // dL/dW[r][c] = sum_n delta[n][r] * in[n][c], restricted to what is trainable.
        const auto weight_grad = [&](std::size_t r, std::size_t c) {
            double acc = 0.0;
            for (std::size_t n = 0; n < in.count; ++n) {
                acc += delta.values[n * rows + r] * in.values[n * cols + c];
            }
            return acc;
        };

        if (trains_bias(mode)) {
            g.bias.assign(rows, 0.0);
            for (std::size_t n = 0; n < delta.count; ++n) {
                for (std::size_t r = 0; r < rows; ++r) {
                    g.bias[r] += delta.values[n * rows + r];
                }
            }
        }

        if (mode == TuneMode::FullFT) {
            g.weight.resize(rows * cols);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    g.weight[r * cols + c] = weight_grad(r, c);
                }
            }
        } else if (const auto* q = std::get_if<QuantizedLinear>(&layer.weight)) {
            const auto& dims = q->trainable_dims.dims;
            if (mode == TuneMode::OutlierDims || mode == TuneMode::RandomDims) {
                g.trainable.resize(rows * dims.size());
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t s = 0; s < dims.size(); ++s) {
                        g.trainable[r * dims.size() + s] = weight_grad(r, dims[s]);
                    }
                }
            } else if (mode == TuneMode::AlphaOnly) {
                // d w^ / d alpha = (code - z) / 2^b on columns still served by the base.
                const double levels = static_cast<double>(1U << q->base.bits());
                g.alpha.assign(q->alphas.size(), 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t grp = q->base.group_of_row(r);
                    const double zero = q->base.params().zeros[grp];
                    double acc = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        if (q->trainable_dims.contains(c)) {
                            continue;
                        }
                        const double dw_dalpha = (static_cast<double>(q->codes[r * cols + c]) - zero) / levels;
                        if (dw_dalpha != 0.0) {
                            acc += weight_grad(r, c) * dw_dalpha;
                        }
                    }
                    g.alpha[grp] += acc;
                }
            }
        }

        if (li == 0) {
            break;
        }
        // Propagate through W and the tanh of the previous layer.
        const std::vector<double> w = effective_weight(layer);
        const Batch& act = cache.activations[li - 1];
        Batch prev{in.count, cols, std::vector<double>(in.count * cols, 0.0)};
        for (std::size_t n = 0; n < in.count; ++n) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double d = delta.values[n * rows + r];
                const double* wr = &w[r * cols];
                for (std::size_t c = 0; c < cols; ++c) {
                    prev.values[n * cols + c] += d * wr[c];
                }
            }
            for (std::size_t c = 0; c < cols; ++c) {
                const double h = act.values[n * cols + c];
                prev.values[n * cols + c] *= 1.0 - h * h;
            }
        }
        delta = std::move(prev);
    }
    return grads;
}

std::vector<double*> trainable_parameters(ToyModel& model, TuneMode mode)
{
    std::vector<double*> out;
    if (mode == TuneMode::Frozen) {
        return out;
    }
    for (auto& layer : model.layers) {
        check_mode(layer, mode);
        if (auto* d = std::get_if<DenseLinear>(&layer.weight)) {
            for (double& v : d->weight) {
                out.push_back(&v);
            }
        } else {
            auto& q = std::get<QuantizedLinear>(layer.weight);
            if (mode == TuneMode::OutlierDims || mode == TuneMode::RandomDims) {
                for (double& v : q.trainable_values) {
                    out.push_back(&v);
                }
            } else if (mode == TuneMode::AlphaOnly) {
                for (double& v : q.alphas) {
                    out.push_back(&v);
                }
            }
        }
        for (double& v : layer.bias) {
            out.push_back(&v);
        }
    }
    return out;
}

std::size_t trainable_parameter_count(const ToyModel& model, TuneMode mode)
{
    // Same traversal as trainable_parameters, without mutation.
    ToyModel copy = model;
    return trainable_parameters(copy, mode).size();
}

void sgd_step(ToyModel& model, const Gradients& grads, TuneMode mode, double learning_rate)
{
    const auto params = trainable_parameters(model, mode);
    const auto flat = grads.flat();
    if (params.size() != flat.size()) {
        throw Error("gradient layout does not match trainable parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        *params[i] -= learning_rate * flat[i];
    }
    if (mode == TuneMode::AlphaOnly) {
        for (auto& layer : model.layers) {
            for (double& a : std::get<QuantizedLinear>(layer.weight).alphas) {
                a = std::max(a, 1e-12);
            }
        }
    }
}

ToyModel random_dense_model(const std::vector<std::size_t>& widths, double gain, std::uint64_t seed)
{
    if (widths.size() < 2) {
        throw Error("need at least input and output widths");
    }
    SplitMix64 rng(seed);
    ToyModel model;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        if (in == 0 || out == 0) {
            throw Error("layer widths must be positive");
        }
        DenseLinear d{out, in, std::vector<double>(out * in)};
        const double sd = gain / std::sqrt(static_cast<double>(in));
        for (double& v : d.weight) {
            v = sd * rng.normal();
        }
        model.layers.push_back({std::move(d), std::vector<double>(out, 0.0)});
    }
    return model;
}

ToyModel quantize_model(const ToyModel& model, const std::vector<QuantizedTensor>& bases,
                        const std::vector<DimSelection>& selections)
{
    if (bases.size() != model.layers.size() || selections.size() != model.layers.size()) {
        throw Error("one quantized base and selection per layer required");
    }
    ToyModel out;
    out.activation_quant = model.activation_quant;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const ToyLayer& src = model.layers[l];
        if (bases[l].rows() != src.output_dim() || bases[l].cols() != src.input_dim()) {
            throw Error("quantized base shape does not match layer " + std::to_string(l));
        }
        out.layers.push_back({QuantizedLinear(bases[l], selections[l]), src.bias});
    }
    return out;
}

std::vector<Matrix> layer_weights(const ToyModel& model)
{
    std::vector<Matrix> out;
    for (const auto& layer : model.layers) {
        const auto w = effective_weight(layer);
        out.emplace_back(layer.output_dim(), layer.input_dim(), std::vector<float>(w.begin(), w.end()));
    }
    return out;
}

} // namespace qtune
