// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/error.hpp"
#include "qtune/rng.hpp"
#include "qtune/toy_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace qtune;

namespace {

Batch random_batch(std::size_t count, std::size_t dim, std::uint64_t seed, double scale = 1.0)
{
    SplitMix64 g(seed);
    Batch b{count, dim, std::vector<double>(count * dim)};
    for (double& v : b.values) {
        v = scale * g.normal();
    }
    return b;
}

void randomize_biases(ToyModel& m, std::uint64_t seed)
{
    SplitMix64 g(seed);
    for (auto& layer : m.layers) {
        for (double& b : layer.bias) {
            b = 0.1 * g.normal();
        }
    }
}

ToyModel quantized_model(const ToyModel& dense, TuneMode mode, Granularity gran, std::size_t r, std::uint64_t seed)
{
    std::vector<QuantizedTensor> bases;
    std::vector<DimSelection> sels;
    const auto weights = layer_weights(dense);
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const Matrix& w = weights[l];
        bases.push_back(quantize(w, {4, Strategy::MinMax, gran}));
        if (mode == TuneMode::OutlierDims || mode == TuneMode::RandomDims) {
            sels.push_back(random_dims(w.rows(), w.cols(), r, seed + l));
        } else {
            sels.push_back(DimSelection{{}, 0, w.rows(), w.cols()});
        }
    }
    return quantize_model(dense, bases, sels);
}

ToyModel model_for(TuneMode mode, std::uint64_t seed)
{
    ToyModel dense = random_dense_model({5, 4, 3, 2}, 1.5, seed);
    randomize_biases(dense, seed + 1000);
    if (mode == TuneMode::FullFT) {
        return dense;
    }
    const Granularity gran = seed % 2 ? Granularity::PerRow : Granularity::PerTensor;
    return quantized_model(dense, mode, gran, 2, seed);
}

double loss_of(const ToyModel& m, const Batch& x, const Batch& y)
{
    return mse_loss(predict(m, x), y);
}

constexpr TuneMode kAllModes[] = {TuneMode::FullFT, TuneMode::OutlierDims, TuneMode::RandomDims, TuneMode::AlphaOnly,
                                  TuneMode::Frozen};

} // namespace

TEST(TuneMode, Names)
{
    for (TuneMode m : kAllModes) {
        EXPECT_EQ(parse_tune_mode(to_string(m)), m);
    }
    EXPECT_EQ(to_string(TuneMode::AlphaOnly), "alpha");
    EXPECT_THROW(parse_tune_mode("lora"), Error);
}

TEST(Forward, ZeroInputZeroBiasGivesZero)
{
    const ToyModel m = random_dense_model({6, 5, 4, 3}, 2.0, 3);
    const Batch x{4, 6, std::vector<double>(24, 0.0)};
    for (double v : predict(m, x).values) {
        EXPECT_EQ(v, 0.0);
    }
    const ToyModel q = quantized_model(m, TuneMode::OutlierDims, Granularity::PerRow, 2, 1);
    for (double v : predict(q, x).values) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Forward, AllColumnsTrainableEqualsDequantizedDense)
{
    const ToyModel dense = random_dense_model({6, 5, 4}, 1.0, 8);
    const auto weights = layer_weights(dense);
    std::vector<QuantizedTensor> bases;
    std::vector<DimSelection> all;
    ToyModel deq = dense;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        bases.push_back(quantize(weights[l], {2, Strategy::OutlierAware, Granularity::PerTensor}));
        all.push_back(random_dims(weights[l].rows(), weights[l].cols(), weights[l].cols(), 0));
        const Matrix d = dequantize(bases.back());
        auto& dl = std::get<DenseLinear>(deq.layers[l].weight);
        dl.weight.assign(d.values().begin(), d.values().end());
    }
    const ToyModel q = quantize_model(dense, bases, all);
    const Batch x = random_batch(7, 6, 2);
    EXPECT_EQ(predict(q, x).values, predict(deq, x).values);
}

TEST(Forward, SingleScalarLayerByHand)
{
    // alpha = 2, z = 8, 4 bits: 0.75 -> code round(0.75 * 16 / 2) + 8 = 14 -> (14 - 8) * 2 / 16 = 0.75.
    const Matrix w = Matrix::from_rows({{0.75f}});
    const QuantizedTensor base = quantize_with_params(w, 4, Granularity::PerTensor, QuantParams{{2.0f}, {8}});
    EXPECT_EQ(base.codes()[0], 14);
    ToyModel m;
    m.layers.push_back(ToyLayer{QuantizedLinear(base, DimSelection{{}, 0, 1, 1}), {0.5}});
    const Batch x{1, 1, {2.0}};
    EXPECT_DOUBLE_EQ(predict(m, x).values[0], 0.75 * 2.0 + 0.5);
}

TEST(Forward, RejectsDimMismatch)
{
    const ToyModel m = random_dense_model({3, 2}, 1.0, 1);
    EXPECT_THROW(predict(m, Batch{1, 4, std::vector<double>(4, 0.0)}), Error);
    ToyModel broken = random_dense_model({3, 2, 2}, 1.0, 1);
    broken.layers[1].bias.push_back(0.0);
    EXPECT_THROW(broken.validate(), Error);
}

TEST(Forward, ActivationQuantPutsHiddenValuesOnA256Grid)
{
    ToyModel m = random_dense_model({4, 8, 8, 1}, 1.0, 6);
    const Batch x = random_batch(64, 4, 9);
    const Batch plain = predict(m, x);
    m.activation_quant = true;
    const ForwardCache cache = forward(m, x);
    for (std::size_t l = 1; l < cache.inputs.size(); ++l) {
        const std::set<double> distinct(cache.inputs[l].values.begin(), cache.inputs[l].values.end());
        EXPECT_LE(distinct.size(), 256U);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < plain.values.size(); ++i) {
        worst = std::max(worst, std::fabs(plain.values[i] - cache.output.values[i]));
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_LT(worst, 0.05);
}

TEST(Backward, SingleLayerLeastSquaresClosedForm)
{
    ToyModel m = random_dense_model({3, 2}, 1.0, 5);
    randomize_biases(m, 6);
    const Batch x = random_batch(10, 3, 7);
    const Batch y = random_batch(10, 2, 8);
    const Gradients g = backward(m, forward(m, x), y, TuneMode::FullFT);
    const auto& d = std::get<DenseLinear>(m.layers[0].weight);
    // dL/dW = 2/(N*out) * sum_n (W x_n + b - y_n) x_n^T
    const double scale = 2.0 / (10.0 * 2.0);
    for (std::size_t i = 0; i < 2; ++i) {
        double gb = 0.0;
        std::vector<double> gw(3, 0.0);
        for (std::size_t n = 0; n < 10; ++n) {
            double pred = m.layers[0].bias[i];
            for (std::size_t j = 0; j < 3; ++j) {
                pred += d.weight[i * 3 + j] * x.values[n * 3 + j];
            }
            const double r = pred - y.values[n * 2 + i];
            gb += scale * r;
            for (std::size_t j = 0; j < 3; ++j) {
                gw[j] += scale * r * x.values[n * 3 + j];
            }
        }
        EXPECT_NEAR(g.layers[0].bias[i], gb, 1e-12);
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(g.layers[0].weight[i * 3 + j], gw[j], 1e-12);
        }
    }
}

class FiniteDifference : public ::testing::TestWithParam<TuneMode> {};

TEST_P(FiniteDifference, MatchesCentralDifferences)
{
    const TuneMode mode = GetParam();
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ToyModel m = model_for(mode, seed);
        const Batch x = random_batch(6, 5, 100 + seed);
        const Batch y = random_batch(6, 2, 200 + seed);
        const std::vector<double> analytic = backward(m, forward(m, x), y, mode).flat();
        const std::vector<double*> params = trainable_parameters(m, mode);
        ASSERT_EQ(analytic.size(), params.size());
        ASSERT_EQ(params.size(), trainable_parameter_count(m, mode));
        const double h = 1e-3;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double orig = *params[i];
            *params[i] = orig + h;
            const double up = loss_of(m, x, y);
            *params[i] = orig - h;
            const double down = loss_of(m, x, y);
            *params[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double tol = std::max(1e-6, 1e-4 * std::max(std::fabs(fd), std::fabs(analytic[i])));
            EXPECT_NEAR(analytic[i], fd, tol) << to_string(mode) << " seed " << seed << " param " << i;
        }
    }
}

INSTANTIATE_TEST_SUITE_P(AllModes, FiniteDifference, ::testing::ValuesIn(kAllModes),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Backward, FrozenHasNoGradientStorage)
{
    ToyModel m = model_for(TuneMode::Frozen, 4);
    const Batch x = random_batch(3, 5, 1);
    const Batch y = random_batch(3, 2, 2);
    const Gradients g = backward(m, forward(m, x), y, TuneMode::Frozen);
    for (const auto& lg : g.layers) {
        EXPECT_TRUE(lg.weight.empty());
        EXPECT_TRUE(lg.trainable.empty());
        EXPECT_TRUE(lg.alpha.empty());
        EXPECT_TRUE(lg.bias.empty());
    }
    EXPECT_EQ(trainable_parameter_count(m, TuneMode::Frozen), 0U);
    const ToyModel before = m;
    sgd_step(m, g, TuneMode::Frozen, 1.0);
    EXPECT_EQ(predict(m, x).values, predict(before, x).values);
}

TEST(Backward, OutlierDimsStoresOnlySelectedColumns)
{
    const ToyModel m = model_for(TuneMode::OutlierDims, 2);
    const Batch x = random_batch(3, 5, 1);
    const Batch y = random_batch(3, 2, 2);
    const Gradients g = backward(m, forward(m, x), y, TuneMode::OutlierDims);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& q = std::get<QuantizedLinear>(m.layers[l].weight);
        EXPECT_TRUE(g.layers[l].weight.empty());
        EXPECT_TRUE(g.layers[l].alpha.empty());
        EXPECT_EQ(g.layers[l].trainable.size(), q.rows() * q.trainable_dims.size());
        EXPECT_EQ(g.layers[l].bias.size(), q.rows());
    }
}

TEST(Backward, ModeMismatchRejected)
{
    const ToyModel dense = model_for(TuneMode::FullFT, 1);
    const ToyModel quant = model_for(TuneMode::OutlierDims, 1);
    const Batch x = random_batch(2, 5, 1);
    const Batch y = random_batch(2, 2, 2);
    EXPECT_THROW(backward(quant, forward(quant, x), y, TuneMode::FullFT), Error);
    EXPECT_THROW(backward(dense, forward(dense, x), y, TuneMode::OutlierDims), Error);
    EXPECT_THROW(backward(dense, forward(dense, x), y, TuneMode::AlphaOnly), Error);
}

TEST(ParameterCount, MatchesLayout)
{
    const ToyModel m = model_for(TuneMode::OutlierDims, 1);
    std::size_t expected = 0;
    for (const auto& layer : m.layers) {
        const auto& q = std::get<QuantizedLinear>(layer.weight);
        expected += q.rows() * q.trainable_dims.size() + layer.bias.size();
    }
    EXPECT_EQ(trainable_parameter_count(m, TuneMode::OutlierDims), expected);

    const ToyModel a = model_for(TuneMode::AlphaOnly, 1); // odd seed: per-row groups
    std::size_t alpha_expected = 0;
    for (const auto& layer : a.layers) {
        alpha_expected += std::get<QuantizedLinear>(layer.weight).alphas.size() + layer.bias.size();
    }
    EXPECT_EQ(trainable_parameter_count(a, TuneMode::AlphaOnly), alpha_expected);

    const ToyModel d = model_for(TuneMode::FullFT, 1);
    EXPECT_EQ(trainable_parameter_count(d, TuneMode::FullFT), 5U * 4 + 4 + 4 * 3 + 3 + 3 * 2 + 2);
}

TEST(QuantizedLinear, FrozenFraction)
{
    const Matrix w = gen_gaussian_with_outliers({16, 200, 0.0, 1.0, 0.0, 10.0, 3});
    const QuantizedTensor base = quantize(w, {4, Strategy::OutlierAware, Granularity::PerTensor});
    const QuantizedLinear q(base, random_dims(16, 200, 2, 1));
    EXPECT_DOUBLE_EQ(q.frozen_fraction(), 1.0 - 2.0 / 200.0);
    EXPECT_GE(q.frozen_fraction(), 0.99);
    EXPECT_THROW(QuantizedLinear(base, DimSelection{{3, 1}, 2, 16, 200}), Error);
    EXPECT_THROW(QuantizedLinear(base, DimSelection{{200}, 1, 16, 200}), Error);
}

TEST(QuantizedLinear, TrainableColumnsStartDequantized)
{
    const Matrix w = gen_gaussian_with_outliers({8, 12, 0.0, 1.0, 0.0, 10.0, 5});
    const QuantizedTensor base = quantize(w, {2, Strategy::MinMax, Granularity::PerRow});
    const QuantizedLinear q(base, DimSelection{{2, 7}, 2, 8, 12});
    const Matrix d = dequantize(base);
    for (std::size_t r = 0; r < 8; ++r) {
        EXPECT_EQ(q.trainable_values[r * 2 + 0], d(r, 2));
        EXPECT_EQ(q.trainable_values[r * 2 + 1], d(r, 7));
    }
}

TEST(Sgd, PlainStep)
{
    ToyModel m = model_for(TuneMode::FullFT, 2);
    const ToyModel before = m;
    const Batch x = random_batch(4, 5, 1);
    const Batch y = random_batch(4, 2, 2);
    const Gradients g = backward(m, forward(m, x), y, TuneMode::FullFT);
    sgd_step(m, g, TuneMode::FullFT, 0.1);
    ToyModel copy = before;
    const auto flat = g.flat();
    const auto ps = trainable_parameters(copy, TuneMode::FullFT);
    const auto after = trainable_parameters(m, TuneMode::FullFT);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT_EQ(*after[i], *ps[i] - 0.1 * flat[i]);
    }
}

TEST(Sgd, AlphaOnlyNeverTouchesCodesOrZeros)
{
    ToyModel m = model_for(TuneMode::AlphaOnly, 3);
    const ToyModel before = m;
    const Batch x = random_batch(16, 5, 1);
    const Batch y = random_batch(16, 2, 2);
    for (int step = 0; step < 50; ++step) {
        sgd_step(m, backward(m, forward(m, x), y, TuneMode::AlphaOnly), TuneMode::AlphaOnly, 0.1);
    }
    bool alpha_moved = false;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const auto& q0 = std::get<QuantizedLinear>(before.layers[l].weight);
        const auto& q1 = std::get<QuantizedLinear>(m.layers[l].weight);
        EXPECT_EQ(q1.base.packed(), q0.base.packed());
        EXPECT_EQ(q1.base.params().zeros, q0.base.params().zeros);
        EXPECT_EQ(q1.current_base().packed(), q0.base.packed());
        EXPECT_EQ(q1.current_base().params().zeros, q0.base.params().zeros);
        alpha_moved = alpha_moved || q1.alphas != q0.alphas;
        for (double a : q1.alphas) {
            EXPECT_GT(a, 0.0);
        }
    }
    EXPECT_TRUE(alpha_moved);
    EXPECT_LT(loss_of(m, x, y), loss_of(before, x, y));
}

TEST(RandomDenseModel, InitScale)
{
    const ToyModel m = random_dense_model({400, 300}, 2.0, 1);
    const auto& d = std::get<DenseLinear>(m.layers[0].weight);
    double ss = 0.0;
    for (double w : d.weight) {
        ss += w * w;
    }
    EXPECT_NEAR(ss / d.weight.size(), 4.0 / 400.0, 0.05 * 4.0 / 400.0);
    for (double b : m.layers[0].bias) {
        EXPECT_EQ(b, 0.0);
    }
    EXPECT_THROW(random_dense_model({4}, 1.0, 1), Error);
}

TEST(QuantizeModel, ShapeChecks)
{
    const ToyModel m = random_dense_model({3, 4, 2}, 1.0, 1);
    const auto w = layer_weights(m);
    const QuantizedTensor good0 = quantize(w[0], {4, Strategy::MinMax, Granularity::PerTensor});
    const QuantizedTensor good1 = quantize(w[1], {4, Strategy::MinMax, Granularity::PerTensor});
    const DimSelection e0{{}, 0, 4, 3};
    const DimSelection e1{{}, 0, 2, 4};
    EXPECT_NO_THROW(quantize_model(m, {good0, good1}, {e0, e1}));
    EXPECT_THROW(quantize_model(m, {good0}, {e0}), Error);
    EXPECT_THROW(quantize_model(m, {good1, good0}, {e0, e1}), Error);
}
