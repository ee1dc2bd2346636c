// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qtune/quantizer.hpp"
#include "qtune/tensor.hpp"
#include "qtune/toy_model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace qtune {

// Tensor container layout, all multi-byte fields little-endian:
//
//   "PQTN" | version u16 (= 1) | tensor count u32
//   per tensor:
//     name length u16 | name bytes (UTF-8)
//     dtype u8 (0 = float32, 1 = quantized) | rank u8 | dims u64 x rank
//     float32:   value f32 x elements
//     quantized: bits u8 | granularity u8 (0 tensor, 1 row) | groups u32
//                alpha f32 x groups | zero u16 x groups
//                packed codes, ceil(elements * bits / 8) bytes
//
// Tensors are rank 1 (read as 1 x n) or rank 2. Nothing may follow the last tensor.

inline constexpr std::uint16_t kContainerVersion = 1;

using TensorValue = std::variant<Matrix, QuantizedTensor>;

struct NamedTensor {
    std::string name;
    TensorValue value;

    bool operator==(const NamedTensor&) const = default;
};

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_container(std::span<const std::uint8_t> bytes);

/// Writes via a temporary file and rename.
void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// layer{n}.weight (quantized base with current alphas, or float32),
/// layer{n}.bias, and for quantized layers with a selection layer{n}.dims
/// and layer{n}.trainable. n counts from 1 at the bottom layer.
std::vector<NamedTensor> model_tensors(const ToyModel& model);

} // namespace qtune
