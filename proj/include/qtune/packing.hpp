// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qtune {

/// Bytes needed for `count` codes of `bits` each: ceil(count * bits / 8).
std::size_t packed_size(std::size_t count, int bits);

/// Packs codes least-significant bits first within each byte, in code order.
/// The final partial byte is zero-padded. Codes must lie in [0, 2^bits - 1].
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int bits);

/// True when every bit after the last code in the final byte is zero.
bool padding_is_clear(std::span<const std::uint8_t> bytes, std::size_t count, int bits);

} // namespace qtune
