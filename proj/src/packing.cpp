// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/packing.hpp"

#include "qtune/error.hpp"

#include <string>

namespace qtune {

namespace {

void check_bits(int bits)
{
    if (bits < 1 || bits > 8) {
        throw Error("bit-width must be in [1, 8], got " + std::to_string(bits));
    }
}

} // namespace

std::size_t packed_size(std::size_t count, int bits)
{
    check_bits(bits);
    return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits)
{
    check_bits(bits);
    const unsigned max_code = (1U << bits) - 1U;
    std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
    std::size_t bit_pos = 0;
    for (std::uint8_t code : codes) {
        if (code > max_code) {
            throw Error("code " + std::to_string(code) + " out of range for " + std::to_string(bits) + "-bit packing");
        }
        // A code may straddle two bytes when bits does not divide 8.
        const std::size_t byte = bit_pos / 8;
        const unsigned shift = bit_pos % 8;
        const unsigned wide = static_cast<unsigned>(code) << shift;
        out[byte] |= static_cast<std::uint8_t>(wide & 0xFFU);
        if (shift + bits > 8) {
            out[byte + 1] |= static_cast<std::uint8_t>(wide >> 8);
        }
        bit_pos += bits;
    }
    return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes, std::size_t count, int bits)
{
    if (bytes.size() < packed_size(count, bits)) {
        throw Error("packed buffer too short: need " + std::to_string(packed_size(count, bits)) + " bytes, have " +
                    std::to_string(bytes.size()));
    }
    const unsigned mask = (1U << bits) - 1U;
    std::vector<std::uint8_t> out(count);
    std::size_t bit_pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t byte = bit_pos / 8;
        const unsigned shift = bit_pos % 8;
        unsigned wide = bytes[byte];
        if (shift + bits > 8) {
            wide |= static_cast<unsigned>(bytes[byte + 1]) << 8;
        }
        out[i] = static_cast<std::uint8_t>((wide >> shift) & mask);
        bit_pos += bits;
    }
    return out;
}

bool padding_is_clear(std::span<const std::uint8_t> bytes, std::size_t count, int bits)
{
    const std::size_t used_bits = count * static_cast<std::size_t>(bits);
    const std::size_t need = packed_size(count, bits);
    if (bytes.size() < need || used_bits % 8 == 0) {
        return true;
    }
    const unsigned used_in_last = used_bits % 8;
    return (bytes[need - 1] >> used_in_last) == 0;
}

} // namespace qtune
