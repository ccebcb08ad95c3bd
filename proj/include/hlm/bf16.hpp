// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// BF16 storage format: round-to-nearest-even conversion to and from FP32.

#pragma once

#include <bit>
#include <cstdint>

namespace hlm {

// Converts an FP32 value to BF16 bits with round-to-nearest-even.
// Infinities pass through; NaN payloads are truncated but kept NaN.
inline std::uint16_t bf16_bits_from_f32(float x) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    const std::uint32_t exp = (bits >> 23) & 0xFFu;
    if (exp == 0xFFu) {
        std::uint16_t hi = static_cast<std::uint16_t>(bits >> 16);
        if ((bits & 0x7FFFFFu) != 0u) hi |= 0x0040u;
        return hi;
    }
    const std::uint32_t rounding_bias = 0x7FFFu + ((bits >> 16) & 1u);
    return static_cast<std::uint16_t>((bits + rounding_bias) >> 16);
}

inline float f32_from_bf16_bits(std::uint16_t hi) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(hi) << 16);
}

// Nearest BF16-representable value of x, returned widened back to FP32.
inline float bf16_round(float x) {
    return f32_from_bf16_bits(bf16_bits_from_f32(x));
}

}  // namespace hlm
