// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with an FP32 compute representation and an
// optional BF16 storage constraint.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hlm/bf16.hpp"

namespace hlm {

enum class Dtype : std::uint8_t { BF16 = 0, FP32 = 1 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::BF16 ? 2u : 4u; }

inline const char* dtype_name(Dtype d) { return d == Dtype::BF16 ? "bf16" : "fp32"; }

// Values live as FP32 in memory regardless of dtype; a BF16 tensor only
// narrows what values are admissible: every element must round-trip through
// bf16_round unchanged. Storing through set() enforces this.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::int64_t> shape, Dtype dtype = Dtype::FP32)
        : shape_(std::move(shape)), dtype_(dtype) {
        std::int64_t n = 1;
        for (std::int64_t d : shape_) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= d;
        }
        data_.assign(static_cast<std::size_t>(n), 0.0f);
    }

    static Tensor zeros(std::vector<std::int64_t> shape, Dtype dtype = Dtype::FP32) {
        return Tensor(std::move(shape), dtype);
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    Dtype dtype() const { return dtype_; }

    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    // Bytes this tensor occupies in its storage dtype.
    std::size_t byte_size() const { return data_.size() * dtype_size(dtype_); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float at(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    void set(std::int64_t i, float v) {
        data_[static_cast<std::size_t>(i)] = (dtype_ == Dtype::BF16) ? bf16_round(v) : v;
    }

    void fill(float v) {
        const float w = (dtype_ == Dtype::BF16) ? bf16_round(v) : v;
        for (float& e : data_) e = w;
    }

    // True when every element satisfies the dtype's storage constraint.
    bool storage_valid() const {
        if (dtype_ == Dtype::FP32) return true;
        for (float e : data_)
            if (bf16_round(e) != e && !(e != e)) return false;
        return true;
    }

private:
    std::vector<std::int64_t> shape_;
    Dtype dtype_ = Dtype::FP32;
    std::vector<float> data_;
};

// Deterministic RNG helpers. std::normal_distribution is not guaranteed to
// produce identical streams across standard libraries, so normal draws go
// through an explicit Box-Muller transform on mt19937 output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed)) {}

    float uniform() {
        // 24 random bits -> [0, 1)
        return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
    }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = 0.0f, u2 = 0.0f;
        do {
            u1 = uniform();
        } while (u1 <= 1e-12f);
        u2 = uniform();
        const float r = std::sqrt(-2.0f * std::log(u1));
        const float a = 6.2831853071795864769f * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Normal(0, std) resampled until within 2 standard deviations.
    float trunc_normal(float std_dev) {
        float v = 0.0f;
        do {
            v = normal() * std_dev;
        } while (v < -2.0f * std_dev || v > 2.0f * std_dev);
        return v;
    }

    std::uint32_t next_u32() { return gen_(); }

    std::int32_t uniform_int(std::int32_t n) {
        return static_cast<std::int32_t>(gen_() % static_cast<std::uint32_t>(n));
    }

private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace hlm
