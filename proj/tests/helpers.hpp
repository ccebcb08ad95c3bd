// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test utilities: tolerant comparisons, random fills and small model
// configs.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "hlm/model_config.hpp"
#include "hlm/tensor.hpp"

namespace hlm_test {

using hlm::i64;

// |a - b| <= rel * max(|a|, |b|) + abs_floor
inline bool close(double a, double b, double rel, double abs_floor = 1e-12) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

inline double max_abs(const std::vector<float>& v) {
    double m = 0.0;
    for (float x : v) m = std::max(m, static_cast<double>(std::abs(x)));
    return m;
}

// Largest elementwise deviation scaled against the reference tensor's
// magnitude: max |a_i - b_i| / (||b||_inf + eps).
inline double scaled_max_err(const std::vector<float>& a, const std::vector<float>& b) {
    double scale = max_abs(b) + 1e-12;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / scale);
    return worst;
}

inline hlm::ModelConfig desk_config() {
    hlm::ModelConfig m;
    m.layers = 4;
    m.hidden = 32;
    m.ffn = 64;
    m.vocab = 32;
    m.seq = 16;
    m.batch = 2;
    m.k_ckpt = 2;
    return m;
}

inline hlm::ModelConfig tiny_config() {
    hlm::ModelConfig m;
    m.layers = 2;
    m.hidden = 8;
    m.ffn = 16;
    m.vocab = 11;
    m.seq = 4;
    m.batch = 1;
    m.k_ckpt = 1;
    return m;
}

template <typename T>
void fill_normal(std::vector<T>& v, unsigned seed, T std_dev = T(1)) {
    hlm::Rng rng(seed);
    for (auto& x : v) x = static_cast<T>(rng.normal()) * std_dev;
}

}  // namespace hlm_test
