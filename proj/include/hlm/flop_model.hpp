// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Matmul-dominated flop approximations used by the trace generator, the
// timing simulator and the planner: forward = 2 * params * tokens,
// backward = 2x forward, recompute = 1x forward.

#pragma once

#include "hlm/model_config.hpp"

namespace hlm {

inline std::int64_t fwd_flops(std::int64_t n_params, std::int64_t tokens) {
    return 2 * n_params * tokens;
}

inline std::int64_t bwd_flops(std::int64_t n_params, std::int64_t tokens) {
    return 2 * fwd_flops(n_params, tokens);
}

// Total compute volume of one training step: embedding and head run forward
// + backward, every block runs forward + recompute + backward.
inline std::int64_t step_total_flops(const ModelConfig& m) {
    const std::int64_t tokens = m.batch * m.seq;
    const std::int64_t n_e = m.embed_params();
    const std::int64_t n_b = m.block_params();
    std::int64_t total = fwd_flops(n_e, tokens) + bwd_flops(n_e, tokens);   // embed
    total += fwd_flops(n_e, tokens) + bwd_flops(n_e, tokens);               // head
    total += m.layers * (2 * fwd_flops(n_b, tokens) + bwd_flops(n_b, tokens));
    return total;
}

}  // namespace hlm
