// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-exact footprint formulas shared by the device arena, the host store
// and the planner. The planner quoting these formulas and the allocators
// living by them is what makes the plan-versus-ledger equality tests exact
// rather than approximate.

#pragma once

#include <cstdint>

#include "hlm/kernels.hpp"
#include "hlm/model_config.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

// One block's saved activations at FP32 compute precision: input, two
// normalized inputs, post-attention residual, attention probabilities and
// the two MLP pre-activations. This is A_max.
inline i64 block_act_floats(const ModelConfig& m) {
    return m.batch * m.seq * (4 * m.hidden + 2 * m.ffn + m.seq);
}

inline i64 block_act_bytes(const ModelConfig& m) { return 4 * block_act_floats(m); }

// One checkpoint anchor: a single (batch, seq, hidden) activation.
inline i64 anchor_slot_bytes(const ModelConfig& m) { return 4 * m.batch * m.seq * m.hidden; }

// Capacity of one weight staging / streaming buffer: the widest tile in the
// store dtype.
inline i64 stream_buf_bytes(const ModelConfig& m, Dtype dtype) {
    return m.max_tile_params() * static_cast<i64>(dtype_size(dtype));
}

// Capacity of one gradient slab: gradients are layer-shaped, so the bound is
// the same widest tile.
inline i64 slab_capacity_bytes(const ModelConfig& m, Dtype dtype) {
    return stream_buf_bytes(m, dtype);
}

// Fixed device workspace: rolling activations, the backward gradient carry,
// logits, kernel temporaries, one discard-mode activation slab, the FP32
// parameter-gradient accumulator and the outbound gradient staging area.
// Independent of depth by construction.
inline i64 workspace_bytes(const ModelConfig& m, Dtype dtype) {
    const i64 rows = m.batch * m.seq;
    i64 floats = 0;
    floats += 2 * rows * m.hidden;                       // h rolling pair
    floats += 2 * rows * m.hidden;                       // gradient carry pair
    floats += 2 * rows * m.vocab;                        // logits + d_logits
    floats += scratch_elems(m.batch, m.seq, m.hidden, m.ffn);
    floats += block_act_floats(m);                       // discard-mode acts
    floats += m.max_tile_params();                       // FP32 grad accumulator
    return 4 * floats + m.max_tile_params() * static_cast<i64>(dtype_size(dtype));
}

struct ArenaFootprint {
    i64 stream_buf = 0;     // per buffer
    i64 anchor_slot = 0;    // per anchor
    i64 anchor_slots = 0;   // ceil(L / K) + 1
    i64 stack = 0;          // K * A_max
    i64 workspace = 0;

    i64 anchors_total() const { return anchor_slots * anchor_slot; }
    // The depth-invariant portion: streaming buffers, recompute stack and
    // workspace.
    i64 core_total() const { return 2 * stream_buf + stack + workspace; }
    i64 total() const { return core_total() + anchors_total(); }
};

inline ArenaFootprint arena_footprint(const ModelConfig& m, Dtype dtype) {
    ArenaFootprint fp;
    fp.stream_buf = stream_buf_bytes(m, dtype);
    fp.anchor_slot = anchor_slot_bytes(m);
    fp.anchor_slots = m.anchor_capacity();
    fp.stack = m.k_ckpt * block_act_bytes(m);
    fp.workspace = workspace_bytes(m, dtype);
    return fp;
}

// Persistent host bytes per parameter: weights + gradients in the store
// dtype, two FP32 Adam moments.
inline i64 persistent_bytes_per_param(Dtype dtype) {
    return 2 * static_cast<i64>(dtype_size(dtype)) + 8;
}

}  // namespace hlm
