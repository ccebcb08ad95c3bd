// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form feasibility analysis: host-memory minima, device-memory
// bounds, per-iteration streaming volumes, bandwidth overlap conditions and
// depth/width scaling tables. Formulas are the same ones the live
// allocators charge, so plan output equals measurement exactly.

#pragma once

#include <string>
#include <vector>

#include "hlm/footprint.hpp"
#include "hlm/model_config.hpp"

namespace hlm {

// Minimum persistent host bytes for P parameters: BF16 weights + BF16
// gradients + two FP32 moments = 12 bytes per parameter.
inline i64 min_host_bytes(i64 params) { return 12 * params; }

struct HostEstimate {
    i64 persistent = 0;
    i64 slabs = 0;
    i64 staging = 0;
    i64 total = 0;
};

inline HostEstimate host_bytes_estimate(i64 params, i64 slab_pool_bytes, i64 p_max_bytes) {
    HostEstimate e;
    e.persistent = min_host_bytes(params);
    e.slabs = slab_pool_bytes;
    e.staging = 2 * p_max_bytes;
    e.total = e.persistent + e.slabs + e.staging;
    return e;
}

// Device bound, itemized. The anchor term is this artifact's extension
// beyond the 2*P_max + K*A_max + W form: anchors coexist until their block's
// backward completes, so they are charged explicitly.
struct DeviceBoundReport {
    i64 stream_bufs = 0;   // 2 * P_max
    i64 stack = 0;         // K * A_max
    i64 anchors = 0;       // (ceil(L/K) + 1) * A_ckpt
    i64 workspace = 0;     // W
    i64 core() const { return stream_bufs + stack + workspace; }
    i64 total() const { return core() + anchors; }
};

DeviceBoundReport device_bound(const ModelConfig& m, Dtype dtype);

struct StreamingVolume {
    i64 h2d = 0;
    i64 d2h = 0;
};

// Idealized per-iteration movement: one parameter stream down, one gradient
// stream back.
inline StreamingVolume streaming_volume_ideal(i64 p_bytes) { return {p_bytes, p_bytes}; }

// What the engine actually moves: block weights stream three times (forward,
// recompute, backward), the embedding and head once each; every tile's
// gradient returns once (the tied table returns twice, once per consumer).
StreamingVolume streaming_volume_measured(const ModelConfig& m, Dtype dtype);

enum class Verdict { FEASIBLE = 0, HOST_BOUND = 1, DEVICE_BOUND = 2, TRANSFER_BOUND = 3 };
const char* verdict_name(Verdict v);

struct LayerOverlap {
    i64 layer = 0;
    double xfer_s = 0.0;
    double comp_s = 0.0;    // neighbour-layer compute available to hide the transfer
    double ratio = 0.0;     // xfer / (slack * comp); hidden iff <= 1
    bool hidden = false;
};

struct PlanReport {
    i64 params = 0;
    i64 p_max_bytes = 0;
    i64 m_cpu_min = 0;
    HostEstimate m_cpu_est;
    DeviceBoundReport m_gpu;
    StreamingVolume vol_ideal;
    StreamingVolume vol_measured;
    double t_comp_s = 0.0;
    double eq_global_ratio = 0.0;      // max(V/B) / (slack * T_comp), ideal volumes
    double eq_global_ratio_measured = 0.0;
    bool global_overlap_ok = false;
    std::vector<LayerOverlap> overlap; // per transformer block layer
    bool layer_overlap_ok = false;
    Verdict verdict = Verdict::FEASIBLE;
    double slack = 1.0;
};

PlanReport feasibility(const ModelConfig& m, const HardwareConfig& hw,
                       Dtype dtype = Dtype::BF16, double slack = 1.0, i64 n_slab = 12);

enum class SweepKind { Depth, Width };

struct ScaleRow {
    double multiplier = 1.0;
    i64 layers = 0;
    i64 hidden = 0;
    i64 ffn = 0;
    i64 params = 0;
    i64 p_max_bytes = 0;
    i64 m_cpu_min = 0;
    i64 device_core = 0;      // depth-invariant bound: 2*P_max + K*A_max + W
    i64 device_anchors = 0;
    i64 device_total = 0;
    bool layer_overlap_ok = false;
    bool device_oom = false;  // against hw device budget, when provided
};

std::vector<ScaleRow> scaling_report(const ModelConfig& base, SweepKind kind,
                                     const std::vector<double>& multipliers,
                                     const HardwareConfig* hw = nullptr,
                                     Dtype dtype = Dtype::BF16, double slack = 1.0);

}  // namespace hlm
