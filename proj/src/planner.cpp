// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/planner.hpp"

#include <cmath>

#include "hlm/flop_model.hpp"

namespace hlm {

DeviceBoundReport device_bound(const ModelConfig& m, Dtype dtype) {
    const ArenaFootprint fp = arena_footprint(m, dtype);
    DeviceBoundReport r;
    r.stream_bufs = 2 * fp.stream_buf;
    r.stack = fp.stack;
    r.anchors = fp.anchors_total();
    r.workspace = fp.workspace;
    return r;
}

StreamingVolume streaming_volume_measured(const ModelConfig& m, Dtype dtype) {
    const i64 e = static_cast<i64>(dtype_size(dtype));
    const i64 n_table = m.embed_params();
    const i64 n_blocks = m.layers * m.block_params();
    StreamingVolume v;
    v.h2d = e * (2 * n_table + 3 * n_blocks);
    v.d2h = e * (2 * n_table + n_blocks);
    return v;
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::FEASIBLE: return "FEASIBLE";
        case Verdict::HOST_BOUND: return "HOST_BOUND";
        case Verdict::DEVICE_BOUND: return "DEVICE_BOUND";
        case Verdict::TRANSFER_BOUND: return "TRANSFER_BOUND";
    }
    return "?";
}

PlanReport feasibility(const ModelConfig& m, const HardwareConfig& hw, Dtype dtype,
                       double slack, i64 n_slab) {
    m.validate();
    hw.validate();
    PlanReport r;
    r.slack = slack;
    r.params = m.total_params();
    r.p_max_bytes = stream_buf_bytes(m, dtype);
    r.m_cpu_min = min_host_bytes(r.params);
    r.m_cpu_est = host_bytes_estimate(r.params, n_slab * slab_capacity_bytes(m, dtype),
                                      r.p_max_bytes);
    r.m_gpu = device_bound(m, dtype);
    const i64 p_bytes = r.params * static_cast<i64>(dtype_size(dtype));
    r.vol_ideal = streaming_volume_ideal(p_bytes);
    r.vol_measured = streaming_volume_measured(m, dtype);
    r.t_comp_s = static_cast<double>(step_total_flops(m)) / hw.device_flops;

    const double per_dir_ideal =
        static_cast<double>(std::max(r.vol_ideal.h2d, r.vol_ideal.d2h)) / hw.pcie_bytes_per_s;
    const double per_dir_measured =
        static_cast<double>(std::max(r.vol_measured.h2d, r.vol_measured.d2h)) /
        hw.pcie_bytes_per_s;
    r.eq_global_ratio = per_dir_ideal / (slack * r.t_comp_s);
    r.eq_global_ratio_measured = per_dir_measured / (slack * r.t_comp_s);
    r.global_overlap_ok = r.eq_global_ratio <= 1.0;

    const i64 tokens = m.batch * m.seq;
    const double t_block =
        static_cast<double>(fwd_flops(m.block_params(), tokens)) / hw.device_flops;
    const double block_xfer =
        static_cast<double>(m.block_params() * static_cast<i64>(dtype_size(dtype))) /
        hw.pcie_bytes_per_s;
    r.layer_overlap_ok = true;
    for (i64 i = 1; i <= m.layers; ++i) {
        LayerOverlap lo;
        lo.layer = i;
        lo.xfer_s = block_xfer;
        lo.comp_s = t_block;   // neighbouring layers are uniform blocks
        lo.ratio = lo.xfer_s / (slack * lo.comp_s);
        lo.hidden = lo.ratio <= 1.0;
        if (!lo.hidden) r.layer_overlap_ok = false;
        r.overlap.push_back(lo);
    }

    if (static_cast<double>(r.m_cpu_est.total) > hw.host_bytes)
        r.verdict = Verdict::HOST_BOUND;
    else if (static_cast<double>(r.m_gpu.total()) > hw.device_bytes)
        r.verdict = Verdict::DEVICE_BOUND;
    else if (!r.global_overlap_ok || !r.layer_overlap_ok)
        r.verdict = Verdict::TRANSFER_BOUND;
    else
        r.verdict = Verdict::FEASIBLE;
    return r;
}

std::vector<ScaleRow> scaling_report(const ModelConfig& base, SweepKind kind,
                                     const std::vector<double>& multipliers,
                                     const HardwareConfig* hw, Dtype dtype, double slack) {
    std::vector<ScaleRow> rows;
    for (double mult : multipliers) {
        ModelConfig m = base;
        if (kind == SweepKind::Depth) {
            m.layers = static_cast<i64>(std::llround(static_cast<double>(base.layers) * mult));
        } else {
            m.hidden = static_cast<i64>(std::llround(static_cast<double>(base.hidden) * mult));
            m.ffn = static_cast<i64>(std::llround(static_cast<double>(base.ffn) * mult));
        }
        if (m.k_ckpt > m.layers) m.k_ckpt = m.layers;
        m.validate();
        ScaleRow row;
        row.multiplier = mult;
        row.layers = m.layers;
        row.hidden = m.hidden;
        row.ffn = m.ffn;
        row.params = m.total_params();
        row.p_max_bytes = stream_buf_bytes(m, dtype);
        row.m_cpu_min = min_host_bytes(row.params);
        const DeviceBoundReport db = device_bound(m, dtype);
        row.device_core = db.core();
        row.device_anchors = db.anchors;
        row.device_total = db.total();
        if (hw) {
            const PlanReport pr = feasibility(m, *hw, dtype, slack);
            row.layer_overlap_ok = pr.layer_overlap_ok;
            row.device_oom = static_cast<double>(row.device_total) > hw->device_bytes;
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace hlm
