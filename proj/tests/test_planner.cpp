// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "hlm/engine.hpp"
#include "hlm/planner.hpp"
#include "helpers.hpp"

using namespace hlm;
using hlm_test::close;

namespace {

// Rates proportioned so a desk-scale batch has enough arithmetic intensity
// to hide its own transfers: hiding needs tokens >= device_flops / B_pcie.
HardwareConfig roomy_hw() {
    HardwareConfig hw;
    hw.host_bytes = 1e12;
    hw.device_bytes = 1e11;
    hw.pcie_bytes_per_s = 26e9;
    hw.device_flops = 5e11;
    return hw;
}

ModelConfig qwen7b() {
    ModelConfig m;
    m.layers = 28;
    m.hidden = 3584;
    m.ffn = 18944;
    m.vocab = 151936;
    m.seq = 512;
    m.batch = 1;
    m.k_ckpt = 4;
    m.tie_embeddings = true;
    return m;
}

}  // namespace

TEST_CASE("host estimate equals the live allocator ledger") {
    ModelConfig m = hlm_test::desk_config();
    auto store = build_store(m, 3, Dtype::BF16);
    SlabPool pool(12, slab_capacity_bytes(m, Dtype::BF16));
    StagingBuffer a(stream_buf_bytes(m, Dtype::BF16)), b(stream_buf_bytes(m, Dtype::BF16));
    const HostBytesReport live = host_bytes_report(*store, pool, a, b);
    const HostEstimate est = host_bytes_estimate(
        store->total_params(), pool.pool_bytes(), stream_buf_bytes(m, Dtype::BF16));
    CHECK(est.persistent == live.persistent);
    CHECK(est.slabs == live.slabs);
    CHECK(est.staging == live.staging);
    CHECK(est.total == live.total);
    // Degenerate pools collapse to the minimum.
    CHECK(host_bytes_estimate(1000, 0, 0).total == min_host_bytes(1000));
}

TEST_CASE("device bound equals the arena footprint for many configs") {
    for (i64 L : {2, 4, 8}) {
        for (i64 K : {1, 2}) {
            ModelConfig m = hlm_test::desk_config();
            m.layers = L;
            m.k_ckpt = K;
            DeviceArena arena(m, Dtype::BF16);
            const DeviceBoundReport db = device_bound(m, Dtype::BF16);
            CHECK(db.total() == arena.footprint().total());
            CHECK(db.core() == arena.footprint().core_total());
            CHECK(db.anchors == arena.footprint().anchors_total());
        }
    }
}

TEST_CASE("device bound is independent of depth outside the anchor region") {
    ModelConfig a = hlm_test::desk_config();
    a.layers = 8;
    a.k_ckpt = 2;
    ModelConfig b = a;
    b.layers = 32;   // same K: the core bound cannot move
    const auto da = device_bound(a, Dtype::BF16);
    const auto db = device_bound(b, Dtype::BF16);
    CHECK(da.core() == db.core());
    CHECK(db.anchors > da.anchors);
    // Scaling K with depth keeps the anchor region fixed instead.
    ModelConfig c = a;
    c.layers = 32;
    c.k_ckpt = 8;
    CHECK(device_bound(c, Dtype::BF16).anchors == da.anchors);
    CHECK(device_bound(c, Dtype::BF16).stream_bufs == da.stream_bufs);
    CHECK(device_bound(c, Dtype::BF16).workspace == da.workspace);
    // K = 1 minimizes the recompute stack term.
    ModelConfig k1 = a;
    k1.k_ckpt = 1;
    CHECK(device_bound(k1, Dtype::BF16).stack < da.stack);
}

TEST_CASE("streaming volumes: idealized (2P, 2P) and measured against the engine") {
    ModelConfig m = hlm_test::desk_config();
    auto store = build_store(m, 3, Dtype::BF16);
    const i64 p_bytes = 2 * store->total_params();
    const StreamingVolume ideal = streaming_volume_ideal(p_bytes);
    CHECK(ideal.h2d == p_bytes);
    CHECK(ideal.d2h == p_bytes);
    CHECK(streaming_volume_ideal(0).h2d == 0);

    DeviceArena arena(m, Dtype::BF16);
    Engine engine(*store, arena, HyperParams{});
    Rng rng(5);
    const StepResult res = engine.train_step(make_copy_task_batch(m, rng));
    const StreamingVolume measured = streaming_volume_measured(m, Dtype::BF16);
    CHECK(res.h2d_bytes == measured.h2d);
    CHECK(res.d2h_bytes == measured.d2h);
    CHECK(measured.h2d > ideal.h2d);   // recompute re-streams block weights
}

TEST_CASE("per-direction transfer time for a 14B model at 26 GB/s is about 1.077 s") {
    const i64 p = 14000000000LL;
    const StreamingVolume ideal = streaming_volume_ideal(2 * p);
    const double per_dir = static_cast<double>(ideal.h2d) / 26e9;
    CHECK(close(per_dir, 1.077, 1e-3));
}

TEST_CASE("block parameter walk approximates the 7B family config") {
    ModelConfig m = qwen7b();
    const i64 per_block = m.block_params();
    CHECK(per_block == 4 * m.hidden * m.hidden + 3 * m.hidden * m.ffn + 2 * m.hidden);
    const i64 total = m.total_params();
    CHECK(std::abs(static_cast<double>(total) - 7e9) / 7e9 < 0.10);
}

TEST_CASE("verdicts trip in order: host, device, transfer, feasible") {
    ModelConfig m = hlm_test::desk_config();
    HardwareConfig hw = roomy_hw();

    HardwareConfig tiny_host = hw;
    tiny_host.host_bytes = static_cast<double>(min_host_bytes(m.total_params())) - 1;
    CHECK(feasibility(m, tiny_host).verdict == Verdict::HOST_BOUND);

    HardwareConfig tiny_dev = hw;
    tiny_dev.device_bytes = 1024;
    CHECK(feasibility(m, tiny_dev).verdict == Verdict::DEVICE_BOUND);

    HardwareConfig slow_bus = hw;
    slow_bus.pcie_bytes_per_s = 1.0;
    CHECK(feasibility(m, slow_bus).verdict == Verdict::TRANSFER_BOUND);

    CHECK(feasibility(m, hw).verdict == Verdict::FEASIBLE);
}

TEST_CASE("FEASIBLE verdicts are sound: the engine runs inside the planned budget") {
    ModelConfig m = hlm_test::desk_config();
    const PlanReport r = feasibility(m, roomy_hw());
    REQUIRE(r.verdict == Verdict::FEASIBLE);
    auto store = build_store(m, 3, Dtype::BF16);
    DeviceArena arena(m, Dtype::BF16, r.m_gpu.total());   // hard cap at the bound
    Engine engine(*store, arena, HyperParams{});
    Rng rng(4);
    CHECK_NOTHROW(engine.train_step(make_copy_task_batch(m, rng)));
}

TEST_CASE("depth sweep keeps the depth-invariant device bound constant") {
    ModelConfig base = qwen7b();
    const std::vector<double> mults = {1.0, 1.5, 2.0, 3.0, 132.0 / 28.0, 180.0 / 28.0};
    const auto rows = scaling_report(base, SweepKind::Depth, mults);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].layers == 28);
    CHECK(rows[1].layers == 42);
    CHECK(rows[2].layers == 56);
    CHECK(rows[3].layers == 84);
    CHECK(rows[4].layers == 132);
    CHECK(rows[5].layers == 180);
    for (const auto& row : rows) {
        CHECK(row.device_core == rows[0].device_core);
        CHECK(row.hidden == base.hidden);
    }
    CHECK(rows.back().params > 3 * rows.front().params);
}

TEST_CASE("width sweep echoes the configured widths and grows quadratically") {
    ModelConfig base = qwen7b();
    base.layers = 4;
    base.k_ckpt = 4;
    base.vocab = 32000;   // keep blocks, not the vocab table, the widest tile
    HardwareConfig hw = roomy_hw();
    hw.device_bytes = 8e9;   // fixed synthetic budget for the OOM threshold
    const std::vector<double> mults = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    const auto rows = scaling_report(base, SweepKind::Width, mults, &hw);
    REQUIRE(rows.size() == 9);
    CHECK(rows[0].hidden == 3584);
    CHECK(rows[0].ffn == 18944);
    CHECK(rows[1].hidden == 5376);
    CHECK(rows[1].ffn == 28416);
    CHECK(rows[2].hidden == 7168);
    CHECK(rows[2].ffn == 37888);
    const double growth = static_cast<double>(rows[2].p_max_bytes) /
                          static_cast<double>(rows[0].p_max_bytes);
    CHECK(growth > 3.6);
    CHECK(growth < 4.4);
    // A documented OOM threshold exists and is monotone under the budget.
    bool seen_oom = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].device_oom) seen_oom = true;
        if (seen_oom && i + 1 < rows.size()) CHECK(rows[i + 1].device_oom);
    }
    CHECK(!rows[0].device_oom);
    CHECK(seen_oom);
}

TEST_CASE("memory outputs are monotone in every model dimension") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig base;
        base.layers = 1 + rng.uniform_int(6);
        base.hidden = 8 + 2 * rng.uniform_int(12);
        base.ffn = 8 + 2 * rng.uniform_int(24);
        base.vocab = 8 + rng.uniform_int(40);
        base.seq = 4 + rng.uniform_int(12);
        base.batch = 1 + rng.uniform_int(4);
        base.k_ckpt = 1 + rng.uniform_int(base.layers);
        auto bump = [&](auto field) {
            ModelConfig grown = base;
            field(grown);
            const auto a = device_bound(base, Dtype::BF16);
            const auto b = device_bound(grown, Dtype::BF16);
            CHECK(b.total() >= a.total());
            CHECK(min_host_bytes(grown.total_params()) >= min_host_bytes(base.total_params()));
        };
        bump([](ModelConfig& m) { m.layers += 1; });
        bump([](ModelConfig& m) { m.hidden += 2; });
        bump([](ModelConfig& m) { m.ffn += 2; });
        bump([](ModelConfig& m) { m.vocab += 3; });
        bump([](ModelConfig& m) { m.seq += 1; });
        bump([](ModelConfig& m) { m.batch += 1; });
    }
}

TEST_CASE("eq-5 style global overlap ratio responds to compute speed") {
    ModelConfig m = hlm_test::desk_config();
    HardwareConfig hw = roomy_hw();
    const PlanReport fast = feasibility(m, hw);
    hw.device_flops *= 1e6;   // near-instant compute: transfers dominate
    const PlanReport starved = feasibility(m, hw);
    CHECK(starved.eq_global_ratio > fast.eq_global_ratio);
    CHECK(starved.verdict == Verdict::TRANSFER_BOUND);
}
