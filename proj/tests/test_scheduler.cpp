// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <queue>
#include <sstream>
#include <vector>

#include "hlm/engine.hpp"
#include "hlm/scheduler.hpp"
#include "helpers.hpp"
#include "sim_oracle.hpp"

using namespace hlm;

namespace {

using hlm_test::brute_force_makespan;
using hlm_test::kUnitTiming;
using hlm_test::synthetic_forward;

// Longest dependency-path lower bound, durations included.
double critical_path(const EventTrace& trace) {
    std::vector<double> best(trace.ops.size(), 0.0);
    double out = 0.0;
    for (const auto& op : trace.ops) {
        double start = 0.0;
        for (i64 d : op.deps) start = std::max(start, best[static_cast<std::size_t>(d)]);
        double dur = 0.0;
        switch (op.stream) {
            case StreamId::H2D:
            case StreamId::D2H: dur = static_cast<double>(op.bytes); break;
            case StreamId::Compute: dur = static_cast<double>(op.flops); break;
            case StreamId::Host: dur = static_cast<double>(op.params); break;
        }
        best[op.id] = start + dur;
        out = std::max(out, best[op.id]);
    }
    return out;   // in unit-rate microseconds
}

ModelConfig sched_config() {
    ModelConfig m = hlm_test::desk_config();
    m.layers = 6;
    m.k_ckpt = 3;
    return m;
}

}  // namespace

TEST_CASE("hand-checked makespans: one layer, then two with double buffering") {
    // One layer: transfer 2 then compute 3 -> 5.
    EventTrace t1 = synthetic_forward(1, 2, 2, 3);
    CHECK(simulate(t1, kUnitTiming).makespan_us == doctest::Approx(5.0));
    // Two layers: the second transfer hides under the first compute -> 8.
    EventTrace t2 = synthetic_forward(2, 2, 2, 3);
    CHECK(simulate(t2, kUnitTiming).makespan_us == doctest::Approx(8.0));
    CHECK(brute_force_makespan(t2, kUnitTiming) == doctest::Approx(8.0));
}

TEST_CASE("transfer hidden under compute: makespan = t_xfer + L * t_comp") {
    const i64 L = 32;
    EventTrace t = synthetic_forward(L, 2, 2, 3);
    const Timeline tl = simulate(t, kUnitTiming);
    CHECK(tl.makespan_us == doctest::Approx(2.0 + 3.0 * L));
    const ThroughputReport rep = throughput_report(tl);
    CHECK(rep.bound == StreamId::Compute);
    CHECK(rep.bubble_fraction < 0.05);
    CHECK(rep.busy_fraction[static_cast<int>(StreamId::Compute)] ==
          doctest::Approx(3.0 * L / (2.0 + 3.0 * L)));
}

TEST_CASE("bandwidth wall: makespan = L * t_xfer + t_comp when transfers dominate") {
    const i64 L = 16;
    EventTrace t = synthetic_forward(L, 2, 6, 3);   // t_xfer = 2 * t_comp
    const Timeline tl = simulate(t, kUnitTiming);
    CHECK(tl.makespan_us == doctest::Approx(6.0 * L + 3.0));
    CHECK(throughput_report(tl).bound == StreamId::H2D);
}

TEST_CASE("single buffer serializes; double buffering strictly helps") {
    const i64 L = 8;
    EventTrace one = synthetic_forward(L, 1, 2, 3);
    EventTrace two = synthetic_forward(L, 2, 2, 3);
    const double m1 = simulate(one, kUnitTiming).makespan_us;
    const double m2 = simulate(two, kUnitTiming).makespan_us;
    CHECK(m1 == doctest::Approx(5.0 * L));
    CHECK(m2 < m1);
    CHECK(brute_force_makespan(one, kUnitTiming) == doctest::Approx(m1));
}

TEST_CASE("infinite bandwidth collapses to serial compute time") {
    TimingModel fast = kUnitTiming;
    fast.pcie_bytes_per_s = 1e30;
    const i64 L = 8;
    EventTrace t = synthetic_forward(L, 2, 1000, 3);
    CHECK(simulate(t, fast).makespan_us == doctest::Approx(3.0 * L));
}

TEST_CASE("halving bandwidth in a transfer-bound pipeline doubles the transfer total") {
    const i64 L = 16;
    EventTrace t = synthetic_forward(L, 2, 10, 1);
    TimingModel half = kUnitTiming;
    half.pcie_bytes_per_s /= 2;
    const double base = simulate(t, kUnitTiming).makespan_us;
    const double slow = simulate(t, half).makespan_us;
    // Analytic bandwidth-bound estimate: makespan tracks the doubled
    // transfer total L * 2 * t_xfer within 2%.
    CHECK(std::abs(slow - 2.0 * L * 10.0) / (2.0 * L * 10.0) < 0.02);
    CHECK(slow > base);
}

TEST_CASE("pageable staging pays the penalty multiplier") {
    EventTrace t = synthetic_forward(1, 2, 4, 1);
    t.ops[0].pinned = false;
    const Timeline tl = simulate(t, kUnitTiming);   // penalty 1.0: no change
    CHECK(tl.makespan_us == doctest::Approx(5.0));
    TimingModel pen = kUnitTiming;
    pen.pageable_penalty = 2.5;
    CHECK(simulate(t, pen).makespan_us == doctest::Approx(11.0));
}

TEST_CASE("simulated makespan respects both lower bounds on real traces") {
    ModelConfig m = sched_config();
    const EventTrace trace = canonical_trace(m, Dtype::BF16, 1, 12, false);
    const Timeline tl = simulate(trace, kUnitTiming);
    double busy[kStreamCount] = {0, 0, 0, 0};
    for (const auto& op : trace.ops) {
        busy[static_cast<int>(op.stream)] +=
            static_cast<double>(op.bytes + op.flops + op.params);
    }
    for (double b : busy) CHECK(tl.makespan_us >= b - 1e-6);
    CHECK(tl.makespan_us >= critical_path(trace) - 1e-6);
}

TEST_CASE("simulation agrees with the brute-force oracle on full step traces") {
    for (i64 L : {2, 3, 4, 5, 6}) {
        ModelConfig m = sched_config();
        m.layers = L;
        m.k_ckpt = std::min<i64>(2, L);
        const EventTrace trace = canonical_trace(m, Dtype::BF16, 1, 4, false);
        const Timeline tl = simulate(trace, kUnitTiming);
        const double oracle_ms = brute_force_makespan(trace, kUnitTiming);
        CHECK(tl.makespan_us == doctest::Approx(oracle_ms).epsilon(1e-9));
    }
}

TEST_CASE("simulation is deterministic") {
    ModelConfig m = sched_config();
    const EventTrace trace = canonical_trace(m, Dtype::BF16, 2, 4, true);
    const Timeline a = simulate(trace, kUnitTiming);
    const Timeline b = simulate(trace, kUnitTiming);
    REQUIRE(a.ops.size() == b.ops.size());
    for (std::size_t i = 0; i < a.ops.size(); ++i) {
        CHECK(a.ops[i].t_start_us == b.ops[i].t_start_us);
        CHECK(a.ops[i].t_end_us == b.ops[i].t_end_us);
    }
}

TEST_CASE("gradient evacuation never delays the compute stream") {
    // Zeroing every gradient transfer must leave the compute timeline
    // untouched: evacuation runs behind recomputation, not in front of it.
    ModelConfig m = sched_config();
    EventTrace trace = canonical_trace(m, Dtype::BF16, 1, 12, false);
    const Timeline with_grads = simulate(trace, kUnitTiming);
    EventTrace no_grads = trace;
    for (auto& op : no_grads.ops)
        if (op.kind == OpKind::GradXfer) op.bytes = 0;
    const Timeline without = simulate(no_grads, kUnitTiming);
    for (std::size_t i = 0; i < trace.ops.size(); ++i) {
        if (trace.ops[i].stream != StreamId::Compute) continue;
        CHECK(with_grads.ops[i].t_end_us == doctest::Approx(without.ops[i].t_end_us));
    }
}

TEST_CASE("dependency cycles are rejected") {
    EventTrace t = synthetic_forward(2, 2, 1, 1);
    t.ops[0].deps.push_back(3);   // forward edge creating a cycle with FIFO order
    CHECK_THROWS_AS(simulate(t, kUnitTiming), ConfigError);
}

TEST_CASE("engine traces validate clean across shapes and modes") {
    for (i64 L : {2, 5, 6}) {
        for (i64 K : std::vector<i64>{1, 2, L}) {
            ModelConfig m = sched_config();
            m.layers = L;
            m.k_ckpt = K;
            auto store = build_store(m, 17, Dtype::BF16);
            DeviceArena arena(m, Dtype::BF16);
            EngineOptions opts;
            opts.n_slab = 3;
            Engine engine(*store, arena, HyperParams{}, opts);
            Rng rng(4);
            const StepResult res = engine.train_step(make_copy_task_batch(m, rng));
            const auto violations = validate_trace(res.trace);
            for (const auto& v : violations) {
                CAPTURE(v.op_id);
                CAPTURE(v.rule);
                CAPTURE(v.detail);
            }
            CHECK(violations.empty());
        }
    }
}

TEST_CASE("validator localizes seeded protocol violations") {
    ModelConfig m = sched_config();
    const EventTrace clean = canonical_trace(m, Dtype::BF16, 1, 4, false);
    REQUIRE(validate_trace(clean).empty());

    auto find_op = [&](OpKind kind, i64 layer, int skip = 0) -> i64 {
        for (const auto& op : clean.ops) {
            if (op.kind == kind && op.layer == layer) {
                if (skip-- > 0) continue;
                return op.id;
            }
        }
        REQUIRE(false);
        return -1;
    };
    auto has_rule_at = [](const std::vector<Violation>& vs, const std::string& rule, i64 op) {
        for (const auto& v : vs)
            if (v.rule == rule && v.op_id == op) return true;
        return false;
    };

    SUBCASE("dropped weights-ready dependency on a forward") {
        EventTrace t = clean;
        const i64 id = find_op(OpKind::Forward, 3);
        t.ops[static_cast<std::size_t>(id)].deps.clear();
        CHECK(has_rule_at(validate_trace(t), "weights-ready", id));
    }
    SUBCASE("dropped weights-ready dependency on a recompute") {
        EventTrace t = clean;
        const i64 id = find_op(OpKind::Recompute, 5);
        t.ops[static_cast<std::size_t>(id)].deps.clear();
        CHECK(has_rule_at(validate_trace(t), "weights-ready", id));
    }
    SUBCASE("gradient transfer without backward-done") {
        EventTrace t = clean;
        const i64 id = find_op(OpKind::GradXfer, 6);
        t.ops[static_cast<std::size_t>(id)].deps.clear();
        CHECK(has_rule_at(validate_trace(t), "backward-done", id));
    }
    SUBCASE("weight transfer ignoring buffer-free") {
        EventTrace t = clean;
        // The first backward-phase WeightXfer reuses a buffer consumed in
        // the forward; stripping its reader dependency breaks the rule.
        const i64 id = find_op(OpKind::WeightXfer, 2, /*skip=*/1);
        auto& deps = t.ops[static_cast<std::size_t>(id)].deps;
        REQUIRE(!deps.empty());
        deps.clear();
        CHECK(has_rule_at(validate_trace(t), "buffer-free", id));
    }
    SUBCASE("slab reused before accumulation") {
        EventTrace t = clean;
        const i64 a = find_op(OpKind::GradXfer, 6);
        const i64 b = find_op(OpKind::GradXfer, 5);
        t.ops[static_cast<std::size_t>(b)].slab = t.ops[static_cast<std::size_t>(a)].slab;
        CHECK(has_rule_at(validate_trace(t), "slab-discipline", b));
    }
    SUBCASE("accumulate of a FREE slab") {
        EventTrace t = clean;
        i64 accum_id = -1;
        for (const auto& op : t.ops)
            if (op.kind == OpKind::Accum) { accum_id = op.id; break; }
        REQUIRE(accum_id >= 0);
        t.ops[static_cast<std::size_t>(accum_id)].slab = 3;   // untouched slab
        CHECK(has_rule_at(validate_trace(t), "slab-discipline", accum_id));
    }
    SUBCASE("local backward order breaks LIFO") {
        EventTrace t = clean;
        const i64 a = find_op(OpKind::LocalBackward, 6);
        const i64 b = find_op(OpKind::LocalBackward, 5);
        std::swap(t.ops[static_cast<std::size_t>(a)].layer,
                  t.ops[static_cast<std::size_t>(b)].layer);
        const auto vs = validate_trace(t);
        CHECK(has_rule_at(vs, "stack-discipline", a));
    }
    SUBCASE("forward-pointing dependency is malformed") {
        EventTrace t = clean;
        t.ops[0].deps.push_back(5);
        CHECK(has_rule_at(validate_trace(t), "malformed", 0));
    }
}

TEST_CASE("per-tile optimizer updates overlap the next step's prefetch") {
    // Multi-step traces gate each tile's next weight transfer on its own
    // optimizer op when eager, or on the single end-of-step op otherwise;
    // the finer grain can only shorten the schedule.
    ModelConfig m = sched_config();
    TimingModel timing = kUnitTiming;
    timing.cpu_optim_rate = 50.0;   // make the optimizer expensive enough to matter
    const EventTrace lazy = canonical_trace(m, Dtype::BF16, 3, 12, false);
    const EventTrace eager = canonical_trace(m, Dtype::BF16, 3, 12, true);
    CHECK(validate_trace(lazy).empty());
    CHECK(validate_trace(eager).empty());
    const double lazy_ms = simulate(lazy, timing).makespan_us;
    const double eager_ms = simulate(eager, timing).makespan_us;
    CHECK(eager_ms <= lazy_ms);
    CHECK(eager_ms < lazy_ms);   // the desk shape leaves real overlap on the table
}

TEST_CASE("slab starvation shows up as accumulate-gated gradient transfers") {
    ModelConfig m = sched_config();
    const EventTrace roomy = canonical_trace(m, Dtype::BF16, 1, 12, false);
    const EventTrace starved = canonical_trace(m, Dtype::BF16, 1, 1, false);
    auto stalls = [](const EventTrace& t) {
        i64 n = 0;
        for (const auto& op : t.ops) {
            if (op.kind != OpKind::GradXfer) continue;
            for (i64 d : op.deps)
                if (t.ops[static_cast<std::size_t>(d)].kind == OpKind::Accum) ++n;
        }
        return n;
    };
    CHECK(stalls(roomy) == 0);
    CHECK(stalls(starved) > 0);
    CHECK(validate_trace(starved).empty());
}

TEST_CASE("trace JSONL round-trips") {
    ModelConfig m = sched_config();
    const EventTrace trace = canonical_trace(m, Dtype::BF16, 1, 4, false);
    const std::string text = trace_to_jsonl(trace);
    std::istringstream in(text);
    const EventTrace back = trace_from_jsonl(in);
    REQUIRE(back.ops.size() == trace.ops.size());
    CHECK(back.meta.n_slabs == trace.meta.n_slabs);
    for (std::size_t i = 0; i < trace.ops.size(); ++i) {
        CHECK(back.ops[i].stream == trace.ops[i].stream);
        CHECK(back.ops[i].kind == trace.ops[i].kind);
        CHECK(back.ops[i].bytes == trace.ops[i].bytes);
        CHECK(back.ops[i].deps == trace.ops[i].deps);
    }
    CHECK(trace_to_jsonl(back) == text);
}
