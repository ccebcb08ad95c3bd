// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// fails. Criteria pin exact formula reproduction, oracle equivalence and the
// pipeline/protocol invariants at fixed tolerances.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hlm/checkpoint.hpp"
#include "hlm/engine.hpp"
#include "hlm/oracle.hpp"
#include "hlm/planner.hpp"
#include "hlm/scheduler.hpp"
#include "hlm/trainer.hpp"
#include "../helpers.hpp"
#include "../sim_oracle.hpp"

using namespace hlm;
using hlm_test::brute_force_makespan;
using hlm_test::kUnitTiming;
using hlm_test::scaled_max_err;
using hlm_test::synthetic_forward;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] %2d. %s%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!ok) ++g_failures;
}

void run(int number, const std::string& name,
         const std::function<std::pair<bool, std::string>()>& fn) {
    try {
        auto [ok, detail] = fn();
        report(number, name, ok, detail);
    } catch (const std::exception& e) {
        report(number, name, false, std::string("exception: ") + e.what());
    }
}

std::vector<float> tile_grads_f32(const MasterStore& store, i64 logical_id) {
    const LayerTile& t = store.tile(logical_id);
    std::vector<float> out(static_cast<std::size_t>(t.n_params()));
    for (i64 i = 0; i < t.n_params(); ++i) out[static_cast<std::size_t>(i)] = t.load_grad(i);
    return out;
}

std::vector<float> flat_block_grads(const oracle::BlockTensors& b) {
    std::vector<float> out;
    auto app = [&](const std::vector<float>& v) { out.insert(out.end(), v.begin(), v.end()); };
    app(b.w_q); app(b.w_k); app(b.w_v); app(b.w_o);
    app(b.w_up); app(b.w_gate); app(b.w_down);
    app(b.norm1); app(b.norm2);
    return out;
}

Batch batch_for(const ModelConfig& m, unsigned seed) {
    Rng rng(seed);
    return make_copy_task_batch(m, rng);
}

double grad_step(MasterStore& store, DeviceArena& arena, const Batch& batch,
                 EngineOptions opts = {}) {
    opts.skip_optimizer = true;
    Engine engine(store, arena, HyperParams{}, opts);
    return engine.train_step(batch).loss;
}

ModelConfig copy_task_config() {
    ModelConfig m;
    m.layers = 4;
    m.hidden = 32;
    m.ffn = 64;
    m.vocab = 32;
    m.seq = 16;
    m.batch = 8;
    m.k_ckpt = 2;
    return m;
}

// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion_oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    struct Cfg { i64 L, h, f, V, K; bool tied; };
    const Cfg cfgs[] = {
        {2, 8, 16, 11, 1, false},  {3, 16, 32, 13, 2, false}, {5, 24, 48, 17, 4, false},
        {8, 32, 64, 19, 5, false}, {4, 8, 24, 11, 3, true},
    };
    double worst = 0.0;
    for (const Cfg& c : cfgs) {
        ModelConfig m;
        m.layers = c.L;
        m.hidden = c.h;
        m.ffn = c.f;
        m.vocab = c.V;
        m.seq = 8;
        m.batch = 2;
        m.k_ckpt = c.K;
        m.tie_embeddings = c.tied;
        auto store = build_store(m, 100 + static_cast<std::uint64_t>(c.L), Dtype::FP32);
        oracle::Params params = oracle::Params::from_store(*store);
        const Batch batch = batch_for(m, 7);
        DeviceArena arena(m, Dtype::FP32);
        const double engine_loss = grad_step(*store, arena, batch);
        const auto fb = oracle::oracle_forward_backward(params, batch);
        worst = std::max(worst, std::abs(engine_loss - fb.loss) /
                                    std::max(1.0, std::abs(static_cast<double>(fb.loss))));
        worst = std::max(worst, scaled_max_err(tile_grads_f32(*store, 0), fb.grads.embed));
        for (i64 l = 1; l <= m.layers; ++l)
            worst = std::max(
                worst, scaled_max_err(tile_grads_f32(*store, l),
                                      flat_block_grads(
                                          fb.grads.blocks[static_cast<std::size_t>(l - 1)])));
        if (!m.tie_embeddings)
            worst = std::max(worst, scaled_max_err(tile_grads_f32(*store, m.head_tile_id()),
                                                   fb.grads.head));
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream d;
    d << "worst rel err " << worst << ", " << secs << " s";
    return {worst < 1e-5 && secs < 30.0, d.str()};
}

std::pair<bool, std::string> criterion_k_invariance() {
    ModelConfig base = copy_task_config();
    base.layers = 6;
    const Batch batch = batch_for(base, 21);
    std::vector<std::vector<float>> reference;
    double worst = 0.0;
    std::vector<i64> ledgers;
    for (i64 k = 1; k <= base.layers; ++k) {
        ModelConfig m = base;
        m.k_ckpt = k;
        auto store = build_store(m, 42, Dtype::FP32);
        DeviceArena arena(m, Dtype::FP32);
        grad_step(*store, arena, batch);
        if (arena.snapshot().committed_total != device_bound(m, Dtype::FP32).total())
            return {false, "ledger != bound formula at K=" + std::to_string(k)};
        ledgers.push_back(arena.snapshot().committed_total);
        std::vector<std::vector<float>> grads;
        for (i64 l = 0; l < store->logical_tiles(); ++l)
            grads.push_back(tile_grads_f32(*store, l));
        if (reference.empty()) {
            reference = grads;
        } else {
            for (std::size_t l = 0; l < grads.size(); ++l)
                for (std::size_t i = 0; i < grads[l].size(); ++i)
                    worst = std::max(worst, static_cast<double>(std::abs(
                                                grads[l][i] - reference[l][i])));
        }
    }
    bool ledger_moves = false;
    for (i64 v : ledgers)
        if (v != ledgers.front()) ledger_moves = true;
    std::ostringstream d;
    d << "max grad delta across K " << worst;
    return {worst <= 1e-6 && ledger_moves, d.str()};
}

std::pair<bool, std::string> criterion_eq1() {
    if (min_host_bytes(100000000000LL) != 1200000000000LL) return {false, "100B != 1.2 TB"};
    if (min_host_bytes(300000000000LL) != 3600000000000LL) return {false, "300B != 3.6 TB"};
    for (bool tied : {false, true}) {
        ModelConfig m = copy_task_config();
        m.tie_embeddings = tied;
        auto store = build_store(m, 5, Dtype::BF16);
        if (store->persistent_bytes() != 12 * store->total_params())
            return {false, "live persistent != 12P"};
    }
    return {true, "12 bytes per parameter, aliases counted once"};
}

std::pair<bool, std::string> criterion_depth_independence() {
    ModelConfig a = copy_task_config();
    a.layers = 8;
    a.k_ckpt = 2;
    ModelConfig b = a;
    b.layers = 64;
    auto run_one = [&](const ModelConfig& m) {
        auto store = build_store(m, 3, Dtype::BF16);
        DeviceArena arena(m, Dtype::BF16);
        Engine engine(*store, arena, HyperParams{});
        const StepResult res = engine.train_step(batch_for(m, 4));
        return res.arena;
    };
    const ArenaSnapshot sa = run_one(a);
    const ArenaSnapshot sb = run_one(b);
    if (sa.step_peak_non_anchor != sb.step_peak_non_anchor)
        return {false, "non-anchor utilization peaks differ across depth"};
    if (sa.committed_core != sb.committed_core)
        return {false, "core region capacities differ across depth"};
    if (sa.committed_total != device_bound(a, Dtype::BF16).total() ||
        sb.committed_total != device_bound(b, Dtype::BF16).total())
        return {false, "total differs from the bound formula"};
    std::ostringstream d;
    d << "non-anchor peak " << sa.step_peak_non_anchor << " B at both L=8 and L=64";
    return {true, d.str()};
}

std::pair<bool, std::string> criterion_streaming_volume() {
    ModelConfig m = copy_task_config();
    auto store = build_store(m, 3, Dtype::BF16);
    DeviceArena arena(m, Dtype::BF16);
    Engine engine(*store, arena, HyperParams{});
    const StepResult res = engine.train_step(batch_for(m, 4));
    const StreamingVolume measured = streaming_volume_measured(m, Dtype::BF16);
    if (res.h2d_bytes != measured.h2d || res.d2h_bytes != measured.d2h)
        return {false, "instrumented counters do not match the formula"};
    const i64 p_bytes = 2 * store->total_params();
    const StreamingVolume ideal = streaming_volume_ideal(p_bytes);
    if (ideal.h2d != p_bytes || ideal.d2h != p_bytes)
        return {false, "ideal mode is not (2P, 2P)"};
    std::ostringstream d;
    d << "H2D " << res.h2d_bytes << " B, D2H " << res.d2h_bytes << " B, exact";
    return {true, d.str()};
}

std::pair<bool, std::string> criterion_pipeline_overlap() {
    {
        const i64 L = 32;
        const EventTrace t = synthetic_forward(L, 2, 2, 3);   // t_xfer <= t_comp
        const Timeline tl = simulate(t, kUnitTiming);
        const ThroughputReport rep = throughput_report(tl);
        const double ideal = 2.0 + 3.0 * L;
        if (rep.bubble_fraction >= 0.05) return {false, "bubble fraction >= 5%"};
        if (std::abs(tl.makespan_us - ideal) / ideal >= 0.02)
            return {false, "compute-bound makespan off by more than 2%"};
    }
    {
        const i64 L = 32;
        const EventTrace t = synthetic_forward(L, 2, 6, 3);   // t_xfer = 2 * t_comp
        const Timeline tl = simulate(t, kUnitTiming);
        const double ideal = 6.0 * L + 3.0;
        if (std::abs(tl.makespan_us - ideal) / ideal >= 0.02)
            return {false, "transfer-bound makespan off by more than 2%"};
    }
    for (i64 L = 2; L <= 6; ++L) {
        ModelConfig m = copy_task_config();
        m.layers = L;
        m.k_ckpt = std::min<i64>(3, L);
        const EventTrace trace = canonical_trace(m, Dtype::BF16, 1, 4, false);
        const double sim_ms = simulate(trace, kUnitTiming).makespan_us;
        const double oracle_ms = brute_force_makespan(trace, kUnitTiming);
        if (std::abs(sim_ms - oracle_ms) > 1e-6 * std::max(1.0, oracle_ms))
            return {false, "simulator disagrees with the list-schedule oracle at L=" +
                               std::to_string(L)};
    }
    return {true, "uniform pipelines exact; oracle agreement on L<=6"};
}

std::pair<bool, std::string> criterion_protocol_safety() {
    Rng rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        ModelConfig m;
        m.layers = 2 + rng.uniform_int(5);
        m.hidden = 8 + 8 * rng.uniform_int(3);
        m.ffn = 16 + 8 * rng.uniform_int(3);
        m.vocab = 8 + rng.uniform_int(24);
        m.seq = 4 + rng.uniform_int(8);
        m.batch = 1 + rng.uniform_int(3);
        m.k_ckpt = 1 + rng.uniform_int(static_cast<std::int32_t>(m.layers));
        m.tie_embeddings = rng.uniform_int(2) == 1;
        const Dtype dtype = rng.uniform_int(2) == 1 ? Dtype::BF16 : Dtype::FP32;
        auto store = build_store(m, static_cast<std::uint64_t>(1000 + trial), dtype);
        DeviceArena arena(m, dtype);
        EngineOptions opts;
        opts.n_slab = 1 + rng.uniform_int(12);
        opts.eager_optim = rng.uniform_int(2) == 1;
        Engine engine(*store, arena, HyperParams{}, opts);
        const StepResult res = engine.train_step(batch_for(m, static_cast<unsigned>(trial)));
        if (!validate_trace(res.trace).empty())
            return {false, "violation reported on a correct run (trial " +
                               std::to_string(trial) + ")"};
    }

    ModelConfig m = copy_task_config();
    m.layers = 6;
    m.k_ckpt = 3;
    const EventTrace clean = canonical_trace(m, Dtype::BF16, 1, 4, false);
    if (!validate_trace(clean).empty()) return {false, "canonical trace not clean"};
    auto find_op = [&](OpKind kind, i64 layer, int skip = 0) -> i64 {
        for (const auto& op : clean.ops)
            if (op.kind == kind && op.layer == layer && skip-- == 0) return op.id;
        return -1;
    };
    struct Mutation {
        std::string name;
        std::string rule;
        std::function<i64(EventTrace&)> apply;   // returns the op id to localize
    };
    const std::vector<Mutation> mutations = {
        {"forward without weights-ready", "weights-ready",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::Forward, 3);
             t.ops[static_cast<std::size_t>(id)].deps.clear();
             return id;
         }},
        {"recompute without weights-ready", "weights-ready",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::Recompute, 5);
             t.ops[static_cast<std::size_t>(id)].deps.clear();
             return id;
         }},
        {"backward without weights-ready", "weights-ready",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::LocalBackward, 4);
             t.ops[static_cast<std::size_t>(id)].deps.clear();
             return id;
         }},
        {"gradient transfer before backward-done", "backward-done",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::GradXfer, 6);
             t.ops[static_cast<std::size_t>(id)].deps.clear();
             return id;
         }},
        {"gradient transfer for a layer that never ran backward", "backward-done",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::GradXfer, 7);
             t.ops[static_cast<std::size_t>(id)].layer = 99;
             return id;
         }},
        {"weight transfer ignoring buffer-free", "buffer-free",
         [&](EventTrace& t) {
             const i64 id = find_op(OpKind::WeightXfer, 2, 1);
             t.ops[static_cast<std::size_t>(id)].deps.clear();
             return id;
         }},
        {"weight transfer overwriting an unconsumed occupant", "buffer-free",
         [&](EventTrace& t) {
             const i64 first = find_op(OpKind::WeightXfer, 0);
             const i64 second = find_op(OpKind::WeightXfer, 1);
             t.ops[static_cast<std::size_t>(second)].buf =
                 t.ops[static_cast<std::size_t>(first)].buf;
             return second;
         }},
        {"slab reused before accumulation", "slab-discipline",
         [&](EventTrace& t) {
             const i64 a = find_op(OpKind::GradXfer, 6);
             const i64 b = find_op(OpKind::GradXfer, 5);
             t.ops[static_cast<std::size_t>(b)].slab = t.ops[static_cast<std::size_t>(a)].slab;
             return b;
         }},
        {"accumulate of a FREE slab", "slab-discipline",
         [&](EventTrace& t) {
             for (const auto& op : t.ops)
                 if (op.kind == OpKind::Accum) {
                     t.ops[static_cast<std::size_t>(op.id)].slab = 3;
                     return op.id;
                 }
             return i64{-1};
         }},
        {"local backward order breaks the activation stack", "stack-discipline",
         [&](EventTrace& t) {
             const i64 a = find_op(OpKind::LocalBackward, 6);
             const i64 b = find_op(OpKind::LocalBackward, 5);
             std::swap(t.ops[static_cast<std::size_t>(a)].layer,
                       t.ops[static_cast<std::size_t>(b)].layer);
             return a;
         }},
    };
    for (const auto& mut : mutations) {
        EventTrace t = clean;
        const i64 at = mut.apply(t);
        if (at < 0) return {false, mut.name + ": mutation could not be applied"};
        const auto violations = validate_trace(t);
        bool localized = false;
        for (const auto& v : violations)
            if (v.rule == mut.rule && v.op_id == at) localized = true;
        if (!localized)
            return {false, mut.name + ": expected a " + mut.rule + " violation at op " +
                               std::to_string(at)};
    }
    return {true, "100 clean runs, 10 localized mutations"};
}

std::pair<bool, std::string> criterion_training_progress() {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig m = copy_task_config();
    HyperParams hp;
    hp.lr = 3e-3;
    RunConfig cfg;
    cfg.model = m;
    cfg.hyper = hp;
    cfg.run.steps = 200;
    cfg.run.seed = 1234;

    double fp32_initial = 0.0, fp32_final = 0.0;
    std::vector<double> engine_losses;
    for (Dtype dtype : {Dtype::FP32, Dtype::BF16}) {
        cfg.run.dtype = dtype;
        auto store = build_store(m, cfg.run.seed, dtype);
        DeviceArena arena(m, dtype);
        const TrainOutput out = run_training(cfg, *store, arena);
        const double initial = out.steps.front().loss;
        const double final_loss = out.steps.back().loss;
        if (!(final_loss < 0.5 * initial))
            return {false, std::string(dtype_name(dtype)) + " final loss not below half"};
        if (dtype == Dtype::FP32) {
            fp32_initial = initial;
            fp32_final = final_loss;
            for (const auto& s : out.steps) engine_losses.push_back(s.loss);
        }
    }
    auto store = build_store(m, cfg.run.seed, Dtype::FP32);
    oracle::Params params = oracle::Params::from_store(*store);
    const auto oracle_losses = oracle::oracle_train(params, hp, 200, cfg.run.seed + 1);
    for (std::size_t i = 0; i < oracle_losses.size(); ++i) {
        const double diff = std::abs(engine_losses[i] - oracle_losses[i]);
        if (diff > 0.05 * oracle_losses[i] + 1e-6)
            return {false,
                    "fp32 curve diverges from the oracle at step " + std::to_string(i + 1)};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream d;
    d << "fp32 " << fp32_initial << " -> " << fp32_final << ", " << secs << " s";
    return {secs < 120.0, d.str()};
}

std::pair<bool, std::string> criterion_slab_backpressure() {
    ModelConfig m = copy_task_config();
    auto run_steps = [&](EngineOptions opts) {
        auto store = build_store(m, 31, Dtype::BF16);
        DeviceArena arena(m, Dtype::BF16);
        HyperParams hp;
        hp.lr = 1e-3;
        Engine engine(*store, arena, hp, opts);
        Rng rng(5);
        i64 used = 0;
        for (int s = 0; s < 3; ++s) {
            engine.train_step(make_copy_task_batch(m, rng));
            used = engine.pool().max_in_use();
        }
        return std::pair<std::unique_ptr<MasterStore>, i64>(std::move(store), used);
    };
    EngineOptions twelve;
    twelve.n_slab = 12;
    auto [s12, used12] = run_steps(twelve);
    // One slab with accumulation both delayed and moved to a worker thread.
    EngineOptions one;
    one.n_slab = 1;
    one.threaded_accum = true;
    one.accum_delay_us = 300;
    auto [s1, used1] = run_steps(one);
    (void)used12;
    if (used1 != 1) return {false, "single-slab run exceeded its slab budget"};
    if (!s12->bitwise_equal(*s1)) return {false, "numerics differ between slab budgets"};
    std::ostringstream d;
    d << "N_slab=1 stalls (max in use " << used1 << "), numerics identical to N_slab=12";
    return {true, d.str()};
}

std::pair<bool, std::string> criterion_checkpoint_format() {
    ModelConfig m = copy_task_config();
    RunConfig cfg;
    cfg.model = m;
    cfg.run.dtype = Dtype::FP32;
    cfg.run.seed = 77;

    auto store = build_store(m, 7, Dtype::BF16);
    save_checkpoint(*store, "/tmp/hlm_acc_ck.hlm1");
    auto loaded = build_store(m, 8, Dtype::BF16);
    load_checkpoint(*loaded, "/tmp/hlm_acc_ck.hlm1");
    if (!loaded->bitwise_equal(*store)) return {false, "round trip not bit-identical"};

    auto full = build_store(m, cfg.run.seed, Dtype::FP32);
    {
        DeviceArena arena(m, Dtype::FP32);
        cfg.run.steps = 6;
        run_training(cfg, *full, arena);
    }
    auto part = build_store(m, cfg.run.seed, Dtype::FP32);
    {
        DeviceArena arena(m, Dtype::FP32);
        cfg.run.steps = 3;
        run_training(cfg, *part, arena);
        save_checkpoint(*part, "/tmp/hlm_acc_resume.hlm1");
    }
    auto resumed = build_store(m, 1, Dtype::FP32);
    load_checkpoint(*resumed, "/tmp/hlm_acc_resume.hlm1");
    {
        DeviceArena arena(m, Dtype::FP32);
        cfg.run.steps = 3;
        run_training(cfg, *resumed, arena);
    }
    std::remove("/tmp/hlm_acc_ck.hlm1");
    std::remove("/tmp/hlm_acc_resume.hlm1");
    if (!resumed->bitwise_equal(*full)) return {false, "resumed run differs from uninterrupted"};
    return {true, "round trip and resume both bit-identical"};
}

std::pair<bool, std::string> criterion_scaling_shape() {
    ModelConfig deep;
    deep.layers = 28;
    deep.hidden = 3584;
    deep.ffn = 18944;
    deep.vocab = 151936;
    deep.seq = 512;
    deep.batch = 1;
    deep.k_ckpt = 4;
    deep.tie_embeddings = true;
    const std::vector<double> depth_mults = {1.0, 1.5, 2.0, 3.0, 132.0 / 28.0, 180.0 / 28.0};
    const auto depth_rows = scaling_report(deep, SweepKind::Depth, depth_mults);
    if (depth_rows.back().layers != 180) return {false, "depth sweep rows wrong"};
    for (const auto& row : depth_rows)
        if (row.device_core != depth_rows.front().device_core)
            return {false, "device core bound moved across the depth sweep"};

    ModelConfig wide = deep;
    wide.layers = 4;
    wide.vocab = 32000;
    HardwareConfig hw;
    hw.host_bytes = 500e9;
    hw.device_bytes = 8e9;
    hw.pcie_bytes_per_s = 900e9;
    hw.device_flops = 300e12;
    const std::vector<double> width_mults = {1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    const auto width_rows = scaling_report(wide, SweepKind::Width, width_mults, &hw);
    const double growth = static_cast<double>(width_rows[2].p_max_bytes) /
                          static_cast<double>(width_rows[0].p_max_bytes);
    if (growth < 3.6 || growth > 4.4) return {false, "width growth is not ~quadratic"};
    i64 threshold = -1;
    for (std::size_t i = 0; i < width_rows.size(); ++i) {
        if (width_rows[i].device_oom && threshold < 0) threshold = static_cast<i64>(i);
        if (threshold >= 0 && !width_rows[i].device_oom)
            return {false, "OOM region is not a threshold"};
    }
    if (threshold <= 0) return {false, "no OOM threshold under the synthetic budget"};
    std::ostringstream d;
    d << "core constant over 28->180 layers; width OOM from "
      << width_mults[static_cast<std::size_t>(threshold)] << "x under 8 GB";
    return {true, d.str()};
}

}  // namespace

int main() {
    run(1, "gradient/loss oracle equivalence (fp32, 5 configs, rel 1e-5)",
        criterion_oracle_equivalence);
    run(2, "checkpoint-interval invariance (grads <= 1e-6, ledger follows the bound)",
        criterion_k_invariance);
    run(3, "minimum host bytes exactness (1.2 TB / 3.6 TB / live 12P)", criterion_eq1);
    run(4, "depth-independent device footprint (L=8 vs L=64)", criterion_depth_independence);
    run(5, "streaming volume counters match the planner exactly", criterion_streaming_volume);
    run(6, "pipeline overlap (bubble < 5%, makespans within 2%, oracle-checked)",
        criterion_pipeline_overlap);
    run(7, "protocol safety (100 clean runs, 10 localized mutations)",
        criterion_protocol_safety);
    run(8, "training progress (200-step copy task, both dtypes, oracle-tracked)",
        criterion_training_progress);
    run(9, "slab back-pressure (N_slab=1 identical to N_slab=12)",
        criterion_slab_backpressure);
    run(10, "HLM1 checkpoint round-trip and resume", criterion_checkpoint_format);
    run(11, "depth/width scaling shape with a documented OOM threshold",
        criterion_scaling_shape);
    if (g_failures == 0) {
        std::printf("acceptance: all 11 criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria FAILED\n", g_failures);
    return 1;
}
