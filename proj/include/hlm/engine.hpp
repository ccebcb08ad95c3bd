// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// The training engine: streaming forward with sparse checkpointing, loss
// anchoring, block-wise recomputation, streaming local backward with
// immediate gradient evacuation, and the host-side optimizer step. Runs
// functionally single-threaded while emitting the logical three-stream
// event trace the scheduler validates and times.

#pragma once

#include <memory>
#include <vector>

#include "hlm/device_arena.hpp"
#include "hlm/host_store.hpp"
#include "hlm/trace.hpp"

namespace hlm {

struct Batch {
    std::vector<std::int32_t> tokens;    // batch * seq
    std::vector<std::int32_t> targets;   // batch * seq
};

struct EngineOptions {
    bool eager_optim = false;      // per-tile updates as gradients land
    i64 n_slab = 12;
    bool threaded_accum = false;   // accumulate on a background host thread
    i64 accum_delay_us = 0;        // test hook, forces slab back-pressure
    bool skip_optimizer = false;   // verification runs: leave gradients in the store
};

struct StepResult {
    double loss = 0.0;
    EventTrace trace;
    ArenaSnapshot arena;
    HostBytesReport host;
    i64 h2d_bytes = 0;
    i64 d2h_bytes = 0;
    i64 recompute_forwards = 0;
};

enum class Phase { Idle, Forward, Anchor, Backward, Optimize };

class Engine {
public:
    Engine(MasterStore& store, DeviceArena& arena, const HyperParams& hyper,
           EngineOptions opts = {});
    ~Engine();

    // One full training iteration: forward -> anchor -> backward -> drain +
    // optimize.
    StepResult train_step(const Batch& batch);

    // Phase-level entry points; must be called in order.
    void begin_step(const Batch& batch);
    void forward_streaming();
    double anchor_loss();
    void backward_blockwise();
    StepResult finish_step();

    Phase phase() const { return phase_; }
    // Rolling hidden state; after forward_streaming this is h_L.
    const float* debug_hidden() { return arena_.h_roll(h_cur_); }
    SlabPool& pool() { return pool_; }
    StagingBuffer& staging(int i) { return staging_[i]; }
    MasterStore& store() { return store_; }
    DeviceArena& arena() { return arena_; }
    const HyperParams& hyper() const { return hyper_; }
    const EngineOptions& options() const { return opts_; }

private:
    struct PendingAccum {
        i64 slab;
        i64 layer;
        i64 grad_op;
        i64 n_params;
    };

    std::pair<int, i64> stream_tile(i64 tile_id);   // (buffer, xfer op id)
    i64 acquire_slab_traced();
    i64 evacuate(i64 tile_id, const std::byte* src, i64 n_params, i64 lb_op, int from_buf);
    void write_grads_to_buffer(std::byte* dst, i64 n_params);
    void emit_accum(const PendingAccum& pa);
    void after_accum(i64 layer, i64 accum_op);

    template <typename WM>
    void forward_impl();
    template <typename WM>
    double anchor_loss_impl();
    template <typename WM>
    void backward_impl();

    MasterStore& store_;
    DeviceArena& arena_;
    HyperParams hyper_;
    EngineOptions opts_;
    StagingBuffer staging_[2];
    SlabPool pool_;

    Phase phase_ = Phase::Idle;
    Batch batch_;
    EventTrace trace_;
    double loss_ = 0.0;
    int next_buf_ = 0;
    int h_cur_ = 0;
    int g_cur_ = 0;
    i64 last_reader_[2] = {-1, -1};
    std::vector<i64> last_accum_op_;       // per slab
    std::vector<PendingAccum> pending_;    // FIFO of filled, not yet accounted slabs
    std::vector<i64> consumers_left_;      // per physical tile (eager optimizer)
    i64 step_t_ = 0;
    i64 d2h_base_ = 0;
    i64 recompute_forwards_ = 0;
};

// Deterministic synthetic data: random tokens echoed as their own targets.
Batch make_copy_task_batch(const ModelConfig& m, Rng& rng);

}  // namespace hlm
