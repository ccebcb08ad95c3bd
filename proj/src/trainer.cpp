// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/trainer.hpp"

namespace hlm {

TrainOutput run_training(const RunConfig& cfg, MasterStore& store, DeviceArena& arena,
                         const std::function<void(const StepTelemetry&)>& on_step) {
    EngineOptions opts;
    opts.eager_optim = cfg.run.eager_optim;
    opts.n_slab = cfg.run.n_slab;
    opts.threaded_accum = cfg.run.threaded_accum;
    Engine engine(store, arena, cfg.hyper, opts);

    Rng data_rng(cfg.run.seed + 1);
    // Replay the stream past already-trained steps after a resume.
    for (i64 s = 0; s < store.adam_steps(); ++s)
        (void)make_copy_task_batch(cfg.model, data_rng);

    TrainOutput out;
    for (i64 s = 0; s < cfg.run.steps; ++s) {
        const Batch batch = make_copy_task_batch(cfg.model, data_rng);
        StepResult res = engine.train_step(batch);
        StepTelemetry t;
        t.step = store.adam_steps();
        t.loss = res.loss;
        t.arena_peak = res.arena.step_peak_total;
        t.arena_committed = res.arena.committed_total;
        t.host_total = res.host.total;
        t.h2d_bytes = res.h2d_bytes;
        t.d2h_bytes = res.d2h_bytes;
        out.steps.push_back(t);
        if (s == 0) out.first_trace = res.trace;
        if (s + 1 == cfg.run.steps) {
            out.final_arena = res.arena;
            out.final_host = res.host;
        }
        if (on_step) on_step(t);
    }
    return out;
}

}  // namespace hlm
