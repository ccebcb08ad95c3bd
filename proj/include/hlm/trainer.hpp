// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end training driver shared by the CLI and the Python module:
// build the store, stream steps through the engine, collect per-step
// telemetry. File output stays with the callers.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hlm/config_io.hpp"
#include "hlm/engine.hpp"

namespace hlm {

struct StepTelemetry {
    i64 step = 0;
    double loss = 0.0;
    i64 arena_peak = 0;
    i64 arena_committed = 0;
    i64 host_total = 0;
    i64 h2d_bytes = 0;
    i64 d2h_bytes = 0;
};

struct TrainOutput {
    std::vector<StepTelemetry> steps;
    EventTrace first_trace;
    ArenaSnapshot final_arena;
    HostBytesReport final_host;
};

// The synthetic data stream is a function of (seed + 1, step index), so a
// resumed run continues exactly where the checkpoint stopped.
TrainOutput run_training(const RunConfig& cfg, MasterStore& store, DeviceArena& arena,
                         const std::function<void(const StepTelemetry&)>& on_step = {});

}  // namespace hlm
