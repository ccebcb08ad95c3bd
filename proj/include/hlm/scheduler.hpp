// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// The three-stream pipeline model: validation of the weights-ready /
// backward-done / buffer-free event protocol over logical traces, a
// discrete-event timing simulator, and throughput summaries.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "hlm/model_config.hpp"
#include "hlm/tensor.hpp"
#include "hlm/trace.hpp"

namespace hlm {

struct Violation {
    i64 op_id = -1;
    std::string rule;
    std::string detail;
};

// Pure check of the engine protocol over a logical trace. Violations are
// data, not exceptions.
std::vector<Violation> validate_trace(const EventTrace& trace);

struct TimingModel {
    double pcie_bytes_per_s = 26e9;
    double device_flops = 100e12;
    double pageable_penalty = 2.0;
    double cpu_optim_rate = 1e9;

    void validate() const {
        if (pcie_bytes_per_s <= 0 || device_flops <= 0 || pageable_penalty <= 0 ||
            cpu_optim_rate <= 0)
            throw std::invalid_argument("timing model rates must be strictly positive");
    }
};

struct TimedOp {
    i64 id = -1;
    StreamId stream = StreamId::Compute;
    OpKind kind = OpKind::Forward;
    i64 layer = -1;
    double t_start_us = 0.0;
    double t_end_us = 0.0;
    std::vector<i64> deps;
};

struct Timeline {
    std::vector<TimedOp> ops;
    double makespan_us = 0.0;
    std::array<double, kStreamCount> busy_us{};
    double total_flops = 0.0;
};

// Each stream executes its ops in FIFO order; an op starts once its stream
// is free and all its dependency events have fired. Throws on cycles.
Timeline simulate(const EventTrace& trace, const TimingModel& timing);

struct ThroughputReport {
    double sim_tflops = 0.0;
    StreamId bound = StreamId::Compute;   // among COMPUTE / H2D / D2H
    double bubble_fraction = 0.0;         // COMPUTE idle share between its first and last op
    std::array<double, kStreamCount> busy_fraction{};
};

ThroughputReport throughput_report(const Timeline& timeline);

// Builds the canonical single-or-multi-step trace straight from the model
// shape, without allocating any model memory. Matches the engine's own
// emission op for op on identical configurations.
EventTrace canonical_trace(const ModelConfig& m, Dtype dtype, i64 steps = 1,
                           i64 n_slab = 12, bool eager_optim = false);

std::string timeline_to_jsonl(const Timeline& timeline, const ThroughputReport& report);

}  // namespace hlm
