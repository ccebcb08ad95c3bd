// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Logical event traces: the ordered record of stream operations a training
// step issues, with explicit dependencies. Per-stream order in the ops list
// is the FIFO issue order; there are no implicit orderings besides that.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hlm/kernels.hpp"

namespace hlm {

enum class StreamId : std::uint8_t { H2D = 0, Compute = 1, D2H = 2, Host = 3 };
inline constexpr int kStreamCount = 4;
const char* stream_name(StreamId s);

enum class OpKind : std::uint8_t {
    WeightXfer = 0,
    Forward = 1,
    Recompute = 2,
    LocalBackward = 3,
    GradXfer = 4,
    Accum = 5,
    OptStep = 6,
};
const char* op_kind_name(OpKind k);

struct StreamOp {
    i64 id = -1;
    StreamId stream = StreamId::Compute;
    OpKind kind = OpKind::Forward;
    i64 layer = -1;        // logical tile id; -1 for whole-store OptStep
    i64 buf = -1;          // streaming buffer the op targets or reads
    i64 slab = -1;         // gradient slab for GradXfer / Accum
    i64 bytes = 0;         // transfer volume
    i64 flops = 0;         // compute volume
    i64 params = 0;        // host-op volume (accumulate / optimize)
    bool pinned = true;    // staging attribute, feeds the transfer-time model
    std::vector<i64> deps; // ids of ops whose completion events gate this op
};

struct TraceMeta {
    i64 n_layers = 0;       // transformer blocks
    i64 n_buffers = 2;
    i64 n_slabs = 12;
    i64 embed_tile = 0;
    i64 head_tile = 0;
};

struct EventTrace {
    TraceMeta meta;
    std::vector<StreamOp> ops;

    i64 add(StreamOp op) {
        op.id = static_cast<i64>(ops.size());
        ops.push_back(std::move(op));
        return ops.back().id;
    }
};

std::string trace_to_jsonl(const EventTrace& trace);
EventTrace trace_from_jsonl(std::istream& in);
EventTrace trace_from_jsonl_file(const std::string& path);
void write_trace_file(const EventTrace& trace, const std::string& path);

}  // namespace hlm
