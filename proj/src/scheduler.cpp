// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/scheduler.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include <json.hpp>

#include "hlm/errors.hpp"
#include "hlm/flop_model.hpp"
#include "hlm/footprint.hpp"

namespace hlm {

namespace {

bool consumes_weights(const StreamOp& op, const TraceMeta& meta) {
    if (op.kind == OpKind::Forward || op.kind == OpKind::Recompute) return true;
    // The embedding backward is a scatter-add; it reads no weights.
    if (op.kind == OpKind::LocalBackward) return op.layer != meta.embed_tile;
    return false;
}

}  // namespace

std::vector<Violation> validate_trace(const EventTrace& trace) {
    std::vector<Violation> out;
    const TraceMeta& meta = trace.meta;
    const i64 n = static_cast<i64>(trace.ops.size());

    auto has_dep = [](const StreamOp& op, i64 id) {
        return std::find(op.deps.begin(), op.deps.end(), id) != op.deps.end();
    };

    // Structural sanity: dependencies must reference earlier ops.
    for (const auto& op : trace.ops) {
        for (i64 d : op.deps) {
            if (d < 0 || d >= n)
                out.push_back({op.id, "malformed", "dependency id out of range"});
            else if (d >= op.id)
                out.push_back({op.id, "malformed", "dependency points forward in issue order"});
        }
    }

    // Rule 1 — weights-ready: weight consumers depend on the latest
    // WeightXfer of their layer.
    {
        std::vector<i64> last(static_cast<std::size_t>(meta.head_tile + 1), -1);
        for (const auto& op : trace.ops) {
            if (consumes_weights(op, meta)) {
                const i64 w = (op.layer >= 0 && op.layer <= meta.head_tile)
                                  ? last[static_cast<std::size_t>(op.layer)]
                                  : -1;
                if (w < 0)
                    out.push_back({op.id, "weights-ready",
                                   "no prior weight transfer for layer " +
                                       std::to_string(op.layer)});
                else if (!has_dep(op, w))
                    out.push_back({op.id, "weights-ready",
                                   "missing dependency on weights_ready[" +
                                       std::to_string(op.layer) + "] (op " +
                                       std::to_string(w) + ")"});
            }
            if (op.kind == OpKind::WeightXfer && op.layer >= 0 && op.layer <= meta.head_tile)
                last[static_cast<std::size_t>(op.layer)] = op.id;
        }
    }

    // Rule 2 — backward-done: gradient evacuation depends on the local
    // backward that produced it.
    {
        std::vector<i64> last_lb(static_cast<std::size_t>(meta.head_tile + 1), -1);
        for (const auto& op : trace.ops) {
            if (op.kind == OpKind::LocalBackward && op.layer >= 0 && op.layer <= meta.head_tile)
                last_lb[static_cast<std::size_t>(op.layer)] = op.id;
            if (op.kind == OpKind::GradXfer) {
                const i64 lb = (op.layer >= 0 && op.layer <= meta.head_tile)
                                   ? last_lb[static_cast<std::size_t>(op.layer)]
                                   : -1;
                if (lb < 0)
                    out.push_back({op.id, "backward-done",
                                   "gradient transfer with no prior local backward for layer " +
                                       std::to_string(op.layer)});
                else if (!has_dep(op, lb))
                    out.push_back({op.id, "backward-done",
                                   "missing dependency on backward_done[" +
                                       std::to_string(op.layer) + "] (op " +
                                       std::to_string(lb) + ")"});
            }
        }
    }

    // Rule 3 — buffer-free: a weight transfer must not overwrite a buffer
    // whose occupant has an unconsumed reader.
    {
        std::vector<i64> last_xfer_into(static_cast<std::size_t>(meta.n_buffers), -1);
        std::vector<i64> last_reader(static_cast<std::size_t>(meta.n_buffers), -1);
        std::vector<bool> consumed(static_cast<std::size_t>(meta.n_buffers), true);
        for (const auto& op : trace.ops) {
            if (op.kind == OpKind::WeightXfer) {
                if (op.buf < 0 || op.buf >= meta.n_buffers) {
                    out.push_back({op.id, "buffer-free", "weight transfer without a valid buffer"});
                    continue;
                }
                const auto b = static_cast<std::size_t>(op.buf);
                if (last_xfer_into[b] >= 0) {
                    if (!consumed[b])
                        out.push_back({op.id, "buffer-free",
                                       "overwrites buffer " + std::to_string(op.buf) +
                                           " whose occupant was never consumed"});
                    else if (last_reader[b] >= 0 && !has_dep(op, last_reader[b]))
                        out.push_back({op.id, "buffer-free",
                                       "missing dependency on buffer_free[" +
                                           std::to_string(op.buf) + "] (reader op " +
                                           std::to_string(last_reader[b]) + ")"});
                }
                last_xfer_into[b] = op.id;
                last_reader[b] = -1;
                consumed[b] = false;
            } else if (op.buf >= 0 && op.buf < meta.n_buffers) {
                const auto b = static_cast<std::size_t>(op.buf);
                last_reader[b] = op.id;
                consumed[b] = true;
            }
        }
    }

    // Slab state machine legality, replayed in issue order.
    {
        std::vector<i64> slab_layer(static_cast<std::size_t>(std::max<i64>(meta.n_slabs, 1)), -1);
        std::vector<int> slab_state(static_cast<std::size_t>(std::max<i64>(meta.n_slabs, 1)), 0);
        for (const auto& op : trace.ops) {
            if (op.kind == OpKind::GradXfer) {
                if (op.slab < 0 || op.slab >= meta.n_slabs) {
                    out.push_back({op.id, "slab-discipline", "gradient transfer without a valid slab"});
                    continue;
                }
                auto s = static_cast<std::size_t>(op.slab);
                if (slab_state[s] != 0)
                    out.push_back({op.id, "slab-discipline",
                                   "slab " + std::to_string(op.slab) +
                                       " reused before accumulation completed"});
                slab_state[s] = 1;   // READY once the transfer completes
                slab_layer[s] = op.layer;
            } else if (op.kind == OpKind::Accum) {
                if (op.slab < 0 || op.slab >= meta.n_slabs) {
                    out.push_back({op.id, "slab-discipline", "accumulate without a valid slab"});
                    continue;
                }
                auto s = static_cast<std::size_t>(op.slab);
                if (slab_state[s] != 1)
                    out.push_back({op.id, "slab-discipline",
                                   "accumulate of slab " + std::to_string(op.slab) +
                                       " in state " + (slab_state[s] == 0 ? "FREE" : "?")});
                else if (slab_layer[s] != op.layer)
                    out.push_back({op.id, "slab-discipline",
                                   "accumulate layer does not match slab payload"});
                slab_state[s] = 0;
                slab_layer[s] = -1;
            }
        }
    }

    // Activation stack discipline: within each recomputed block, local
    // backwards must visit layers in exact reverse recompute order.
    {
        std::vector<i64> group;
        std::size_t consumed_from_group = 0;
        for (const auto& op : trace.ops) {
            if (op.stream != StreamId::Compute) continue;
            if (op.kind == OpKind::Recompute) {
                if (consumed_from_group > 0 || group.empty()) {
                    if (consumed_from_group > 0 && consumed_from_group < group.size())
                        out.push_back({op.id, "stack-discipline",
                                       "recompute begins before the previous block was fully "
                                       "consumed"});
                    if (consumed_from_group == group.size()) group.clear();
                    consumed_from_group = 0;
                }
                group.push_back(op.layer);
            } else if (op.kind == OpKind::LocalBackward && op.layer >= 1 &&
                       op.layer <= meta.n_layers) {
                const i64 expect = group.empty() || consumed_from_group >= group.size()
                                       ? -1
                                       : group[group.size() - 1 - consumed_from_group];
                if (op.layer != expect)
                    out.push_back({op.id, "stack-discipline",
                                   "local backward of layer " + std::to_string(op.layer) +
                                       " violates LIFO order (expected " +
                                       std::to_string(expect) + ")"});
                else
                    ++consumed_from_group;
            }
        }
    }

    return out;
}

Timeline simulate(const EventTrace& trace, const TimingModel& timing) {
    timing.validate();
    const i64 n = static_cast<i64>(trace.ops.size());
    Timeline tl;
    tl.ops.resize(static_cast<std::size_t>(n));

    auto duration_us = [&](const StreamOp& op) -> double {
        switch (op.stream) {
            case StreamId::H2D:
            case StreamId::D2H: {
                double s = static_cast<double>(op.bytes) / timing.pcie_bytes_per_s;
                if (!op.pinned) s *= timing.pageable_penalty;
                return s * 1e6;
            }
            case StreamId::Compute:
                return static_cast<double>(op.flops) / timing.device_flops * 1e6;
            case StreamId::Host:
                return static_cast<double>(op.params) / timing.cpu_optim_rate * 1e6;
        }
        return 0.0;
    };

    // Predecessors: explicit deps plus the previous op on the same stream.
    std::vector<std::vector<i64>> succ(static_cast<std::size_t>(n));
    std::vector<i64> indeg(static_cast<std::size_t>(n), 0);
    std::array<i64, kStreamCount> prev_on_stream;
    prev_on_stream.fill(-1);
    for (const auto& op : trace.ops) {
        for (i64 d : op.deps) {
            if (d < 0 || d >= n) throw ConfigError("simulate: dependency id out of range");
            succ[static_cast<std::size_t>(d)].push_back(op.id);
            ++indeg[static_cast<std::size_t>(op.id)];
        }
        const int s = static_cast<int>(op.stream);
        if (prev_on_stream[s] >= 0) {
            succ[static_cast<std::size_t>(prev_on_stream[s])].push_back(op.id);
            ++indeg[static_cast<std::size_t>(op.id)];
        }
        prev_on_stream[s] = op.id;
    }

    std::vector<double> end_time(static_cast<std::size_t>(n), 0.0);
    std::deque<i64> ready;
    for (i64 i = 0; i < n; ++i)
        if (indeg[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
    i64 done = 0;
    std::array<i64, kStreamCount> stream_prev;
    stream_prev.fill(-1);
    // Recompute start times in id order once topologically safe; Kahn pass
    // only proves acyclicity and fills a processing order.
    std::vector<i64> order;
    order.reserve(static_cast<std::size_t>(n));
    while (!ready.empty()) {
        const i64 u = ready.front();
        ready.pop_front();
        order.push_back(u);
        ++done;
        for (i64 v : succ[static_cast<std::size_t>(u)])
            if (--indeg[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
    }
    if (done != n) throw ConfigError("simulate: dependency cycle in trace");

    std::array<double, kStreamCount> stream_free{};
    stream_free.fill(0.0);
    // Process in topological order; with FIFO edges included, same-stream
    // order is preserved.
    for (i64 u : order) {
        const StreamOp& op = trace.ops[static_cast<std::size_t>(u)];
        double start = stream_free[static_cast<int>(op.stream)];
        for (i64 d : op.deps) start = std::max(start, end_time[static_cast<std::size_t>(d)]);
        const double dur = duration_us(op);
        const double end = start + dur;
        end_time[static_cast<std::size_t>(u)] = end;
        stream_free[static_cast<int>(op.stream)] = end;
        TimedOp& t = tl.ops[static_cast<std::size_t>(u)];
        t.id = op.id;
        t.stream = op.stream;
        t.kind = op.kind;
        t.layer = op.layer;
        t.t_start_us = start;
        t.t_end_us = end;
        t.deps = op.deps;
        tl.busy_us[static_cast<int>(op.stream)] += dur;
        tl.makespan_us = std::max(tl.makespan_us, end);
        tl.total_flops += static_cast<double>(op.flops);
    }
    return tl;
}

ThroughputReport throughput_report(const Timeline& timeline) {
    ThroughputReport r;
    const double ms = timeline.makespan_us;
    if (ms > 0) {
        r.sim_tflops = timeline.total_flops / (ms * 1e-6) / 1e12;
        for (int s = 0; s < kStreamCount; ++s)
            r.busy_fraction[s] = timeline.busy_us[s] / ms;
    }
    double best = -1.0;
    for (StreamId s : {StreamId::Compute, StreamId::H2D, StreamId::D2H}) {
        if (r.busy_fraction[static_cast<int>(s)] > best) {
            best = r.busy_fraction[static_cast<int>(s)];
            r.bound = s;
        }
    }
    double first = -1.0, last = -1.0;
    for (const auto& op : timeline.ops) {
        if (op.stream != StreamId::Compute) continue;
        if (first < 0 || op.t_start_us < first) first = op.t_start_us;
        if (op.t_end_us > last) last = op.t_end_us;
    }
    if (first >= 0 && last > first) {
        const double span = last - first;
        r.bubble_fraction = (span - timeline.busy_us[static_cast<int>(StreamId::Compute)]) / span;
        if (r.bubble_fraction < 0) r.bubble_fraction = 0;
    }
    return r;
}

EventTrace canonical_trace(const ModelConfig& m, Dtype dtype, i64 steps, i64 n_slab,
                           bool eager_optim) {
    m.validate();
    EventTrace trace;
    trace.meta = TraceMeta{m.layers, 2, n_slab, m.embed_tile_id(), m.head_tile_id()};
    const i64 elsize = static_cast<i64>(dtype_size(dtype));
    const i64 tokens = m.batch * m.seq;
    const i64 n_table = m.embed_params();
    const i64 n_block = m.block_params();

    int next_buf = 0;
    i64 last_reader[2] = {-1, -1};
    std::vector<i64> last_accum_op(static_cast<std::size_t>(n_slab), -1);
    std::vector<int> slab_free(static_cast<std::size_t>(n_slab), 1);
    struct Pending { i64 slab, layer, grad_op, n; };
    std::deque<Pending> pending;
    // Per-tile gate for the next step's weight transfer (optimizer readiness).
    std::vector<i64> opt_gate(static_cast<std::size_t>(m.tile_count()), -1);

    auto xfer = [&](i64 tile, i64 n_params) {
        const int buf = next_buf;
        next_buf ^= 1;
        StreamOp op;
        op.stream = StreamId::H2D;
        op.kind = OpKind::WeightXfer;
        op.layer = tile;
        op.buf = buf;
        op.bytes = n_params * elsize;
        if (last_reader[buf] >= 0) op.deps.push_back(last_reader[buf]);
        if (opt_gate[static_cast<std::size_t>(tile)] >= 0)
            op.deps.push_back(opt_gate[static_cast<std::size_t>(tile)]);
        return std::pair<int, i64>(buf, trace.add(std::move(op)));
    };
    auto compute = [&](OpKind kind, i64 tile, int buf, i64 flops, i64 dep) {
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = kind;
        op.layer = tile;
        op.buf = buf;
        op.flops = flops;
        if (dep >= 0) op.deps.push_back(dep);
        const i64 id = trace.add(std::move(op));
        if (buf >= 0) last_reader[buf] = id;
        return id;
    };
    std::vector<i64> step_accums;
    std::vector<i64> last_accum_of_tile(static_cast<std::size_t>(m.tile_count()), -1);
    auto emit_accum = [&](const Pending& pa) {
        StreamOp op;
        op.stream = StreamId::Host;
        op.kind = OpKind::Accum;
        op.layer = pa.layer;
        op.slab = pa.slab;
        op.params = pa.n;
        op.deps.push_back(pa.grad_op);
        const i64 id = trace.add(std::move(op));
        last_accum_op[static_cast<std::size_t>(pa.slab)] = id;
        slab_free[static_cast<std::size_t>(pa.slab)] = 1;
        step_accums.push_back(id);
        last_accum_of_tile[static_cast<std::size_t>(pa.layer)] = id;
        return id;
    };
    auto evacuate = [&](i64 tile, i64 n_params, i64 lb_op, int buf) {
        i64 slab = -1;
        for (;;) {
            for (i64 s = 0; s < n_slab; ++s)
                if (slab_free[static_cast<std::size_t>(s)]) { slab = s; break; }
            if (slab >= 0) break;
            emit_accum(pending.front());   // back-pressure, oldest first
            pending.pop_front();
        }
        slab_free[static_cast<std::size_t>(slab)] = 0;
        StreamOp op;
        op.stream = StreamId::D2H;
        op.kind = OpKind::GradXfer;
        op.layer = tile;
        op.buf = buf;
        op.slab = slab;
        op.bytes = n_params * elsize;
        op.deps.push_back(lb_op);
        if (last_accum_op[static_cast<std::size_t>(slab)] >= 0)
            op.deps.push_back(last_accum_op[static_cast<std::size_t>(slab)]);
        const i64 g_op = trace.add(std::move(op));
        if (buf >= 0) last_reader[buf] = g_op;
        pending.push_back({slab, tile, g_op, n_params});
    };

    for (i64 step = 0; step < steps; ++step) {
        step_accums.clear();
        std::fill(last_accum_of_tile.begin(), last_accum_of_tile.end(), i64{-1});
        // Forward streaming
        auto [ebuf, e_op] = xfer(m.embed_tile_id(), n_table);
        compute(OpKind::Forward, m.embed_tile_id(), ebuf, fwd_flops(n_table, tokens), e_op);
        for (i64 i = 1; i <= m.layers; ++i) {
            auto [buf, w_op] = xfer(i, n_block);
            compute(OpKind::Forward, i, buf, fwd_flops(n_block, tokens), w_op);
        }
        // Loss anchoring
        auto [hbuf, h_op] = xfer(m.head_tile_id(), n_table);
        compute(OpKind::Forward, m.head_tile_id(), hbuf, fwd_flops(n_table, tokens), h_op);
        const i64 head_lb =
            compute(OpKind::LocalBackward, m.head_tile_id(), hbuf, bwd_flops(n_table, tokens), h_op);
        evacuate(m.head_tile_id(), n_table, head_lb, hbuf);
        // Block-wise backward
        for (i64 b = m.layers / m.k_ckpt; b >= 0; --b) {
            const i64 lo = b * m.k_ckpt + 1;
            const i64 hi = std::min((b + 1) * m.k_ckpt, m.layers);
            if (lo > hi) continue;
            for (i64 i = lo; i <= hi; ++i) {
                auto [buf, w_op] = xfer(i, n_block);
                compute(OpKind::Recompute, i, buf, fwd_flops(n_block, tokens), w_op);
            }
            for (i64 i = hi; i >= lo; --i) {
                auto [buf, w_op] = xfer(i, n_block);
                const i64 lb =
                    compute(OpKind::LocalBackward, i, buf, bwd_flops(n_block, tokens), w_op);
                evacuate(i, n_block, lb, buf);
            }
        }
        const i64 embed_lb =
            compute(OpKind::LocalBackward, m.embed_tile_id(), -1, bwd_flops(n_table, tokens), -1);
        evacuate(m.embed_tile_id(), n_table, embed_lb, -1);
        // Drain and optimize
        while (!pending.empty()) {
            emit_accum(pending.front());
            pending.pop_front();
        }
        if (eager_optim) {
            // One per-tile optimizer op gated on that tile's accumulation;
            // tied stores gate the shared tile on both consumers.
            const auto emit_opt = [&](i64 tile, i64 n_params) {
                StreamOp op;
                op.stream = StreamId::Host;
                op.kind = OpKind::OptStep;
                op.layer = tile;
                op.params = n_params;
                if (last_accum_of_tile[static_cast<std::size_t>(tile)] >= 0)
                    op.deps.push_back(last_accum_of_tile[static_cast<std::size_t>(tile)]);
                const i64 id = trace.add(std::move(op));
                opt_gate[static_cast<std::size_t>(tile)] = id;
            };
            emit_opt(m.embed_tile_id(), n_table);
            for (i64 i = 1; i <= m.layers; ++i) emit_opt(i, n_block);
            if (!m.tie_embeddings) emit_opt(m.head_tile_id(), n_table);
            else opt_gate[static_cast<std::size_t>(m.head_tile_id())] =
                     opt_gate[static_cast<std::size_t>(m.embed_tile_id())];
        } else {
            StreamOp op;
            op.stream = StreamId::Host;
            op.kind = OpKind::OptStep;
            op.params = m.total_params();
            op.deps = step_accums;
            const i64 id = trace.add(std::move(op));
            for (i64 t = 0; t < m.tile_count(); ++t)
                opt_gate[static_cast<std::size_t>(t)] = id;
        }
    }
    return trace;
}

std::string timeline_to_jsonl(const Timeline& timeline, const ThroughputReport& report) {
    using nlohmann::json;
    std::ostringstream out;
    for (const auto& op : timeline.ops) {
        json row{{"stream", stream_name(op.stream)},
                 {"kind", op_kind_name(op.kind)},
                 {"layer", op.layer},
                 {"t_start_us", op.t_start_us},
                 {"t_end_us", op.t_end_us},
                 {"deps", op.deps}};
        out << row.dump() << '\n';
    }
    json summary{{"summary",
                  {{"makespan_us", timeline.makespan_us},
                   {"sim_tflops", report.sim_tflops},
                   {"bound", stream_name(report.bound)},
                   {"bubble_fraction", report.bubble_fraction}}}};
    out << summary.dump() << '\n';
    return out.str();
}

}  // namespace hlm
