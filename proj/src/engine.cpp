// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/engine.hpp"

#include <algorithm>
#include <cstring>
#include <utility>

#include "hlm/flop_model.hpp"

namespace hlm {

namespace {

// Points the per-tensor gradient accumulators into the flat FP32 buffer
// using the tile's own offset table.
BlockGradPtrs<float> grad_ptrs_for(const LayerTile& tile, float* flat) {
    BlockGradPtrs<float> g;
    for (const auto& r : tile.offset_table()) {
        float* p = flat + r.offset;
        if (r.name == "w_q") g.w_q = p;
        else if (r.name == "w_k") g.w_k = p;
        else if (r.name == "w_v") g.w_v = p;
        else if (r.name == "w_o") g.w_o = p;
        else if (r.name == "w_up") g.w_up = p;
        else if (r.name == "w_gate") g.w_gate = p;
        else if (r.name == "w_down") g.w_down = p;
        else if (r.name == "norm1") g.norm1 = p;
        else if (r.name == "norm2") g.norm2 = p;
    }
    return g;
}

template <typename WM>
WM table_view(const std::byte* data, i64 vocab, i64 h) {
    using ElemPtr = decltype(WM{}.ptr);
    return WM{reinterpret_cast<ElemPtr>(data), vocab, h};
}

}  // namespace

Engine::Engine(MasterStore& store, DeviceArena& arena, const HyperParams& hyper,
               EngineOptions opts)
    : store_(store), arena_(arena), hyper_(hyper), opts_(opts),
      staging_{StagingBuffer(stream_buf_bytes(store.config(), store.dtype()), true),
               StagingBuffer(stream_buf_bytes(store.config(), store.dtype()), true)},
      pool_(opts.n_slab, slab_capacity_bytes(store.config(), store.dtype())) {
    pool_.set_accumulate_delay_us(opts_.accum_delay_us);
    if (opts_.threaded_accum) pool_.start_worker(store_);
}

Engine::~Engine() { pool_.stop_worker(); }

std::pair<int, i64> Engine::stream_tile(i64 tile_id) {
    const int buf = next_buf_;
    next_buf_ ^= 1;
    if (arena_.buffer_occupant(buf) != -1) arena_.release_buffer(buf);
    pack_layer(store_, tile_id, staging_[buf]);
    StreamOp op;
    op.stream = StreamId::H2D;
    op.kind = OpKind::WeightXfer;
    op.layer = tile_id;
    op.buf = buf;
    op.bytes = store_.tile(tile_id).weight_bytes();
    op.pinned = staging_[buf].pinned();
    if (last_reader_[buf] >= 0) op.deps.push_back(last_reader_[buf]);
    const i64 op_id = trace_.add(std::move(op));
    arena_.stream_in(buf, staging_[buf]);
    return {buf, op_id};
}

i64 Engine::acquire_slab_traced() {
    for (;;) {
        const i64 id = pool_.try_acquire();
        if (id >= 0) return id;
        if (pool_.threaded()) return pool_.acquire(store_);   // blocks until the worker frees one
        // Inline back-pressure: consume the oldest READY slab on this thread.
        const i64 oldest = pool_.oldest_ready();
        if (oldest < 0) throw ProtocolError("slab pool exhausted with nothing to accumulate");
        for (std::size_t i = 0; i < pending_.size(); ++i) {
            if (pending_[i].slab == oldest) {
                PendingAccum pa = pending_[i];
                pending_.erase(pending_.begin() + static_cast<std::ptrdiff_t>(i));
                pool_.accumulate(store_, oldest);
                emit_accum(pa);
                break;
            }
        }
    }
}

void Engine::write_grads_to_buffer(std::byte* dst, i64 n_params) {
    const float* src = arena_.grad_acc();
    if (store_.dtype() == Dtype::BF16) {
        auto* out = reinterpret_cast<std::uint16_t*>(dst);
        for (i64 i = 0; i < n_params; ++i) out[i] = bf16_bits_from_f32(src[i]);
    } else {
        std::memcpy(dst, src, static_cast<std::size_t>(4 * n_params));
    }
}

i64 Engine::evacuate(i64 tile_id, const std::byte* src, i64 n_params, i64 lb_op, int from_buf) {
    const i64 slab = acquire_slab_traced();
    const i64 bytes = n_params * static_cast<i64>(dtype_size(store_.dtype()));
    pool_.fill(slab, tile_id, src, bytes);
    StreamOp op;
    op.stream = StreamId::D2H;
    op.kind = OpKind::GradXfer;
    op.layer = tile_id;
    op.buf = from_buf;
    op.slab = slab;
    op.bytes = bytes;
    op.deps.push_back(lb_op);
    if (last_accum_op_[static_cast<std::size_t>(slab)] >= 0)
        op.deps.push_back(last_accum_op_[static_cast<std::size_t>(slab)]);
    const i64 g_op = trace_.add(std::move(op));
    if (from_buf >= 0) last_reader_[from_buf] = g_op;
    pending_.push_back({slab, tile_id, g_op, n_params});
    return g_op;
}

void Engine::emit_accum(const PendingAccum& pa) {
    StreamOp op;
    op.stream = StreamId::Host;
    op.kind = OpKind::Accum;
    op.layer = pa.layer;
    op.slab = pa.slab;
    op.params = pa.n_params;
    op.deps.push_back(pa.grad_op);
    const i64 id = trace_.add(std::move(op));
    last_accum_op_[static_cast<std::size_t>(pa.slab)] = id;
    after_accum(pa.layer, id);
}

void Engine::after_accum(i64 layer, i64 accum_op) {
    if (!opts_.eager_optim || opts_.skip_optimizer) return;
    const i64 phys = store_.physical_index(layer);
    if (--consumers_left_[static_cast<std::size_t>(phys)] > 0) return;
    adam_step_tile(store_, phys, hyper_, step_t_);
    StreamOp op;
    op.stream = StreamId::Host;
    op.kind = OpKind::OptStep;
    op.layer = layer;
    op.params = store_.physical(phys).n_params();
    op.deps.push_back(accum_op);
    trace_.add(std::move(op));
}

void Engine::begin_step(const Batch& batch) {
    if (phase_ != Phase::Idle) throw ProtocolError("begin_step outside Idle phase");
    const ModelConfig& m = store_.config();
    if (static_cast<i64>(batch.tokens.size()) != m.batch * m.seq ||
        static_cast<i64>(batch.targets.size()) != m.batch * m.seq)
        throw ConfigError("batch size does not match model config");
    batch_ = batch;
    arena_.begin_step();
    arena_.claim_workspace();
    trace_ = EventTrace{};
    trace_.meta = TraceMeta{m.layers, 2, pool_.size(), m.embed_tile_id(), m.head_tile_id()};
    next_buf_ = 0;
    h_cur_ = 0;
    g_cur_ = 0;
    last_reader_[0] = last_reader_[1] = -1;
    last_accum_op_.assign(static_cast<std::size_t>(pool_.size()), -1);
    pending_.clear();
    consumers_left_.assign(static_cast<std::size_t>(store_.physical_tiles()), 0);
    for (i64 p = 0; p < store_.physical_tiles(); ++p)
        consumers_left_[static_cast<std::size_t>(p)] = store_.consumer_count(p);
    step_t_ = store_.adam_steps() + 1;
    d2h_base_ = pool_.d2h_bytes();
    recompute_forwards_ = 0;
    phase_ = Phase::Forward;
}

template <typename WM>
void Engine::forward_impl() {
    const ModelConfig& m = store_.config();
    const i64 tokens = m.batch * m.seq;
    const BlockDims dims{m.batch, m.seq, m.hidden, m.ffn};

    auto [ebuf, e_op] = stream_tile(m.embed_tile_id());
    embed_fwd(batch_.tokens.data(),
              table_view<WM>(arena_.buffer_data(ebuf), m.vocab, m.hidden),
              arena_.h_roll(h_cur_), tokens, m.hidden);
    {
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = OpKind::Forward;
        op.layer = m.embed_tile_id();
        op.buf = ebuf;
        op.flops = fwd_flops(m.embed_params(), tokens);
        op.deps.push_back(e_op);
        last_reader_[ebuf] = trace_.add(std::move(op));
    }
    arena_.anchor_checkpoint(0, arena_.h_roll(h_cur_));

    for (i64 i = 1; i <= m.layers; ++i) {
        auto [buf, w_op] = stream_tile(i);
        arena_.bind(buf, buf, store_.tile(i).offset_table());
        const auto w = template_block_weights<WM>(arena_.tmpl(buf), m.hidden, m.ffn);
        block_forward(arena_.h_roll(h_cur_), w, dims, arena_.discard_acts(),
                      arena_.h_roll(h_cur_ ^ 1), arena_.scratch());
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = OpKind::Forward;
        op.layer = i;
        op.buf = buf;
        op.flops = fwd_flops(m.block_params(), tokens);
        op.deps.push_back(w_op);
        last_reader_[buf] = trace_.add(std::move(op));
        arena_.release_template(buf);
        h_cur_ ^= 1;
        if (i % m.k_ckpt == 0) arena_.anchor_checkpoint(i, arena_.h_roll(h_cur_));
    }
}

void Engine::forward_streaming() {
    if (phase_ != Phase::Forward) throw ProtocolError("forward_streaming out of order");
    if (store_.dtype() == Dtype::BF16)
        forward_impl<Bf16Mat>();
    else
        forward_impl<PlainMat<float>>();
    phase_ = Phase::Anchor;
}

template <typename WM>
double Engine::anchor_loss_impl() {
    const ModelConfig& m = store_.config();
    const i64 tokens = m.batch * m.seq;
    const i64 n_head = m.embed_params();

    auto [buf, w_op] = stream_tile(m.head_tile_id());
    const auto head = table_view<WM>(arena_.buffer_data(buf), m.vocab, m.hidden);
    head_fwd(arena_.h_roll(h_cur_), head, arena_.logits(), tokens, m.hidden, m.vocab);
    const float loss = ce_loss_and_grad(arena_.logits(), batch_.targets.data(),
                                        arena_.d_logits(), tokens, m.vocab);
    {
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = OpKind::Forward;
        op.layer = m.head_tile_id();
        op.buf = buf;
        op.flops = fwd_flops(n_head, tokens);
        op.deps.push_back(w_op);
        last_reader_[buf] = trace_.add(std::move(op));
    }
    // Head backward: g_L into the carry, head gradient straight to a slab.
    float* grad = arena_.grad_acc();
    std::memset(grad, 0, static_cast<std::size_t>(4 * n_head));
    head_bwd(arena_.h_roll(h_cur_), arena_.d_logits(), head, arena_.g_roll(g_cur_), grad,
             tokens, m.hidden, m.vocab);
    i64 lb_op;
    {
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = OpKind::LocalBackward;
        op.layer = m.head_tile_id();
        op.buf = buf;
        op.flops = bwd_flops(n_head, tokens);
        op.deps.push_back(w_op);
        lb_op = trace_.add(std::move(op));
        last_reader_[buf] = lb_op;
    }
    write_grads_to_buffer(arena_.buffer_data(buf), n_head);
    evacuate(m.head_tile_id(), arena_.buffer_data(buf), n_head, lb_op, buf);
    if (m.layers % m.k_ckpt == 0) arena_.release_checkpoint(m.layers);
    return loss;
}

double Engine::anchor_loss() {
    if (phase_ != Phase::Anchor) throw ProtocolError("anchor_loss out of order");
    loss_ = (store_.dtype() == Dtype::BF16) ? anchor_loss_impl<Bf16Mat>()
                                            : anchor_loss_impl<PlainMat<float>>();
    phase_ = Phase::Backward;
    return loss_;
}

template <typename WM>
void Engine::backward_impl() {
    const ModelConfig& m = store_.config();
    const i64 tokens = m.batch * m.seq;
    const BlockDims dims{m.batch, m.seq, m.hidden, m.ffn};
    const i64 n_block = m.block_params();
    const std::size_t h_bytes = static_cast<std::size_t>(4 * tokens * m.hidden);

    for (i64 b = m.layers / m.k_ckpt; b >= 0; --b) {
        const i64 lo = b * m.k_ckpt + 1;
        const i64 hi = std::min((b + 1) * m.k_ckpt, m.layers);
        if (lo > hi) continue;   // empty top block when K divides L
        std::memcpy(arena_.h_roll(h_cur_), arena_.load_checkpoint(b * m.k_ckpt), h_bytes);
        std::vector<DeviceArena::StackActs> block_acts;
        block_acts.reserve(static_cast<std::size_t>(hi - lo + 1));
        for (i64 i = lo; i <= hi; ++i) {
            auto [buf, w_op] = stream_tile(i);
            arena_.bind(buf, buf, store_.tile(i).offset_table());
            const auto w = template_block_weights<WM>(arena_.tmpl(buf), m.hidden, m.ffn);
            auto sa = arena_.push_acts();
            std::memcpy(sa.input, arena_.h_roll(h_cur_), h_bytes);
            block_forward(sa.input, w, dims, sa.acts, arena_.h_roll(h_cur_ ^ 1),
                          arena_.scratch());
            ++recompute_forwards_;
            StreamOp op;
            op.stream = StreamId::Compute;
            op.kind = OpKind::Recompute;
            op.layer = i;
            op.buf = buf;
            op.flops = fwd_flops(n_block, tokens);
            op.deps.push_back(w_op);
            last_reader_[buf] = trace_.add(std::move(op));
            arena_.release_template(buf);
            h_cur_ ^= 1;
            block_acts.push_back(sa);
        }
        for (i64 i = hi; i >= lo; --i) {
            auto [buf, w_op] = stream_tile(i);
            arena_.bind(buf, buf, store_.tile(i).offset_table());
            const auto w = template_block_weights<WM>(arena_.tmpl(buf), m.hidden, m.ffn);
            const auto& sa = block_acts[static_cast<std::size_t>(i - lo)];
            float* grad = arena_.grad_acc();
            std::memset(grad, 0, static_cast<std::size_t>(4 * n_block));
            const BlockGradPtrs<float> gp = grad_ptrs_for(store_.tile(i), grad);
            block_backward(sa.input, w, dims, sa.acts, arena_.g_roll(g_cur_),
                           arena_.g_roll(g_cur_ ^ 1), gp, arena_.scratch());
            i64 lb_op;
            {
                StreamOp op;
                op.stream = StreamId::Compute;
                op.kind = OpKind::LocalBackward;
                op.layer = i;
                op.buf = buf;
                op.flops = bwd_flops(n_block, tokens);
                op.deps.push_back(w_op);
                lb_op = trace_.add(std::move(op));
                last_reader_[buf] = lb_op;
            }
            write_grads_to_buffer(arena_.buffer_data(buf), n_block);
            arena_.release_template(buf);
            evacuate(i, arena_.buffer_data(buf), n_block, lb_op, buf);
            arena_.pop_acts();
            g_cur_ ^= 1;
        }
        arena_.release_checkpoint(b * m.k_ckpt);
    }
    // Embedding backward: scatter-add of g_0 by token id; consumes no weights.
    const i64 n_embed = m.embed_params();
    float* grad = arena_.grad_acc();
    std::memset(grad, 0, static_cast<std::size_t>(4 * n_embed));
    embed_bwd_acc(batch_.tokens.data(), arena_.g_roll(g_cur_), grad, tokens, m.hidden,
                  m.vocab);
    i64 lb_op;
    {
        StreamOp op;
        op.stream = StreamId::Compute;
        op.kind = OpKind::LocalBackward;
        op.layer = m.embed_tile_id();
        op.flops = bwd_flops(n_embed, tokens);
        lb_op = trace_.add(std::move(op));
    }
    std::byte* flat = arena_.flatten();
    if (store_.dtype() == Dtype::BF16) {
        auto* out = reinterpret_cast<std::uint16_t*>(flat);
        for (i64 i = 0; i < n_embed; ++i) out[i] = bf16_bits_from_f32(grad[i]);
    } else {
        std::memcpy(flat, grad, static_cast<std::size_t>(4 * n_embed));
    }
    evacuate(m.embed_tile_id(), flat, n_embed, lb_op, -1);
}

void Engine::backward_blockwise() {
    if (phase_ != Phase::Backward) throw ProtocolError("backward_blockwise out of order");
    if (store_.dtype() == Dtype::BF16)
        backward_impl<Bf16Mat>();
    else
        backward_impl<PlainMat<float>>();
    phase_ = Phase::Optimize;
}

StepResult Engine::finish_step() {
    if (phase_ != Phase::Optimize) throw ProtocolError("finish_step out of order");
    // Drain every outstanding slab, in the order it became ready.
    if (pool_.threaded()) {
        pool_.drain(store_);
        for (const auto& pa : pending_) emit_accum(pa);
    } else {
        for (const auto& pa : pending_) {
            pool_.accumulate(store_, pa.slab);
            emit_accum(pa);
        }
    }
    pending_.clear();

    if (!opts_.eager_optim && !opts_.skip_optimizer) {
        std::vector<i64> accum_ids;
        for (const auto& op : trace_.ops)
            if (op.kind == OpKind::Accum) accum_ids.push_back(op.id);
        adam_step(store_, hyper_, step_t_);
        StreamOp op;
        op.stream = StreamId::Host;
        op.kind = OpKind::OptStep;
        op.params = store_.total_params();
        op.deps = std::move(accum_ids);
        trace_.add(std::move(op));
    }
    if (!opts_.skip_optimizer) store_.set_adam_steps(step_t_);

    // Transient device state ends with the step.
    for (int b = 0; b < 2; ++b)
        if (arena_.buffer_occupant(b) != -1) arena_.release_buffer(b);
    arena_.release_workspace();
    staging_[0].clear();
    staging_[1].clear();

    StepResult r;
    r.loss = loss_;
    r.trace = std::move(trace_);
    r.arena = arena_.snapshot();
    r.host = host_bytes_report(store_, pool_, staging_[0], staging_[1]);
    r.h2d_bytes = arena_.h2d_bytes();
    r.d2h_bytes = pool_.d2h_bytes() - d2h_base_;
    r.recompute_forwards = recompute_forwards_;
    phase_ = Phase::Idle;
    return r;
}

StepResult Engine::train_step(const Batch& batch) {
    begin_step(batch);
    forward_streaming();
    anchor_loss();
    backward_blockwise();
    return finish_step();
}

Batch make_copy_task_batch(const ModelConfig& m, Rng& rng) {
    Batch b;
    const i64 n = m.batch * m.seq;
    b.tokens.resize(static_cast<std::size_t>(n));
    for (auto& t : b.tokens) t = rng.uniform_int(static_cast<std::int32_t>(m.vocab));
    b.targets = b.tokens;   // echo task: predict the current token
    return b;
}

}  // namespace hlm
