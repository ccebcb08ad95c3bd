// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/device_arena.hpp"

#include <cstring>

namespace hlm {

const char* region_name(Region r) {
    switch (r) {
        case Region::Stream0: return "stream_buf[0]";
        case Region::Stream1: return "stream_buf[1]";
        case Region::Stack: return "activation_stack";
        case Region::Anchors: return "ckpt_anchors";
        case Region::Workspace: return "workspace";
    }
    return "?";
}

void ArenaLedger::init_region(Region r, i64 capacity) {
    cap_[static_cast<int>(r)] = capacity;
}

void ArenaLedger::claim(Region r, i64 bytes) {
    const int i = static_cast<int>(r);
    if (cur_[i] + bytes > cap_[i])
        throw ArenaOomError(region_name(r), cur_[i] + bytes, cap_[i]);
    cur_[i] += bytes;
    if (cur_[i] > peak_[i]) peak_[i] = cur_[i];
    total_cur_ += bytes;
    if (total_cur_ > total_peak_) total_peak_ = total_cur_;
    if (r != Region::Anchors) {
        na_cur_ += bytes;
        if (na_cur_ > na_peak_) na_peak_ = na_cur_;
    }
    events_.push_back({i, bytes});
}

void ArenaLedger::release(Region r, i64 bytes) {
    const int i = static_cast<int>(r);
    if (bytes > cur_[i]) throw ProtocolError("ledger release exceeds current claim");
    cur_[i] -= bytes;
    total_cur_ -= bytes;
    if (r != Region::Anchors) na_cur_ -= bytes;
    events_.push_back({i, -bytes});
}

void ArenaLedger::begin_step() {
    for (int i = 0; i < kRegionCount; ++i) {
        peak_[i] = cur_[i];
        start_cur_[i] = cur_[i];
    }
    total_peak_ = total_cur_;
    na_peak_ = na_cur_;
    events_.clear();
}

i64 ArenaLedger::total_capacity() const {
    i64 t = 0;
    for (i64 c : cap_) t += c;
    return t;
}

DeviceArena::DeviceArena(const ModelConfig& config, Dtype dtype, std::optional<i64> budget_cap)
    : cfg_(config), dtype_(dtype), fp_(arena_footprint(config, dtype)) {
    cfg_.validate();
    if (budget_cap) {
        i64 remaining = *budget_cap;
        auto need = [&](Region r, i64 bytes) {
            if (bytes > remaining) throw ArenaOomError(region_name(r), bytes, remaining);
            remaining -= bytes;
        };
        need(Region::Stream0, fp_.stream_buf);
        need(Region::Stream1, fp_.stream_buf);
        need(Region::Stack, fp_.stack);
        need(Region::Anchors, fp_.anchors_total());
        need(Region::Workspace, fp_.workspace);
    }
    ledger_.init_region(Region::Stream0, fp_.stream_buf);
    ledger_.init_region(Region::Stream1, fp_.stream_buf);
    ledger_.init_region(Region::Stack, fp_.stack);
    ledger_.init_region(Region::Anchors, fp_.anchors_total());
    ledger_.init_region(Region::Workspace, fp_.workspace);

    storage_.resize(static_cast<std::size_t>(fp_.total()));
    std::byte* base = storage_.data();
    stream_[0] = base;
    stream_[1] = base + fp_.stream_buf;
    stack_base_ = base + 2 * fp_.stream_buf;
    anchors_base_ = stack_base_ + fp_.stack;
    ws_base_ = anchors_base_ + fp_.anchors_total();
    anchor_live_.assign(static_cast<std::size_t>(fp_.anchor_slots), false);

    // Carve the workspace into its fixed sub-areas.
    const i64 rows = cfg_.batch * cfg_.seq;
    float* fbase = reinterpret_cast<float*>(ws_base_);
    auto take = [&](i64 n) { float* p = fbase; fbase += n; return p; };
    ws_h_[0] = take(rows * cfg_.hidden);
    ws_h_[1] = take(rows * cfg_.hidden);
    ws_g_[0] = take(rows * cfg_.hidden);
    ws_g_[1] = take(rows * cfg_.hidden);
    ws_logits_ = take(rows * cfg_.vocab);
    ws_d_logits_ = take(rows * cfg_.vocab);
    scratch_.q = take(rows * cfg_.hidden);
    scratch_.k = take(rows * cfg_.hidden);
    scratch_.v = take(rows * cfg_.hidden);
    scratch_.attn = take(rows * cfg_.hidden);
    scratch_.th0 = take(rows * cfg_.hidden);
    scratch_.th1 = take(rows * cfg_.hidden);
    scratch_.th2 = take(rows * cfg_.hidden);
    scratch_.th3 = take(rows * cfg_.hidden);
    scratch_.pbuf = take(cfg_.batch * cfg_.seq * cfg_.seq);
    scratch_.fa = take(rows * cfg_.ffn);
    scratch_.fb = take(rows * cfg_.ffn);
    scratch_.fc = take(rows * cfg_.ffn);
    discard_acts_ = carve_acts(take(block_act_floats(cfg_)));
    ws_grad_acc_ = take(cfg_.max_tile_params());
    ws_flatten_ = reinterpret_cast<std::byte*>(fbase);
}

ActPtrs<float> DeviceArena::carve_acts(float* base) {
    const i64 rows = cfg_.batch * cfg_.seq;
    ActPtrs<float> a;
    auto take = [&](i64 n) { float* p = base; base += n; return p; };
    a.n1 = take(rows * cfg_.hidden);
    a.p = take(cfg_.batch * cfg_.seq * cfg_.seq);
    a.y = take(rows * cfg_.hidden);
    a.n2 = take(rows * cfg_.hidden);
    a.up = take(rows * cfg_.ffn);
    a.gate = take(rows * cfg_.ffn);
    // The block input is stored first in each stack slab; discard-mode acts
    // reuse h_roll instead, so no input slot is carved here.
    return a;
}

void DeviceArena::begin_step() {
    ledger_.begin_step();
    h2d_bytes_ = 0;
    h2d_copies_ = 0;
}

ArenaSnapshot DeviceArena::snapshot() const {
    ArenaSnapshot s;
    for (int i = 0; i < kRegionCount; ++i) {
        const Region r = static_cast<Region>(i);
        s.regions.push_back({region_name(r), ledger_.capacity(r), ledger_.current(r),
                             ledger_.step_peak(r)});
    }
    s.committed_total = ledger_.total_capacity();
    s.committed_core = s.committed_total - ledger_.capacity(Region::Anchors);
    s.step_peak_total = ledger_.step_peak_total();
    s.step_peak_non_anchor = ledger_.step_peak_non_anchor();
    return s;
}

BoundBuffer DeviceArena::stream_in(int buf_idx, const StagingBuffer& staged) {
    if (buf_idx < 0 || buf_idx > 1) throw ProtocolError("bad stream buffer index");
    if (buf_occupant_[buf_idx] != -1)
        throw ProtocolError("stream_in into a busy buffer; scheduler protocol violation");
    if (staged.occupant() < 0) throw ProtocolError("stream_in from an empty staging buffer");
    const i64 bytes = staged.payload_bytes();
    ledger_.claim(buf_idx == 0 ? Region::Stream0 : Region::Stream1, bytes);
    std::memcpy(stream_[buf_idx], staged.payload(), static_cast<std::size_t>(bytes));
    buf_occupant_[buf_idx] = staged.occupant();
    buf_bytes_[buf_idx] = bytes;
    h2d_bytes_ += bytes;
    h2d_copies_ += 1;
    return BoundBuffer{buf_idx, staged.occupant(), bytes};
}

void DeviceArena::release_buffer(int buf_idx) {
    if (buf_occupant_[buf_idx] == -1) throw ProtocolError("double release of a stream buffer");
    ledger_.release(buf_idx == 0 ? Region::Stream0 : Region::Stream1, buf_bytes_[buf_idx]);
    buf_occupant_[buf_idx] = -1;
    buf_bytes_[buf_idx] = 0;
}

std::byte* DeviceArena::buffer_data(int buf_idx) { return stream_[buf_idx]; }
const std::byte* DeviceArena::buffer_data(int buf_idx) const { return stream_[buf_idx]; }

void DeviceArena::bind(int tmpl_idx, int buf_idx, const std::vector<NamedRegion>& offsets) {
    LayerTemplate& t = templates_[static_cast<std::size_t>(tmpl_idx)];
    if (t.state != LayerTemplate::State::Unbound)
        throw ProtocolError("double bind of a layer template");
    if (buf_occupant_[buf_idx] == -1) throw ProtocolError("bind to an empty stream buffer");
    t.state = LayerTemplate::State::Bound;
    t.buf = buf_idx;
    t.layer_id = buf_occupant_[buf_idx];
    t.data = stream_[buf_idx];
    t.offsets = &offsets;
}

void DeviceArena::release_template(int tmpl_idx) {
    LayerTemplate& t = templates_[static_cast<std::size_t>(tmpl_idx)];
    if (t.state != LayerTemplate::State::Bound)
        throw ProtocolError("release of an unbound template");
    t.state = LayerTemplate::State::Unbound;
    t.buf = -1;
    t.layer_id = -1;
    t.data = nullptr;
    t.offsets = nullptr;
}

DeviceArena::StackActs DeviceArena::push_acts() {
    const i64 bytes = block_act_bytes(cfg_);
    ledger_.claim(Region::Stack, bytes);
    float* base = reinterpret_cast<float*>(stack_base_ + stack_top_);
    stack_entries_.push_back(bytes);
    stack_top_ += bytes;
    const i64 rows = cfg_.batch * cfg_.seq;
    StackActs sa;
    auto take = [&](i64 n) { float* p = base; base += n; return p; };
    // slab layout: input, n1, p, y, n2, up, gate
    sa.input = take(rows * cfg_.hidden);
    sa.acts.n1 = take(rows * cfg_.hidden);
    sa.acts.p = take(cfg_.batch * cfg_.seq * cfg_.seq);
    sa.acts.y = take(rows * cfg_.hidden);
    sa.acts.n2 = take(rows * cfg_.hidden);
    sa.acts.up = take(rows * cfg_.ffn);
    sa.acts.gate = take(rows * cfg_.ffn);
    return sa;
}

void DeviceArena::pop_acts() {
    if (stack_entries_.empty()) throw ProtocolError("activation stack pop from empty stack");
    const i64 bytes = stack_entries_.back();
    stack_entries_.pop_back();
    stack_top_ -= bytes;
    ledger_.release(Region::Stack, bytes);
}

float* DeviceArena::anchor_slot(i64 layer_index) const {
    if (layer_index % cfg_.k_ckpt != 0)
        throw ProtocolError("checkpoint index not a multiple of the checkpoint interval");
    const i64 slot = layer_index / cfg_.k_ckpt;
    if (slot < 0 || slot >= fp_.anchor_slots) throw ProtocolError("checkpoint slot out of range");
    return reinterpret_cast<float*>(const_cast<std::byte*>(anchors_base_) +
                                    slot * fp_.anchor_slot);
}

void DeviceArena::anchor_checkpoint(i64 layer_index, const float* h) {
    float* slot = anchor_slot(layer_index);
    const i64 idx = layer_index / cfg_.k_ckpt;
    if (anchor_live_[static_cast<std::size_t>(idx)])
        throw ProtocolError("checkpoint slot already live");
    ledger_.claim(Region::Anchors, fp_.anchor_slot);
    std::memcpy(slot, h, static_cast<std::size_t>(fp_.anchor_slot));
    anchor_live_[static_cast<std::size_t>(idx)] = true;
}

const float* DeviceArena::load_checkpoint(i64 layer_index) const {
    const i64 idx = layer_index / cfg_.k_ckpt;
    if (layer_index % cfg_.k_ckpt != 0 || idx >= fp_.anchor_slots ||
        !anchor_live_[static_cast<std::size_t>(idx)])
        throw ProtocolError("load of a never-anchored checkpoint index " +
                            std::to_string(layer_index));
    return anchor_slot(layer_index);
}

void DeviceArena::release_checkpoint(i64 layer_index) {
    const i64 idx = layer_index / cfg_.k_ckpt;
    if (!anchor_live_[static_cast<std::size_t>(idx)])
        throw ProtocolError("release of a non-live checkpoint");
    anchor_live_[static_cast<std::size_t>(idx)] = false;
    ledger_.release(Region::Anchors, fp_.anchor_slot);
}

void DeviceArena::claim_workspace() {
    if (workspace_claimed_) throw ProtocolError("workspace already claimed");
    ledger_.claim(Region::Workspace, fp_.workspace);
    workspace_claimed_ = true;
}

void DeviceArena::release_workspace() {
    if (!workspace_claimed_) throw ProtocolError("workspace not claimed");
    ledger_.release(Region::Workspace, fp_.workspace);
    workspace_claimed_ = false;
}

}  // namespace hlm
