// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Simulated device memory: one byte-budgeted allocation carved into two
// streaming buffers, a LIFO activation stack, checkpoint anchor slots and a
// fixed workspace. Nothing is allocated after construction; every claim and
// release flows through an exact ledger, and exceeding any capacity is a
// deterministic error.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/footprint.hpp"
#include "hlm/host_store.hpp"
#include "hlm/kernels.hpp"
#include "hlm/model_config.hpp"

namespace hlm {

enum class Region : int { Stream0 = 0, Stream1 = 1, Stack = 2, Anchors = 3, Workspace = 4 };
inline constexpr int kRegionCount = 5;
const char* region_name(Region r);

struct LedgerEvent {
    int region;
    i64 delta;
};

class ArenaLedger {
public:
    void init_region(Region r, i64 capacity);
    void claim(Region r, i64 bytes);
    void release(Region r, i64 bytes);
    void begin_step();

    i64 capacity(Region r) const { return cap_[static_cast<int>(r)]; }
    i64 current(Region r) const { return cur_[static_cast<int>(r)]; }
    i64 step_peak(Region r) const { return peak_[static_cast<int>(r)]; }
    i64 total_capacity() const;
    i64 total_current() const { return total_cur_; }
    i64 step_peak_total() const { return total_peak_; }
    i64 step_peak_non_anchor() const { return na_peak_; }
    const std::vector<LedgerEvent>& events() const { return events_; }
    std::array<i64, kRegionCount> step_start_current() const { return start_cur_; }

private:
    std::array<i64, kRegionCount> cap_{};
    std::array<i64, kRegionCount> cur_{};
    std::array<i64, kRegionCount> peak_{};
    std::array<i64, kRegionCount> start_cur_{};
    i64 total_cur_ = 0, total_peak_ = 0;
    i64 na_cur_ = 0, na_peak_ = 0;
    std::vector<LedgerEvent> events_;
};

struct ArenaSnapshot {
    struct RegionStat {
        std::string name;
        i64 capacity;
        i64 current;
        i64 step_peak;
    };
    std::vector<RegionStat> regions;
    i64 committed_total = 0;        // sum of region capacities, fixed at construction
    i64 committed_core = 0;         // committed_total minus the anchor region
    i64 step_peak_total = 0;        // max over the step of instantaneous claimed bytes
    i64 step_peak_non_anchor = 0;
};

// Handle returned by stream_in.
struct BoundBuffer {
    int buf = -1;
    i64 layer_id = -1;
    i64 bytes = 0;
};

// A reusable kernel slot: owns no storage, only views into a streaming
// buffer once bound. Exactly two exist (ping-pong A/B).
struct LayerTemplate {
    enum class State { Unbound, Bound } state = State::Unbound;
    int buf = -1;
    i64 layer_id = -1;
    const std::byte* data = nullptr;
    const std::vector<NamedRegion>* offsets = nullptr;
};

// Builds dtype-typed weight views from a bound template with zero copies.
template <typename WM>
BlockWeights<WM> template_block_weights(const LayerTemplate& t, i64 h, i64 f);

class DeviceArena {
public:
    // budget_cap, when given, is a hard limit the computed footprint must
    // fit; construction fails with the first region that does not fit.
    DeviceArena(const ModelConfig& config, Dtype dtype,
                std::optional<i64> budget_cap = std::nullopt);

    const ModelConfig& config() const { return cfg_; }
    Dtype dtype() const { return dtype_; }
    const ArenaFootprint& footprint() const { return fp_; }

    void begin_step();
    ArenaSnapshot snapshot() const;
    const ArenaLedger& ledger() const { return ledger_; }

    // --- streaming buffers ---
    BoundBuffer stream_in(int buf_idx, const StagingBuffer& staged);
    void release_buffer(int buf_idx);
    i64 buffer_occupant(int buf_idx) const { return buf_occupant_[buf_idx]; }
    std::byte* buffer_data(int buf_idx);
    const std::byte* buffer_data(int buf_idx) const;
    i64 buffer_bytes(int buf_idx) const { return buf_bytes_[buf_idx]; }
    i64 h2d_bytes() const { return h2d_bytes_; }
    i64 h2d_copies() const { return h2d_copies_; }

    // --- templates ---
    LayerTemplate& tmpl(int i) { return templates_[i]; }
    void bind(int tmpl_idx, int buf_idx, const std::vector<NamedRegion>& offsets);
    void release_template(int tmpl_idx);

    // --- activation stack ---
    struct StackActs {
        float* input = nullptr;   // the block input h_{i-1}, stored with the slab
        ActPtrs<float> acts;
    };
    StackActs push_acts();
    void pop_acts();
    i64 stack_depth() const { return static_cast<i64>(stack_entries_.size()); }

    // --- checkpoint anchors ---
    void anchor_checkpoint(i64 layer_index, const float* h);
    const float* load_checkpoint(i64 layer_index) const;
    void release_checkpoint(i64 layer_index);

    // --- workspace ---
    void claim_workspace();
    void release_workspace();
    float* h_roll(int i) { return ws_h_[i]; }
    float* g_roll(int i) { return ws_g_[i]; }
    float* logits() { return ws_logits_; }
    float* d_logits() { return ws_d_logits_; }
    const Scratch<float>& scratch() const { return scratch_; }
    float* grad_acc() { return ws_grad_acc_; }
    std::byte* flatten() { return ws_flatten_; }
    ActPtrs<float> discard_acts() { return discard_acts_; }

private:
    ActPtrs<float> carve_acts(float* base);
    float* anchor_slot(i64 layer_index) const;

    ModelConfig cfg_;
    Dtype dtype_;
    ArenaFootprint fp_;
    ArenaLedger ledger_;
    std::vector<std::byte> storage_;
    std::byte* stream_[2] = {nullptr, nullptr};
    std::byte* stack_base_ = nullptr;
    std::byte* anchors_base_ = nullptr;
    std::byte* ws_base_ = nullptr;

    i64 buf_occupant_[2] = {-1, -1};
    i64 buf_bytes_[2] = {0, 0};
    std::array<LayerTemplate, 2> templates_{};
    std::vector<i64> stack_entries_;   // byte sizes, LIFO
    i64 stack_top_ = 0;                // byte offset of next push
    std::vector<bool> anchor_live_;
    bool workspace_claimed_ = false;

    float* ws_h_[2] = {nullptr, nullptr};
    float* ws_g_[2] = {nullptr, nullptr};
    float* ws_logits_ = nullptr;
    float* ws_d_logits_ = nullptr;
    Scratch<float> scratch_{};
    float* ws_grad_acc_ = nullptr;
    std::byte* ws_flatten_ = nullptr;
    ActPtrs<float> discard_acts_{};

    i64 h2d_bytes_ = 0;
    i64 h2d_copies_ = 0;
};

template <typename WM>
BlockWeights<WM> template_block_weights(const LayerTemplate& t, i64 h, i64 f) {
    if (t.state != LayerTemplate::State::Bound)
        throw ProtocolError("weights requested from an unbound template");
    auto view = [&](const char* name, i64 rows, i64 cols) -> WM {
        for (const auto& r : *t.offsets) {
            if (r.name == name) {
                using ElemPtr = decltype(WM{}.ptr);
                return WM{reinterpret_cast<ElemPtr>(t.data) + r.offset, rows, cols};
            }
        }
        throw ProtocolError(std::string("template has no tensor named ") + name);
    };
    BlockWeights<WM> w;
    w.w_q = view("w_q", h, h);
    w.w_k = view("w_k", h, h);
    w.w_v = view("w_v", h, h);
    w.w_o = view("w_o", h, h);
    w.w_up = view("w_up", h, f);
    w.w_gate = view("w_gate", h, f);
    w.w_down = view("w_down", f, h);
    w.norm1 = view("norm1", 1, h);
    w.norm2 = view("norm2", 1, h);
    return w;
}

}  // namespace hlm
