// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// The authoritative CPU-side parameter store. Every persistent training
// state lives here: weights and gradients in the store dtype plus FP32 Adam
// moments, packed per layer into one contiguous tile. Staging buffers and
// the gradient slab pool are the only other host allocations, and both are
// fixed-capacity.

#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/footprint.hpp"
#include "hlm/model_config.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

struct NamedRegion {
    std::string name;
    i64 offset = 0;   // elements from the weight-region base
    std::vector<i64> shape;
    i64 numel() const {
        i64 n = 1;
        for (i64 d : shape) n *= d;
        return n;
    }
};

// One layer's contiguous host block: [weights][grads][moment_m][moment_v]
// with no gaps, the whole tile aligned to 4096 bytes.
class LayerTile {
public:
    LayerTile(i64 layer_id, i64 n_params, Dtype dtype, std::vector<NamedRegion> offsets);

    i64 layer_id() const { return layer_id_; }
    i64 n_params() const { return n_params_; }
    Dtype dtype() const { return dtype_; }
    const std::vector<NamedRegion>& offset_table() const { return offsets_; }

    // Exact tile byte size: n * (2e + 8) where e is the dtype element size.
    i64 byte_size() const { return n_params_ * (2 * elem_size() + 8); }
    i64 elem_size() const { return static_cast<i64>(dtype_size(dtype_)); }
    i64 weight_bytes() const { return n_params_ * elem_size(); }

    std::byte* weights_raw() { return base_; }
    const std::byte* weights_raw() const { return base_; }
    std::byte* grads_raw() { return base_ + weight_bytes(); }
    const std::byte* grads_raw() const { return base_ + weight_bytes(); }
    float* moment_m() { return reinterpret_cast<float*>(base_ + 2 * weight_bytes()); }
    float* moment_v() { return moment_m() + n_params_; }
    const std::byte* raw() const { return base_; }
    std::byte* raw() { return base_; }

    float load_weight(i64 i) const;
    void store_weight(i64 i, float v);
    float load_grad(i64 i) const;
    void store_grad(i64 i, float v);

    std::vector<float> export_weights_f32() const;

private:
    i64 layer_id_;
    i64 n_params_;
    Dtype dtype_;
    std::vector<NamedRegion> offsets_;
    std::unique_ptr<std::byte[]> storage_;
    std::byte* base_ = nullptr;   // 4096-aligned
};

// Builds the canonical per-tile offset tables.
std::vector<NamedRegion> block_offset_table(i64 h, i64 f);
std::vector<NamedRegion> table_offset_table(const std::string& name, i64 vocab, i64 h);

class MasterStore {
public:
    MasterStore(const ModelConfig& config, Dtype dtype);

    const ModelConfig& config() const { return config_; }
    Dtype dtype() const { return dtype_; }

    i64 logical_tiles() const { return config_.tile_count(); }
    i64 physical_tiles() const { return static_cast<i64>(tiles_.size()); }

    // Resolves through the alias map.
    LayerTile& tile(i64 logical_id) { return *tiles_[physical_of_[logical_id]]; }
    const LayerTile& tile(i64 logical_id) const { return *tiles_[physical_of_[logical_id]]; }
    LayerTile& physical(i64 idx) { return *tiles_[idx]; }
    const LayerTile& physical(i64 idx) const { return *tiles_[idx]; }
    i64 physical_index(i64 logical_id) const { return physical_of_[logical_id]; }
    bool is_aliased(i64 logical_id) const {
        return config_.tie_embeddings && logical_id == config_.head_tile_id();
    }
    // Number of logical tiles mapping onto a physical tile.
    i64 consumer_count(i64 physical_idx) const;

    i64 total_params() const { return total_params_; }
    i64 persistent_bytes() const;   // aliases counted once

    i64 adam_steps() const { return adam_steps_; }
    void set_adam_steps(i64 t) { adam_steps_ = t; }
    void bump_adam_steps() { ++adam_steps_; }

    bool bitwise_equal(const MasterStore& other) const;

private:
    ModelConfig config_;
    Dtype dtype_;
    std::vector<std::unique_ptr<LayerTile>> tiles_;
    std::vector<i64> physical_of_;
    i64 total_params_ = 0;
    i64 adam_steps_ = 0;
};

// Allocates and deterministically initializes a store: truncated-normal
// matrix weights (std 0.02), unit norm scales, zero gradients and moments.
std::unique_ptr<MasterStore> build_store(const ModelConfig& config, std::uint64_t seed,
                                         Dtype dtype = Dtype::BF16);

// Fixed-capacity host staging buffer; "pinned" is an attribute consumed by
// the scheduler's transfer-time model only.
class StagingBuffer {
public:
    StagingBuffer(i64 capacity_bytes, bool pinned = true)
        : capacity_(capacity_bytes), pinned_(pinned),
          payload_(static_cast<std::size_t>(capacity_bytes)) {}

    i64 capacity() const { return capacity_; }
    bool pinned() const { return pinned_; }
    i64 occupant() const { return occupant_; }
    i64 payload_bytes() const { return payload_bytes_; }
    const std::byte* payload() const { return payload_.data(); }
    std::byte* payload() { return payload_.data(); }
    i64 pack_copies() const { return pack_copies_; }

    void clear() { occupant_ = -1; payload_bytes_ = 0; }

    friend void pack_layer(const MasterStore& store, i64 layer_id, StagingBuffer& buf);

private:
    i64 capacity_;
    bool pinned_;
    std::vector<std::byte> payload_;
    i64 occupant_ = -1;
    i64 payload_bytes_ = 0;
    i64 pack_copies_ = 0;
};

// Single contiguous copy of a layer's weights into the staging buffer.
void pack_layer(const MasterStore& store, i64 layer_id, StagingBuffer& buf);

enum class SlabState : std::uint8_t { FREE = 0, IN_FLIGHT = 1, READY = 2, ACCUMULATING = 3 };

const char* slab_state_name(SlabState s);

struct GradSlab {
    i64 id = -1;
    SlabState state = SlabState::FREE;
    i64 layer_id = -1;        // logical tile the payload belongs to
    i64 payload_bytes = 0;
    std::vector<std::byte> payload;
};

// Bounded pool of gradient return slabs with a strict
// FREE -> IN_FLIGHT -> READY -> ACCUMULATING -> FREE state machine.
// Accumulation may run inline on the caller or on a worker thread; either
// way slabs are consumed in the order they became READY.
class SlabPool {
public:
    SlabPool(i64 n_slabs, i64 slab_capacity_bytes);
    ~SlabPool();

    i64 size() const { return static_cast<i64>(slabs_.size()); }
    i64 slab_capacity() const { return capacity_; }
    i64 pool_bytes() const { return size() * capacity_; }
    SlabState state(i64 slab_id) const;
    i64 d2h_bytes() const { return d2h_bytes_; }
    i64 d2h_copies() const { return d2h_copies_; }
    i64 max_in_use() const { return max_in_use_; }

    // Claims a FREE slab (FREE -> IN_FLIGHT). With none available: inline
    // mode accumulates pending READY slabs on the calling thread; threaded
    // mode blocks until the worker frees one. Never allocates.
    i64 acquire(MasterStore& store);

    // Non-blocking claim; -1 when no slab is FREE.
    i64 try_acquire();

    // Oldest READY slab, or -1.
    i64 oldest_ready() const;

    // Copies the payload and completes the transfer (IN_FLIGHT -> READY).
    void fill(i64 slab_id, i64 layer_id, const std::byte* data, i64 bytes);

    // READY -> ACCUMULATING -> FREE: widen, add into the master gradient
    // region, re-round in the store dtype.
    void accumulate(MasterStore& store, i64 slab_id);

    // Accumulates every outstanding READY slab in arrival order.
    void drain(MasterStore& store);

    void start_worker(MasterStore& store);
    void stop_worker();
    bool threaded() const { return worker_running_; }

    // Test hook: artificial delay per accumulation, to force back-pressure.
    void set_accumulate_delay_us(i64 us) { accumulate_delay_us_ = us; }

private:
    void accumulate_locked(MasterStore& store, i64 slab_id, std::unique_lock<std::mutex>& lk);

    i64 capacity_;
    std::vector<GradSlab> slabs_;
    std::deque<i64> ready_fifo_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    i64 d2h_bytes_ = 0;
    i64 d2h_copies_ = 0;
    i64 in_use_ = 0;
    i64 max_in_use_ = 0;
    i64 accumulate_delay_us_ = 0;
    bool worker_running_ = false;
    bool worker_stop_ = false;
    std::unique_ptr<std::thread> worker_;
};

// Decoupled-weight-decay Adam with bias correction, applied in place on the
// store. FP32 math; weights re-round through the store dtype; grads zeroed.
void adam_step(MasterStore& store, const HyperParams& hyper, i64 t);
void adam_step_tile(MasterStore& store, i64 physical_idx, const HyperParams& hyper, i64 t);

struct HostBytesReport {
    i64 persistent = 0;
    i64 slabs = 0;
    i64 staging = 0;
    i64 total = 0;
};

HostBytesReport host_bytes_report(const MasterStore& store, const SlabPool& pool,
                                  const StagingBuffer& stage0, const StagingBuffer& stage1);

}  // namespace hlm
