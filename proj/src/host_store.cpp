// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/host_store.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

#include "hlm/bf16.hpp"

namespace hlm {

namespace {

constexpr i64 kTileAlign = 4096;

float load_elem(const std::byte* base, Dtype dtype, i64 i) {
    if (dtype == Dtype::BF16) {
        std::uint16_t bits;
        std::memcpy(&bits, base + 2 * i, 2);
        return f32_from_bf16_bits(bits);
    }
    float v;
    std::memcpy(&v, base + 4 * i, 4);
    return v;
}

void store_elem(std::byte* base, Dtype dtype, i64 i, float v) {
    if (dtype == Dtype::BF16) {
        const std::uint16_t bits = bf16_bits_from_f32(v);
        std::memcpy(base + 2 * i, &bits, 2);
    } else {
        std::memcpy(base + 4 * i, &v, 4);
    }
}

}  // namespace

LayerTile::LayerTile(i64 layer_id, i64 n_params, Dtype dtype, std::vector<NamedRegion> offsets)
    : layer_id_(layer_id), n_params_(n_params), dtype_(dtype), offsets_(std::move(offsets)) {
    if (n_params <= 0) throw ConfigError("layer tile with zero-sized dimension");
    i64 covered = 0;
    for (const auto& r : offsets_) {
        if (r.offset != covered)
            throw ProtocolError("tile offset table has a gap or overlap at '" + r.name + "'");
        covered += r.numel();
    }
    if (covered != n_params) throw ProtocolError("tile offset table does not cover the tile");
    const std::size_t need = static_cast<std::size_t>(byte_size() + kTileAlign);
    storage_ = std::make_unique<std::byte[]>(need);
    auto addr = reinterpret_cast<std::uintptr_t>(storage_.get());
    const std::uintptr_t aligned = (addr + kTileAlign - 1) & ~static_cast<std::uintptr_t>(kTileAlign - 1);
    base_ = storage_.get() + (aligned - addr);
    std::memset(base_, 0, static_cast<std::size_t>(byte_size()));
}

float LayerTile::load_weight(i64 i) const { return load_elem(weights_raw(), dtype_, i); }
void LayerTile::store_weight(i64 i, float v) { store_elem(weights_raw(), dtype_, i, v); }
float LayerTile::load_grad(i64 i) const { return load_elem(grads_raw(), dtype_, i); }
void LayerTile::store_grad(i64 i, float v) { store_elem(grads_raw(), dtype_, i, v); }

std::vector<float> LayerTile::export_weights_f32() const {
    std::vector<float> out(static_cast<std::size_t>(n_params_));
    for (i64 i = 0; i < n_params_; ++i) out[static_cast<std::size_t>(i)] = load_weight(i);
    return out;
}

std::vector<NamedRegion> block_offset_table(i64 h, i64 f) {
    std::vector<NamedRegion> t;
    i64 off = 0;
    auto add = [&](const char* name, std::vector<i64> shape) {
        NamedRegion r{name, off, std::move(shape)};
        off += r.numel();
        t.push_back(std::move(r));
    };
    add("w_q", {h, h});
    add("w_k", {h, h});
    add("w_v", {h, h});
    add("w_o", {h, h});
    add("w_up", {h, f});
    add("w_gate", {h, f});
    add("w_down", {f, h});
    add("norm1", {h});
    add("norm2", {h});
    return t;
}

std::vector<NamedRegion> table_offset_table(const std::string& name, i64 vocab, i64 h) {
    return {NamedRegion{name, 0, {vocab, h}}};
}

MasterStore::MasterStore(const ModelConfig& config, Dtype dtype)
    : config_(config), dtype_(dtype) {
    config_.validate();
    const i64 h = config_.hidden, f = config_.ffn, v = config_.vocab;
    tiles_.push_back(std::make_unique<LayerTile>(config_.embed_tile_id(), v * h, dtype,
                                                 table_offset_table("embed", v, h)));
    physical_of_.push_back(0);
    for (i64 l = 1; l <= config_.layers; ++l) {
        tiles_.push_back(std::make_unique<LayerTile>(l, config_.block_params(), dtype,
                                                     block_offset_table(h, f)));
        physical_of_.push_back(static_cast<i64>(tiles_.size()) - 1);
    }
    if (config_.tie_embeddings) {
        physical_of_.push_back(0);   // head aliases the embedding tile
    } else {
        tiles_.push_back(std::make_unique<LayerTile>(config_.head_tile_id(), v * h, dtype,
                                                     table_offset_table("head", v, h)));
        physical_of_.push_back(static_cast<i64>(tiles_.size()) - 1);
    }
    for (const auto& t : tiles_) total_params_ += t->n_params();
}

i64 MasterStore::consumer_count(i64 physical_idx) const {
    i64 n = 0;
    for (i64 l = 0; l < logical_tiles(); ++l)
        if (physical_of_[l] == physical_idx) ++n;
    return n;
}

i64 MasterStore::persistent_bytes() const {
    i64 total = 0;
    for (const auto& t : tiles_) total += t->byte_size();
    return total;
}

bool MasterStore::bitwise_equal(const MasterStore& other) const {
    if (physical_tiles() != other.physical_tiles()) return false;
    for (i64 i = 0; i < physical_tiles(); ++i) {
        const LayerTile& a = physical(i);
        const LayerTile& b = other.physical(i);
        if (a.n_params() != b.n_params() || a.dtype() != b.dtype()) return false;
        if (std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.byte_size())) != 0)
            return false;
    }
    return true;
}

std::unique_ptr<MasterStore> build_store(const ModelConfig& config, std::uint64_t seed,
                                         Dtype dtype) {
    auto store = std::make_unique<MasterStore>(config, dtype);
    Rng rng(seed);
    for (i64 p = 0; p < store->physical_tiles(); ++p) {
        LayerTile& tile = store->physical(p);
        for (const auto& region : tile.offset_table()) {
            const bool is_norm = region.name == "norm1" || region.name == "norm2";
            const i64 n = region.numel();
            for (i64 i = 0; i < n; ++i)
                tile.store_weight(region.offset + i,
                                  is_norm ? 1.0f : rng.trunc_normal(0.02f));
        }
    }
    return store;
}

void pack_layer(const MasterStore& store, i64 layer_id, StagingBuffer& buf) {
    const LayerTile& tile = store.tile(layer_id);
    const i64 bytes = tile.weight_bytes();
    if (bytes > buf.capacity())
        throw ProtocolError("staging buffer narrower than layer " + std::to_string(layer_id) +
                            "; capacity sizing bug");
    std::memcpy(buf.payload_.data(), tile.weights_raw(), static_cast<std::size_t>(bytes));
    buf.occupant_ = layer_id;
    buf.payload_bytes_ = bytes;
    buf.pack_copies_ += 1;
}

const char* slab_state_name(SlabState s) {
    switch (s) {
        case SlabState::FREE: return "FREE";
        case SlabState::IN_FLIGHT: return "IN_FLIGHT";
        case SlabState::READY: return "READY";
        case SlabState::ACCUMULATING: return "ACCUMULATING";
    }
    return "?";
}

SlabPool::SlabPool(i64 n_slabs, i64 slab_capacity_bytes) : capacity_(slab_capacity_bytes) {
    if (n_slabs <= 0) throw ConfigError("slab pool needs at least one slab");
    slabs_.resize(static_cast<std::size_t>(n_slabs));
    for (i64 i = 0; i < n_slabs; ++i) {
        slabs_[static_cast<std::size_t>(i)].id = i;
        slabs_[static_cast<std::size_t>(i)].payload.resize(
            static_cast<std::size_t>(slab_capacity_bytes));
    }
}

SlabPool::~SlabPool() { stop_worker(); }

SlabState SlabPool::state(i64 slab_id) const {
    std::lock_guard<std::mutex> lk(mu_);
    return slabs_[static_cast<std::size_t>(slab_id)].state;
}

i64 SlabPool::acquire(MasterStore& store) {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
        for (auto& s : slabs_) {
            if (s.state == SlabState::FREE) {
                s.state = SlabState::IN_FLIGHT;
                ++in_use_;
                if (in_use_ > max_in_use_) max_in_use_ = in_use_;
                return s.id;
            }
        }
        if (worker_running_) {
            cv_.wait(lk);   // back-pressure: block until the worker frees one
        } else {
            // Single-threaded back-pressure: accumulate in line, oldest first.
            if (ready_fifo_.empty())
                throw ProtocolError("slab pool exhausted with nothing to accumulate");
            const i64 id = ready_fifo_.front();
            accumulate_locked(store, id, lk);
        }
    }
}

i64 SlabPool::try_acquire() {
    std::lock_guard<std::mutex> lk(mu_);
    for (auto& s : slabs_) {
        if (s.state == SlabState::FREE) {
            s.state = SlabState::IN_FLIGHT;
            ++in_use_;
            if (in_use_ > max_in_use_) max_in_use_ = in_use_;
            return s.id;
        }
    }
    return -1;
}

i64 SlabPool::oldest_ready() const {
    std::lock_guard<std::mutex> lk(mu_);
    return ready_fifo_.empty() ? -1 : ready_fifo_.front();
}

void SlabPool::fill(i64 slab_id, i64 layer_id, const std::byte* data, i64 bytes) {
    std::lock_guard<std::mutex> lk(mu_);
    GradSlab& s = slabs_[static_cast<std::size_t>(slab_id)];
    if (s.state != SlabState::IN_FLIGHT)
        throw ProtocolError(std::string("slab fill in state ") + slab_state_name(s.state));
    if (bytes > capacity_) throw ProtocolError("slab payload exceeds slab capacity");
    std::memcpy(s.payload.data(), data, static_cast<std::size_t>(bytes));
    s.layer_id = layer_id;
    s.payload_bytes = bytes;
    s.state = SlabState::READY;
    ready_fifo_.push_back(slab_id);
    d2h_bytes_ += bytes;
    d2h_copies_ += 1;
    cv_.notify_all();
}

void SlabPool::accumulate_locked(MasterStore& store, i64 slab_id,
                                 std::unique_lock<std::mutex>& lk) {
    GradSlab& s = slabs_[static_cast<std::size_t>(slab_id)];
    if (s.state != SlabState::ACCUMULATING) {
        if (s.state != SlabState::READY)
            throw ProtocolError(std::string("accumulate of slab in state ") +
                                slab_state_name(s.state));
        s.state = SlabState::ACCUMULATING;
    }
    if (!ready_fifo_.empty() && ready_fifo_.front() == slab_id) ready_fifo_.pop_front();
    const i64 layer = s.layer_id;
    const i64 bytes = s.payload_bytes;
    const i64 delay = accumulate_delay_us_;
    lk.unlock();
    if (delay > 0) std::this_thread::sleep_for(std::chrono::microseconds(delay));
    LayerTile& tile = store.tile(layer);
    const i64 n = tile.n_params();
    const Dtype dt = tile.dtype();
    if (bytes != n * tile.elem_size())
        throw ProtocolError("slab payload size does not match layer " + std::to_string(layer));
    for (i64 i = 0; i < n; ++i) {
        const float g = load_elem(s.payload.data(), dt, i);
        tile.store_grad(i, tile.load_grad(i) + g);
    }
    lk.lock();
    s.state = SlabState::FREE;
    s.layer_id = -1;
    s.payload_bytes = 0;
    --in_use_;
    cv_.notify_all();
}

void SlabPool::accumulate(MasterStore& store, i64 slab_id) {
    std::unique_lock<std::mutex> lk(mu_);
    accumulate_locked(store, slab_id, lk);
}

void SlabPool::drain(MasterStore& store) {
    if (worker_running_) {
        // Wait for the worker to finish everything outstanding.
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return in_use_ == 0; });
        return;
    }
    std::unique_lock<std::mutex> lk(mu_);
    while (!ready_fifo_.empty()) {
        const i64 id = ready_fifo_.front();
        accumulate_locked(store, id, lk);
    }
}

void SlabPool::start_worker(MasterStore& store) {
    if (worker_running_) return;
    worker_stop_ = false;
    worker_running_ = true;
    worker_ = std::make_unique<std::thread>([this, &store] {
        std::unique_lock<std::mutex> lk(mu_);
        for (;;) {
            cv_.wait(lk, [&] { return worker_stop_ || !ready_fifo_.empty(); });
            if (worker_stop_ && ready_fifo_.empty()) return;
            const i64 id = ready_fifo_.front();
            accumulate_locked(store, id, lk);
        }
    });
}

void SlabPool::stop_worker() {
    if (!worker_running_) return;
    {
        std::lock_guard<std::mutex> lk(mu_);
        worker_stop_ = true;
    }
    cv_.notify_all();
    worker_->join();
    worker_.reset();
    worker_running_ = false;
}

namespace {

void adam_update_tile(LayerTile& tile, const HyperParams& hyper, i64 t) {
    const i64 n = tile.n_params();
    for (i64 i = 0; i < n; ++i) {
        if (!std::isfinite(tile.load_grad(i)))
            throw NumericsError("non-finite gradient in layer " +
                                std::to_string(tile.layer_id()) + " at element " +
                                std::to_string(i) + "; step aborted");
    }
    const float lr = static_cast<float>(hyper.lr);
    const float b1 = static_cast<float>(hyper.beta1);
    const float b2 = static_cast<float>(hyper.beta2);
    const float eps = static_cast<float>(hyper.eps);
    const float wd = static_cast<float>(hyper.weight_decay);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
    float* m = tile.moment_m();
    float* v = tile.moment_v();
    for (i64 i = 0; i < n; ++i) {
        const float g = tile.load_grad(i);
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        float theta = tile.load_weight(i);
        theta -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
        tile.store_weight(i, theta);
        tile.store_grad(i, 0.0f);
    }
}

}  // namespace

void adam_step_tile(MasterStore& store, i64 physical_idx, const HyperParams& hyper, i64 t) {
    if (t < 1) throw ProtocolError("adam step index must be >= 1");
    adam_update_tile(store.physical(physical_idx), hyper, t);
}

void adam_step(MasterStore& store, const HyperParams& hyper, i64 t) {
    if (t < 1) throw ProtocolError("adam step index must be >= 1");
    // Validate all gradients first so a failed step leaves the store intact.
    for (i64 p = 0; p < store.physical_tiles(); ++p) {
        LayerTile& tile = store.physical(p);
        for (i64 i = 0; i < tile.n_params(); ++i) {
            if (!std::isfinite(tile.load_grad(i)))
                throw NumericsError("non-finite gradient in layer " +
                                    std::to_string(tile.layer_id()) + " at element " +
                                    std::to_string(i) + "; step aborted");
        }
    }
    for (i64 p = 0; p < store.physical_tiles(); ++p)
        adam_update_tile(store.physical(p), hyper, t);
}

HostBytesReport host_bytes_report(const MasterStore& store, const SlabPool& pool,
                                  const StagingBuffer& stage0, const StagingBuffer& stage1) {
    HostBytesReport r;
    r.persistent = store.persistent_bytes();
    r.slabs = pool.pool_bytes();
    r.staging = stage0.capacity() + stage1.capacity();
    r.total = r.persistent + r.slabs + r.staging;
    return r;
}

}  // namespace hlm
