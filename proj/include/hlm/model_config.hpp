// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Model / hardware / optimizer configuration types shared by every layer of
// the stack, plus the per-tile parameter-count walk they all derive from.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hlm {

using i64 = std::int64_t;

struct ModelConfig {
    std::int64_t layers = 0;       // transformer block count L
    std::int64_t hidden = 0;       // h
    std::int64_t ffn = 0;          // f
    std::int64_t vocab = 0;        // V
    std::int64_t seq = 0;
    std::int64_t batch = 0;
    std::int64_t k_ckpt = 1;       // checkpoint interval
    bool tie_embeddings = false;

    void validate() const {
        auto positive = [](std::int64_t v, const char* name) {
            if (v <= 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
        };
        positive(layers, "layers");
        positive(hidden, "hidden");
        positive(ffn, "ffn");
        positive(vocab, "vocab");
        positive(seq, "seq");
        positive(batch, "batch");
        positive(k_ckpt, "k_ckpt");
        if (k_ckpt > layers) throw std::invalid_argument("model config: k_ckpt must not exceed layers");
    }

    std::int64_t block_params() const { return 4 * hidden * hidden + 3 * hidden * ffn + 2 * hidden; }
    std::int64_t embed_params() const { return vocab * hidden; }

    // Logical tiles in store order: embedding, L blocks, head. With tied
    // embeddings the head tile aliases the embedding region.
    std::int64_t tile_count() const { return layers + 2; }
    std::int64_t embed_tile_id() const { return 0; }
    std::int64_t head_tile_id() const { return layers + 1; }
    bool is_block_tile(std::int64_t id) const { return id >= 1 && id <= layers; }

    std::int64_t tile_params(std::int64_t tile_id) const {
        if (tile_id == embed_tile_id() || tile_id == head_tile_id()) return embed_params();
        if (is_block_tile(tile_id)) return block_params();
        throw std::out_of_range("tile id out of range");
    }

    // Widest tile's parameter count (embedding and head included; they are
    // streamed through the same buffers as blocks).
    std::int64_t max_tile_params() const {
        std::int64_t m = embed_params();
        if (block_params() > m) m = block_params();
        return m;
    }

    // Unique physical parameters: the tied head/embedding region counts once.
    std::int64_t total_params() const {
        std::int64_t p = embed_params() + layers * block_params();
        if (!tie_embeddings) p += embed_params();
        return p;
    }

    std::int64_t anchor_count() const { return layers / k_ckpt + 1; }          // anchors that actually exist
    std::int64_t anchor_capacity() const { return (layers + k_ckpt - 1) / k_ckpt + 1; }
};

struct HardwareConfig {
    double host_bytes = 0.0;
    double device_bytes = 0.0;
    double pcie_bytes_per_s = 0.0;   // effective per-direction host<->device bandwidth
    double device_flops = 0.0;       // sustained flop/s
    double pageable_penalty = 2.0;   // transfer-time multiplier for unpinned staging
    double cpu_optim_rate = 1e9;     // optimizer throughput, params/s

    void validate() const {
        if (host_bytes <= 0 || device_bytes <= 0 || pcie_bytes_per_s <= 0 || device_flops <= 0 ||
            pageable_penalty <= 0 || cpu_optim_rate <= 0)
            throw std::invalid_argument("hardware config: all rates and capacities must be positive");
    }
};

struct HyperParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

}  // namespace hlm
