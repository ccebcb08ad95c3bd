// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference trainer: a naive full-graph FP32 tape over fine-grained
// primitives. Softmax, RMSNorm and attention backward all emerge from the
// chain rule over those primitives rather than from the closed forms the
// streaming kernels use, so agreement between the two is evidence, not
// tautology. Memory-unbounded by design; it keeps every activation.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hlm/engine.hpp"
#include "hlm/host_store.hpp"
#include "hlm/model_config.hpp"

namespace hlm::oracle {

using hlm::i64;

class Tape {
public:
    struct Node {
        std::vector<i64> shape;
        std::vector<float> val;
        std::vector<float> grad;
        std::function<void(Tape&)> back;   // empty for leaves
    };

    i64 input(std::vector<i64> shape, const float* src);
    i64 constant_like(std::vector<i64> shape, float v);

    const std::vector<float>& val(i64 id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const std::vector<float>& grad(i64 id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    const std::vector<i64>& shape(i64 id) const { return nodes_[static_cast<std::size_t>(id)].shape; }

    // Reverse pass in exact reverse creation order, seeded at loss_id.
    void backward(i64 loss_id, float seed = 1.0f);

    // --- primitives ---
    i64 matmul(i64 a, i64 b);                    // (r,k) x (k,n)
    i64 matmul_nt(i64 a, i64 b);                 // (r,k) x (n,k)^T -> (r,n)
    i64 bmm(i64 a, i64 b);                       // (B,r,k) x (B,k,n)
    i64 transpose_last(i64 a);                   // (B,r,c) -> (B,c,r)
    i64 add(i64 a, i64 b);
    i64 sub(i64 a, i64 b);
    i64 mul(i64 a, i64 b);
    i64 scale(i64 a, float s);
    i64 add_scalar(i64 a, float s);
    i64 add_constant(i64 a, std::vector<float> c);    // c is data, not a node
    i64 sigmoid(i64 a);
    i64 exp_(i64 a);
    i64 log_(i64 a);
    i64 rsqrt(i64 a);
    i64 recip(i64 a);
    i64 sum_last(i64 a);                         // (...,r,c) -> (...,r,1)
    i64 mul_bcast_last(i64 a, i64 b);            // b is (...,r,1)
    i64 mul_row_vec(i64 a, i64 v);               // v is (c)
    i64 gather_rows(i64 table, const std::vector<std::int32_t>& ids);
    i64 pick(i64 a, const std::vector<std::int32_t>& ids);   // (r,c) -> (r,1)
    i64 mean_all(i64 a);                         // -> (1)
    i64 reshape(i64 a, std::vector<i64> shape);

private:
    i64 push(std::vector<i64> shape, std::vector<float> val, std::function<void(Tape&)> back);
    i64 numel(i64 id) const { return static_cast<i64>(nodes_[static_cast<std::size_t>(id)].val.size()); }
    std::vector<Node> nodes_;
};

struct BlockTensors {
    std::vector<float> w_q, w_k, w_v, w_o, w_up, w_gate, w_down, norm1, norm2;
};

struct Params {
    ModelConfig config;
    std::vector<float> embed;          // (V, h)
    std::vector<BlockTensors> blocks;
    std::vector<float> head;           // (V, h); aliases embed when tied

    static Params from_store(const MasterStore& store);
    void zero();
};

struct ForwardBackward {
    float loss = 0.0f;
    Params grads;   // tied models report the shared-table gradient in .embed
};

// Full-graph loss and exact gradients; loss_seed scales the injected
// cotangent (0 checks the zero-cotangent property).
ForwardBackward oracle_forward_backward(const Params& params, const Batch& batch,
                                        float loss_seed = 1.0f);

float oracle_loss(const Params& params, const Batch& batch);

struct AdamMoments {
    Params m;   // moment buffers share the Params layout
    Params v;
};

// Plain training loop: oracle_forward_backward + the same decoupled
// weight-decay Adam formula, all FP32.
std::vector<float> oracle_train(Params& params, const HyperParams& hyper, i64 steps,
                                std::uint64_t data_seed);

void oracle_adam_update(Params& params, const Params& grads, AdamMoments& mom,
                        const HyperParams& hyper, i64 t);

}  // namespace hlm::oracle
