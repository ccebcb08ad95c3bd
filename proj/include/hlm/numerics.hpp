// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-level wrappers over the block kernels: owning parameter and
// activation bundles plus value-semantics forward/backward entry points.
// The streaming engine talks to the kernels directly over arena memory;
// this surface exists for composition in tests and small tools.

#pragma once

#include <utility>

#include "hlm/kernels.hpp"
#include "hlm/tensor.hpp"

namespace hlm {

struct BlockParams {
    Tensor w_q, w_k, w_v, w_o;   // (h, h)
    Tensor w_up, w_gate;         // (h, f)
    Tensor w_down;               // (f, h)
    Tensor norm1, norm2;         // (h)

    static BlockParams zeros(i64 h, i64 f, Dtype dtype = Dtype::FP32);
    static BlockParams random(i64 h, i64 f, Rng& rng, Dtype dtype = Dtype::FP32,
                              float std_dev = 0.02f);

    i64 hidden() const { return norm1.numel(); }
    i64 ffn() const { return w_down.shape()[0]; }
    i64 param_count() const;
    Dtype dtype() const { return w_q.dtype(); }

    BlockWeights<PlainMat<float>> views() const;
};

struct BlockActivations {
    Tensor h_in;   // (batch, seq, h)
    Tensor n1;     // (batch, seq, h)
    Tensor p;      // (batch, seq, seq)
    Tensor y;      // (batch, seq, h)
    Tensor n2;     // (batch, seq, h)
    Tensor up;     // (batch, seq, f)
    Tensor gate;   // (batch, seq, f)

    // Exact byte total of the tensors actually stored.
    std::size_t byte_size() const {
        return h_in.byte_size() + n1.byte_size() + p.byte_size() + y.byte_size() +
               n2.byte_size() + up.byte_size() + gate.byte_size();
    }

    ActPtrs<float> ptrs() {
        return ActPtrs<float>{n1.data(), p.data(), y.data(), n2.data(), up.data(), gate.data()};
    }
    ActPtrs<const float> cptrs() const {
        return ActPtrs<const float>{n1.data(), p.data(), y.data(), n2.data(), up.data(),
                                    gate.data()};
    }
};

// Pre-norm attention + residual, pre-norm gated MLP + residual; returns the
// output and every intermediate the local backward consumes.
std::pair<Tensor, BlockActivations> block_forward(const Tensor& h_in, const BlockParams& params);

// Exact reverse-mode gradients of one block with respect to input and
// parameters. acts must come from block_forward on (h_in, params).
std::pair<Tensor, BlockParams> block_local_backward(const Tensor& h_in,
                                                    const BlockActivations& acts,
                                                    const Tensor& g_out,
                                                    const BlockParams& params);

Tensor embed_forward(const std::vector<std::int32_t>& tokens, const Tensor& table,
                     i64 batch, i64 seq);
Tensor embed_backward(const std::vector<std::int32_t>& tokens, const Tensor& g, i64 vocab);

Tensor head_forward(const Tensor& h, const Tensor& head);
std::pair<Tensor, Tensor> head_backward(const Tensor& h, const Tensor& d_logits,
                                        const Tensor& head);

std::pair<float, Tensor> loss_and_grad(const Tensor& logits,
                                       const std::vector<std::int32_t>& targets);

}  // namespace hlm
