// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/numerics.hpp"

#include <stdexcept>

namespace hlm {

namespace {

void fill_random(Tensor& t, Rng& rng, float std_dev) {
    for (i64 i = 0; i < t.numel(); ++i) t.set(i, rng.trunc_normal(std_dev));
}

PlainMat<float> mat(const Tensor& t, i64 rows, i64 cols) {
    return PlainMat<float>{t.data(), rows, cols};
}

}  // namespace

BlockParams BlockParams::zeros(i64 h, i64 f, Dtype dtype) {
    BlockParams p;
    p.w_q = Tensor({h, h}, dtype);
    p.w_k = Tensor({h, h}, dtype);
    p.w_v = Tensor({h, h}, dtype);
    p.w_o = Tensor({h, h}, dtype);
    p.w_up = Tensor({h, f}, dtype);
    p.w_gate = Tensor({h, f}, dtype);
    p.w_down = Tensor({f, h}, dtype);
    p.norm1 = Tensor({h}, dtype);
    p.norm2 = Tensor({h}, dtype);
    return p;
}

BlockParams BlockParams::random(i64 h, i64 f, Rng& rng, Dtype dtype, float std_dev) {
    BlockParams p = zeros(h, f, dtype);
    fill_random(p.w_q, rng, std_dev);
    fill_random(p.w_k, rng, std_dev);
    fill_random(p.w_v, rng, std_dev);
    fill_random(p.w_o, rng, std_dev);
    fill_random(p.w_up, rng, std_dev);
    fill_random(p.w_gate, rng, std_dev);
    fill_random(p.w_down, rng, std_dev);
    p.norm1.fill(1.0f);
    p.norm2.fill(1.0f);
    return p;
}

i64 BlockParams::param_count() const {
    return w_q.numel() + w_k.numel() + w_v.numel() + w_o.numel() + w_up.numel() +
           w_gate.numel() + w_down.numel() + norm1.numel() + norm2.numel();
}

BlockWeights<PlainMat<float>> BlockParams::views() const {
    const i64 h = hidden(), f = ffn();
    BlockWeights<PlainMat<float>> w;
    w.w_q = mat(w_q, h, h);
    w.w_k = mat(w_k, h, h);
    w.w_v = mat(w_v, h, h);
    w.w_o = mat(w_o, h, h);
    w.w_up = mat(w_up, h, f);
    w.w_gate = mat(w_gate, h, f);
    w.w_down = mat(w_down, f, h);
    w.norm1 = mat(norm1, 1, h);
    w.norm2 = mat(norm2, 1, h);
    return w;
}

namespace {

BlockDims dims_for(const Tensor& h_in, const BlockParams& params) {
    const auto& s = h_in.shape();
    if (s.size() != 3) throw std::invalid_argument("block input must be (batch, seq, hidden)");
    if (s[2] != params.hidden())
        throw std::invalid_argument("block input hidden size does not match parameters");
    return BlockDims{s[0], s[1], params.hidden(), params.ffn()};
}

}  // namespace

std::pair<Tensor, BlockActivations> block_forward(const Tensor& h_in, const BlockParams& params) {
    const BlockDims d = dims_for(h_in, params);
    BlockActivations acts;
    acts.h_in = h_in;
    acts.n1 = Tensor({d.batch, d.seq, d.hidden});
    acts.p = Tensor({d.batch, d.seq, d.seq});
    acts.y = Tensor({d.batch, d.seq, d.hidden});
    acts.n2 = Tensor({d.batch, d.seq, d.hidden});
    acts.up = Tensor({d.batch, d.seq, d.ffn});
    acts.gate = Tensor({d.batch, d.seq, d.ffn});
    Tensor h_out({d.batch, d.seq, d.hidden});
    ScratchBuf<float> scratch(d.batch, d.seq, d.hidden, d.ffn);
    block_forward(h_in.data(), params.views(), d, acts.ptrs(), h_out.data(), scratch.view());
    return {std::move(h_out), std::move(acts)};
}

std::pair<Tensor, BlockParams> block_local_backward(const Tensor& h_in,
                                                    const BlockActivations& acts,
                                                    const Tensor& g_out,
                                                    const BlockParams& params) {
    const BlockDims d = dims_for(h_in, params);
    if (g_out.shape() != h_in.shape())
        throw std::invalid_argument("g_out shape must match block output shape");
    if (acts.n1.shape() != h_in.shape() || acts.up.numel() != d.rows() * d.ffn)
        throw std::invalid_argument("activations do not match (h_in, params); stale acts");
    Tensor g_in({d.batch, d.seq, d.hidden});
    BlockParams grads = BlockParams::zeros(d.hidden, d.ffn, Dtype::FP32);
    BlockGradPtrs<float> gp{grads.w_q.data(),    grads.w_k.data(),  grads.w_v.data(),
                            grads.w_o.data(),    grads.w_up.data(), grads.w_gate.data(),
                            grads.w_down.data(), grads.norm1.data(), grads.norm2.data()};
    ScratchBuf<float> scratch(d.batch, d.seq, d.hidden, d.ffn);
    // Re-point the activation views at const storage.
    ActPtrs<float> ap{const_cast<float*>(acts.n1.data()), const_cast<float*>(acts.p.data()),
                      const_cast<float*>(acts.y.data()),  const_cast<float*>(acts.n2.data()),
                      const_cast<float*>(acts.up.data()), const_cast<float*>(acts.gate.data())};
    block_backward(h_in.data(), params.views(), d, ap, g_out.data(), g_in.data(), gp,
                   scratch.view());
    return {std::move(g_in), std::move(grads)};
}

Tensor embed_forward(const std::vector<std::int32_t>& tokens, const Tensor& table,
                     i64 batch, i64 seq) {
    const i64 vocab = table.shape()[0];
    const i64 h = table.shape()[1];
    if (static_cast<i64>(tokens.size()) != batch * seq)
        throw std::invalid_argument("token count must equal batch * seq");
    Tensor out({batch, seq, h});
    embed_fwd(tokens.data(), PlainMat<float>{table.data(), vocab, h}, out.data(),
              batch * seq, h);
    return out;
}

Tensor embed_backward(const std::vector<std::int32_t>& tokens, const Tensor& g, i64 vocab) {
    const auto& s = g.shape();
    const i64 h = s[2];
    Tensor d_table({vocab, h});
    embed_bwd_acc(tokens.data(), g.data(), d_table.data(), s[0] * s[1], h, vocab);
    return d_table;
}

Tensor head_forward(const Tensor& h, const Tensor& head) {
    const auto& s = h.shape();
    const i64 vocab = head.shape()[0];
    Tensor logits({s[0], s[1], vocab});
    head_fwd(h.data(), PlainMat<float>{head.data(), vocab, head.shape()[1]}, logits.data(),
             s[0] * s[1], s[2], vocab);
    return logits;
}

std::pair<Tensor, Tensor> head_backward(const Tensor& h, const Tensor& d_logits,
                                        const Tensor& head) {
    const auto& s = h.shape();
    const i64 vocab = head.shape()[0];
    Tensor d_h({s[0], s[1], s[2]});
    Tensor d_head({vocab, s[2]});
    head_bwd(h.data(), d_logits.data(), PlainMat<float>{head.data(), vocab, head.shape()[1]},
             d_h.data(), d_head.data(), s[0] * s[1], s[2], vocab);
    return {std::move(d_h), std::move(d_head)};
}

std::pair<float, Tensor> loss_and_grad(const Tensor& logits,
                                       const std::vector<std::int32_t>& targets) {
    const auto& s = logits.shape();
    const i64 rows = s[0] * s[1];
    const i64 vocab = s[2];
    if (static_cast<i64>(targets.size()) != rows)
        throw std::invalid_argument("target count must equal batch * seq");
    Tensor d_logits({s[0], s[1], vocab});
    const float loss = ce_loss_and_grad(logits.data(), targets.data(), d_logits.data(),
                                        rows, vocab);
    return {loss, std::move(d_logits)};
}

}  // namespace hlm
