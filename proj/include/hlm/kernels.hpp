// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-written transformer-block kernels: forward plus exact local backward,
// with no graph or tape. A block is pre-norm causal single-head attention
// with residual, then a pre-norm SiLU-gated MLP with residual. All math runs
// in the activation scalar type T; weights are read through an accessor so
// BF16 streaming buffers can feed the same kernels without widening copies.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hlm/bf16.hpp"

namespace hlm {

using i64 = std::int64_t;

template <typename T>
struct PlainMat {
    const T* ptr = nullptr;
    i64 rows = 0, cols = 0;
    T at(i64 r, i64 c) const { return ptr[r * cols + c]; }
};

// Read-only view over packed BF16 bits, widening each load to FP32.
struct Bf16Mat {
    const std::uint16_t* ptr = nullptr;
    i64 rows = 0, cols = 0;
    float at(i64 r, i64 c) const { return f32_from_bf16_bits(ptr[r * cols + c]); }
};

template <typename WM>
struct BlockWeights {
    WM w_q, w_k, w_v, w_o;   // (h, h)
    WM w_up, w_gate;         // (h, f)
    WM w_down;               // (f, h)
    WM norm1, norm2;         // (1, h)
};

struct BlockDims {
    i64 batch = 0, seq = 0, hidden = 0, ffn = 0;
    i64 rows() const { return batch * seq; }
};

// Saved intermediates consumed by the local backward pass. p is the causal
// attention probability matrix (batch, seq, seq); all others are (rows, h)
// or (rows, f).
template <typename T>
struct ActPtrs {
    T* n1 = nullptr;
    T* p = nullptr;
    T* y = nullptr;
    T* n2 = nullptr;
    T* up = nullptr;
    T* gate = nullptr;
};

template <typename T>
struct BlockGradPtrs {
    T* w_q = nullptr;
    T* w_k = nullptr;
    T* w_v = nullptr;
    T* w_o = nullptr;
    T* w_up = nullptr;
    T* w_gate = nullptr;
    T* w_down = nullptr;
    T* norm1 = nullptr;
    T* norm2 = nullptr;
};

// Reusable temporaries; sized once per engine, never per layer.
template <typename T>
struct Scratch {
    T* q = nullptr;      // (rows, h)
    T* k = nullptr;
    T* v = nullptr;
    T* attn = nullptr;
    T* th0 = nullptr;    // (rows, h) temporaries
    T* th1 = nullptr;
    T* th2 = nullptr;
    T* th3 = nullptr;
    T* pbuf = nullptr;   // (batch, seq, seq)
    T* fa = nullptr;     // (rows, f) temporaries
    T* fb = nullptr;
    T* fc = nullptr;
};

// Scratch element count for one engine; depends on width, never on depth.
inline i64 scratch_elems(i64 batch, i64 seq, i64 hidden, i64 ffn) {
    return batch * seq * (8 * hidden + 3 * ffn + seq);
}

// Owning scratch for tests and the Tensor-level wrappers.
template <typename T>
class ScratchBuf {
public:
    ScratchBuf(i64 batch, i64 seq, i64 hidden, i64 ffn)
        : store_(static_cast<std::size_t>(scratch_elems(batch, seq, hidden, ffn))) {
        const i64 rows = batch * seq;
        T* base = store_.data();
        auto take = [&](i64 n) { T* p = base; base += n; return p; };
        s_.q = take(rows * hidden);
        s_.k = take(rows * hidden);
        s_.v = take(rows * hidden);
        s_.attn = take(rows * hidden);
        s_.th0 = take(rows * hidden);
        s_.th1 = take(rows * hidden);
        s_.th2 = take(rows * hidden);
        s_.th3 = take(rows * hidden);
        s_.pbuf = take(batch * seq * seq);
        s_.fa = take(rows * ffn);
        s_.fb = take(rows * ffn);
        s_.fc = take(rows * ffn);
    }
    const Scratch<T>& view() const { return s_; }

private:
    std::vector<T> store_;
    Scratch<T> s_;
};

inline constexpr double kRmsNormEps = 1e-6;

// out[r, :] = x[r, :] * scale / rms(x[r, :])
template <typename T, typename WM>
void rmsnorm_fwd(const T* x, const WM& scale, T* out, i64 rows, i64 h) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * h;
        T* or_ = out + r * h;
        T ms = T(0);
        for (i64 j = 0; j < h; ++j) ms += xr[j] * xr[j];
        const T inv = T(1) / std::sqrt(ms / T(h) + T(kRmsNormEps));
        for (i64 j = 0; j < h; ++j) or_[j] = xr[j] * inv * T(scale.at(0, j));
    }
}

// g_x is assigned, g_scale accumulated.
template <typename T, typename WM>
void rmsnorm_bwd(const T* x, const WM& scale, const T* g_out, T* g_x, T* g_scale_acc,
                 i64 rows, i64 h) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * h;
        const T* gr = g_out + r * h;
        T* gx = g_x + r * h;
        T ms = T(0);
        for (i64 j = 0; j < h; ++j) ms += xr[j] * xr[j];
        const T inv = T(1) / std::sqrt(ms / T(h) + T(kRmsNormEps));
        T dot = T(0);
        for (i64 j = 0; j < h; ++j) {
            const T sj = T(scale.at(0, j));
            g_scale_acc[j] += gr[j] * xr[j] * inv;
            dot += gr[j] * sj * xr[j];
        }
        const T c = inv * inv * inv * dot / T(h);
        for (i64 j = 0; j < h; ++j) gx[j] = gr[j] * T(scale.at(0, j)) * inv - c * xr[j];
    }
}

// out[r, n] = sum_k a[r, k] * w(k, n); w is (K, N)
template <typename T, typename WM>
void matmul_nn(const T* a, const WM& w, T* out, i64 rows, i64 K, i64 N) {
    for (i64 r = 0; r < rows; ++r) {
        T* o = out + r * N;
        for (i64 n = 0; n < N; ++n) o[n] = T(0);
        const T* ar = a + r * K;
        for (i64 k = 0; k < K; ++k) {
            const T av = ar[k];
            for (i64 n = 0; n < N; ++n) o[n] += av * T(w.at(k, n));
        }
    }
}

// out[r, k] = sum_n a[r, n] * w(k, n); w is (K, N) applied transposed
template <typename T, typename WM>
void matmul_nt(const T* a, const WM& w, T* out, i64 rows, i64 N, i64 K, bool accumulate = false) {
    for (i64 r = 0; r < rows; ++r) {
        const T* ar = a + r * N;
        T* o = out + r * K;
        for (i64 k = 0; k < K; ++k) {
            T acc = T(0);
            for (i64 n = 0; n < N; ++n) acc += ar[n] * T(w.at(k, n));
            o[k] = accumulate ? o[k] + acc : acc;
        }
    }
}

// dw[k, n] += sum_r x[r, k] * g[r, n]
template <typename T>
void matmul_grad_acc(const T* x, const T* g, T* dw, i64 rows, i64 K, i64 N) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * K;
        const T* gr = g + r * N;
        for (i64 k = 0; k < K; ++k) {
            const T xv = xr[k];
            if (xv == T(0)) continue;
            T* d = dw + k * N;
            for (i64 n = 0; n < N; ++n) d[n] += xv * gr[n];
        }
    }
}

// Causal single-head attention over (batch, seq, h); p_out receives the
// masked softmax probabilities, attn_out = p · v.
template <typename T>
void attention_fwd(const T* q, const T* k, const T* v, T* p_out, T* attn_out,
                   i64 batch, i64 seq, i64 h) {
    const T scale = T(1) / std::sqrt(T(h));
    for (i64 b = 0; b < batch; ++b) {
        const T* qb = q + b * seq * h;
        const T* kb = k + b * seq * h;
        const T* vb = v + b * seq * h;
        T* pb = p_out + b * seq * seq;
        T* ab = attn_out + b * seq * h;
        for (i64 i = 0; i < seq; ++i) {
            T* pr = pb + i * seq;
            T mx = T(0);
            for (i64 j = 0; j <= i; ++j) {
                T s = T(0);
                for (i64 d = 0; d < h; ++d) s += qb[i * h + d] * kb[j * h + d];
                s *= scale;
                pr[j] = s;
                if (j == 0 || s > mx) mx = s;
            }
            T z = T(0);
            for (i64 j = 0; j <= i; ++j) {
                pr[j] = std::exp(pr[j] - mx);
                z += pr[j];
            }
            const T inv = T(1) / z;
            for (i64 j = 0; j <= i; ++j) pr[j] *= inv;
            for (i64 j = i + 1; j < seq; ++j) pr[j] = T(0);
            T* ar = ab + i * h;
            for (i64 d = 0; d < h; ++d) ar[d] = T(0);
            for (i64 j = 0; j <= i; ++j) {
                const T pij = pr[j];
                for (i64 d = 0; d < h; ++d) ar[d] += pij * vb[j * h + d];
            }
        }
    }
}

// Reverse of attention_fwd. dp_buf is (batch, seq, seq) scratch; d_q, d_k,
// d_v are assigned.
template <typename T>
void attention_bwd(const T* q, const T* k, const T* v, const T* p, const T* d_attn,
                   T* dp_buf, T* d_q, T* d_k, T* d_v, i64 batch, i64 seq, i64 h) {
    const T scale = T(1) / std::sqrt(T(h));
    for (i64 b = 0; b < batch; ++b) {
        const T* qb = q + b * seq * h;
        const T* kb = k + b * seq * h;
        const T* vb = v + b * seq * h;
        const T* pb = p + b * seq * seq;
        const T* gab = d_attn + b * seq * h;
        T* dpb = dp_buf + b * seq * seq;
        T* dqb = d_q + b * seq * h;
        T* dkb = d_k + b * seq * h;
        T* dvb = d_v + b * seq * h;
        for (i64 j = 0; j < seq * h; ++j) dvb[j] = T(0);
        for (i64 i = 0; i < seq; ++i) {
            const T* pr = pb + i * seq;
            T* dpr = dpb + i * seq;
            // d_p = d_attn · v^T ; d_v += p^T · d_attn
            for (i64 j = 0; j <= i; ++j) {
                T s = T(0);
                for (i64 d = 0; d < h; ++d) s += gab[i * h + d] * vb[j * h + d];
                dpr[j] = s;
                const T pij = pr[j];
                for (i64 d = 0; d < h; ++d) dvb[j * h + d] += pij * gab[i * h + d];
            }
            // softmax backward, in place on dp
            T dot = T(0);
            for (i64 j = 0; j <= i; ++j) dot += dpr[j] * pr[j];
            for (i64 j = 0; j <= i; ++j) dpr[j] = pr[j] * (dpr[j] - dot);
            for (i64 j = i + 1; j < seq; ++j) dpr[j] = T(0);
        }
        for (i64 i = 0; i < seq; ++i) {
            const T* dpr = dpb + i * seq;
            T* dqr = dqb + i * h;
            for (i64 d = 0; d < h; ++d) dqr[d] = T(0);
            for (i64 j = 0; j <= i; ++j) {
                const T ds = dpr[j] * scale;
                for (i64 d = 0; d < h; ++d) dqr[d] += ds * kb[j * h + d];
            }
        }
        for (i64 j = 0; j < seq * h; ++j) dkb[j] = T(0);
        for (i64 i = 0; i < seq; ++i) {
            const T* dpr = dpb + i * seq;
            for (i64 j = 0; j <= i; ++j) {
                const T ds = dpr[j] * scale;
                for (i64 d = 0; d < h; ++d) dkb[j * h + d] += ds * qb[i * h + d];
            }
        }
    }
}

template <typename T>
T silu(T z) {
    const T s = T(1) / (T(1) + std::exp(-z));
    return z * s;
}

template <typename T>
T silu_grad(T z) {
    const T s = T(1) / (T(1) + std::exp(-z));
    return s * (T(1) + z * (T(1) - s));
}

// h_out = block(h_in); every intermediate local backward needs is written
// through acts. h_out may not alias h_in.
template <typename T, typename WM>
void block_forward(const T* h_in, const BlockWeights<WM>& w, const BlockDims& d,
                   const ActPtrs<T>& acts, T* h_out, const Scratch<T>& s) {
    const i64 rows = d.rows(), h = d.hidden, f = d.ffn;
    rmsnorm_fwd(h_in, w.norm1, acts.n1, rows, h);
    matmul_nn(acts.n1, w.w_q, s.q, rows, h, h);
    matmul_nn(acts.n1, w.w_k, s.k, rows, h, h);
    matmul_nn(acts.n1, w.w_v, s.v, rows, h, h);
    attention_fwd(s.q, s.k, s.v, acts.p, s.attn, d.batch, d.seq, h);
    matmul_nn(s.attn, w.w_o, s.th0, rows, h, h);
    for (i64 i = 0; i < rows * h; ++i) acts.y[i] = h_in[i] + s.th0[i];
    rmsnorm_fwd(acts.y, w.norm2, acts.n2, rows, h);
    matmul_nn(acts.n2, w.w_up, acts.up, rows, h, f);
    matmul_nn(acts.n2, w.w_gate, acts.gate, rows, h, f);
    for (i64 i = 0; i < rows * f; ++i) s.fa[i] = acts.up[i] * silu(acts.gate[i]);
    matmul_nn(s.fa, w.w_down, s.th1, rows, f, h);
    for (i64 i = 0; i < rows * h; ++i) h_out[i] = acts.y[i] + s.th1[i];
}

// Exact reverse of block_forward. Parameter gradients are accumulated into
// gr (caller zeroes); g_in is assigned and may not alias g_out.
template <typename T, typename WM>
void block_backward(const T* h_in, const BlockWeights<WM>& w, const BlockDims& d,
                    const ActPtrs<T>& acts, const T* g_out, T* g_in,
                    const BlockGradPtrs<T>& gr, const Scratch<T>& s) {
    const i64 rows = d.rows(), h = d.hidden, f = d.ffn;
    // MLP branch
    for (i64 i = 0; i < rows * f; ++i) s.fa[i] = silu(acts.gate[i]);
    for (i64 i = 0; i < rows * f; ++i) s.fb[i] = acts.up[i] * s.fa[i];
    matmul_grad_acc(s.fb, g_out, gr.w_down, rows, f, h);
    matmul_nt(g_out, w.w_down, s.fb, rows, h, f);            // d_act
    for (i64 i = 0; i < rows * f; ++i) s.fc[i] = s.fb[i] * s.fa[i];                    // d_up
    for (i64 i = 0; i < rows * f; ++i) s.fb[i] = s.fb[i] * acts.up[i] * silu_grad(acts.gate[i]);  // d_gate
    matmul_grad_acc(acts.n2, s.fc, gr.w_up, rows, h, f);
    matmul_grad_acc(acts.n2, s.fb, gr.w_gate, rows, h, f);
    matmul_nt(s.fc, w.w_up, s.th0, rows, f, h);
    matmul_nt(s.fb, w.w_gate, s.th0, rows, f, h, /*accumulate=*/true);  // d_n2
    rmsnorm_bwd(acts.y, w.norm2, s.th0, s.th1, gr.norm2, rows, h);
    for (i64 i = 0; i < rows * h; ++i) s.th1[i] += g_out[i];  // d_y
    // attention branch; q, k, v, attn recomputed from saved n1 and p
    matmul_nn(acts.n1, w.w_q, s.q, rows, h, h);
    matmul_nn(acts.n1, w.w_k, s.k, rows, h, h);
    matmul_nn(acts.n1, w.w_v, s.v, rows, h, h);
    for (i64 b = 0; b < d.batch; ++b) {
        const T* pb = acts.p + b * d.seq * d.seq;
        const T* vb = s.v + b * d.seq * h;
        T* ab = s.attn + b * d.seq * h;
        for (i64 i = 0; i < d.seq; ++i) {
            T* ar = ab + i * h;
            for (i64 dd = 0; dd < h; ++dd) ar[dd] = T(0);
            for (i64 j = 0; j <= i; ++j) {
                const T pij = pb[i * d.seq + j];
                for (i64 dd = 0; dd < h; ++dd) ar[dd] += pij * vb[j * h + dd];
            }
        }
    }
    matmul_grad_acc(s.attn, s.th1, gr.w_o, rows, h, h);
    matmul_nt(s.th1, w.w_o, s.attn, rows, h, h);              // d_attn
    attention_bwd(s.q, s.k, s.v, acts.p, s.attn, s.pbuf, s.th0, s.th2, s.th3,
                  d.batch, d.seq, h);
    matmul_grad_acc(acts.n1, s.th0, gr.w_q, rows, h, h);
    matmul_grad_acc(acts.n1, s.th2, gr.w_k, rows, h, h);
    matmul_grad_acc(acts.n1, s.th3, gr.w_v, rows, h, h);
    matmul_nt(s.th0, w.w_q, s.q, rows, h, h);
    matmul_nt(s.th2, w.w_k, s.q, rows, h, h, /*accumulate=*/true);
    matmul_nt(s.th3, w.w_v, s.q, rows, h, h, /*accumulate=*/true);  // d_n1
    rmsnorm_bwd(h_in, w.norm1, s.q, s.k, gr.norm1, rows, h);
    for (i64 i = 0; i < rows * h; ++i) g_in[i] = s.th1[i] + s.k[i];
}

template <typename T, typename WM>
void embed_fwd(const std::int32_t* tokens, const WM& table, T* out, i64 n_tokens, i64 h) {
    for (i64 t = 0; t < n_tokens; ++t) {
        const std::int32_t id = tokens[t];
        if (id < 0 || id >= table.rows)
            throw std::out_of_range("embed_fwd: token id out of range");
        T* o = out + t * h;
        for (i64 j = 0; j < h; ++j) o[j] = T(table.at(id, j));
    }
}

// Scatter-adds token gradients into the (V, h) table gradient.
template <typename T>
void embed_bwd_acc(const std::int32_t* tokens, const T* g, T* d_table, i64 n_tokens,
                   i64 h, i64 vocab) {
    for (i64 t = 0; t < n_tokens; ++t) {
        const std::int32_t id = tokens[t];
        if (id < 0 || id >= vocab)
            throw std::out_of_range("embed_bwd: token id out of range");
        const T* gr = g + t * h;
        T* d = d_table + static_cast<i64>(id) * h;
        for (i64 j = 0; j < h; ++j) d[j] += gr[j];
    }
}

// logits = x · head^T with head stored (V, h), like the embedding table.
template <typename T, typename WM>
void head_fwd(const T* x, const WM& head, T* logits, i64 rows, i64 h, i64 vocab) {
    matmul_nt(x, head, logits, rows, h, vocab);
}

template <typename T, typename WM>
void head_bwd(const T* x, const T* d_logits, const WM& head, T* d_x, T* d_head_acc,
              i64 rows, i64 h, i64 vocab) {
    matmul_nn(d_logits, head, d_x, rows, vocab, h);
    matmul_grad_acc(d_logits, x, d_head_acc, rows, vocab, h);
}

// Mean token-level cross entropy; d_logits = (softmax - onehot) / rows.
template <typename T>
T ce_loss_and_grad(const T* logits, const std::int32_t* targets, T* d_logits,
                   i64 rows, i64 vocab) {
    T loss = T(0);
    const T inv_rows = T(1) / T(rows);
    for (i64 r = 0; r < rows; ++r) {
        const std::int32_t tgt = targets[r];
        if (tgt < 0 || tgt >= vocab)
            throw std::out_of_range("ce_loss_and_grad: target id out of range");
        const T* lr = logits + r * vocab;
        T* dr = d_logits + r * vocab;
        T mx = lr[0];
        for (i64 v = 1; v < vocab; ++v) mx = lr[v] > mx ? lr[v] : mx;
        T z = T(0);
        for (i64 v = 0; v < vocab; ++v) z += std::exp(lr[v] - mx);
        const T logz = std::log(z) + mx;
        loss += (logz - lr[tgt]) * inv_rows;
        const T invz = T(1) / z;
        for (i64 v = 0; v < vocab; ++v) dr[v] = std::exp(lr[v] - mx) * invz * inv_rows;
        dr[tgt] -= inv_rows;
    }
    return loss;
}

}  // namespace hlm
