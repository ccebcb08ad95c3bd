// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/oracle.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hlm::oracle {

namespace {

i64 product(const std::vector<i64>& shape) {
    i64 n = 1;
    for (i64 d : shape) n *= d;
    return n;
}

}  // namespace

i64 Tape::push(std::vector<i64> shape, std::vector<float> val, std::function<void(Tape&)> back) {
    Node n;
    n.shape = std::move(shape);
    n.val = std::move(val);
    n.grad.assign(n.val.size(), 0.0f);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<i64>(nodes_.size()) - 1;
}

i64 Tape::input(std::vector<i64> shape, const float* src) {
    std::vector<float> v(static_cast<std::size_t>(product(shape)));
    std::memcpy(v.data(), src, v.size() * sizeof(float));
    return push(std::move(shape), std::move(v), {});
}

i64 Tape::constant_like(std::vector<i64> shape, float value) {
    std::vector<float> v(static_cast<std::size_t>(product(shape)), value);
    return push(std::move(shape), std::move(v), {});
}

void Tape::backward(i64 loss_id, float seed) {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
    auto& g = nodes_[static_cast<std::size_t>(loss_id)].grad;
    std::fill(g.begin(), g.end(), seed);
    for (i64 i = static_cast<i64>(nodes_.size()) - 1; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this);
    }
}

i64 Tape::matmul(i64 a, i64 b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    const i64 r = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) throw std::invalid_argument("oracle matmul: inner dims differ");
    std::vector<float> v(static_cast<std::size_t>(r * n), 0.0f);
    const auto& av = val(a);
    const auto& bv = val(b);
    for (i64 i = 0; i < r; ++i)
        for (i64 j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (i64 t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * n + j];
            v[i * n + j] = acc;
        }
    const i64 out = push({r, n}, std::move(v), [a, b, r, k, n, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& bv2 = tp.val(b);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (i64 i = 0; i < r; ++i)
            for (i64 t = 0; t < k; ++t) {
                float acc = 0.0f;
                for (i64 j = 0; j < n; ++j) acc += g[i * n + j] * bv2[t * n + j];
                ga[i * k + t] += acc;
            }
        for (i64 t = 0; t < k; ++t)
            for (i64 j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (i64 i = 0; i < r; ++i) acc += av2[i * k + t] * g[i * n + j];
                gb[t * n + j] += acc;
            }
    });
    return out;
}

i64 Tape::matmul_nt(i64 a, i64 b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    const i64 r = sa[0], k = sa[1], n = sb[0];
    if (sb[1] != k) throw std::invalid_argument("oracle matmul_nt: inner dims differ");
    std::vector<float> v(static_cast<std::size_t>(r * n), 0.0f);
    const auto& av = val(a);
    const auto& bv = val(b);
    for (i64 i = 0; i < r; ++i)
        for (i64 j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (i64 t = 0; t < k; ++t) acc += av[i * k + t] * bv[j * k + t];
            v[i * n + j] = acc;
        }
    const i64 out = push({r, n}, std::move(v), [a, b, r, k, n, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& bv2 = tp.val(b);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (i64 i = 0; i < r; ++i)
            for (i64 t = 0; t < k; ++t) {
                float acc = 0.0f;
                for (i64 j = 0; j < n; ++j) acc += g[i * n + j] * bv2[j * k + t];
                ga[i * k + t] += acc;
            }
        for (i64 j = 0; j < n; ++j)
            for (i64 t = 0; t < k; ++t) {
                float acc = 0.0f;
                for (i64 i = 0; i < r; ++i) acc += g[i * n + j] * av2[i * k + t];
                gb[j * k + t] += acc;
            }
    });
    return out;
}

i64 Tape::bmm(i64 a, i64 b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    const i64 B = sa[0], r = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != B || sb[1] != k) throw std::invalid_argument("oracle bmm: shape mismatch");
    std::vector<float> v(static_cast<std::size_t>(B * r * n), 0.0f);
    const auto& av = val(a);
    const auto& bv = val(b);
    for (i64 bb = 0; bb < B; ++bb)
        for (i64 i = 0; i < r; ++i)
            for (i64 j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (i64 t = 0; t < k; ++t)
                    acc += av[(bb * r + i) * k + t] * bv[(bb * k + t) * n + j];
                v[(bb * r + i) * n + j] = acc;
            }
    const i64 out = push({B, r, n}, std::move(v),
                         [a, b, B, r, k, n, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& bv2 = tp.val(b);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (i64 bb = 0; bb < B; ++bb) {
            for (i64 i = 0; i < r; ++i)
                for (i64 t = 0; t < k; ++t) {
                    float acc = 0.0f;
                    for (i64 j = 0; j < n; ++j)
                        acc += g[(bb * r + i) * n + j] * bv2[(bb * k + t) * n + j];
                    ga[(bb * r + i) * k + t] += acc;
                }
            for (i64 t = 0; t < k; ++t)
                for (i64 j = 0; j < n; ++j) {
                    float acc = 0.0f;
                    for (i64 i = 0; i < r; ++i)
                        acc += av2[(bb * r + i) * k + t] * g[(bb * r + i) * n + j];
                    gb[(bb * k + t) * n + j] += acc;
                }
        }
    });
    return out;
}

i64 Tape::transpose_last(i64 a) {
    const auto& sa = shape(a);
    const i64 B = sa[0], r = sa[1], c = sa[2];
    std::vector<float> v(static_cast<std::size_t>(B * r * c));
    const auto& av = val(a);
    for (i64 bb = 0; bb < B; ++bb)
        for (i64 i = 0; i < r; ++i)
            for (i64 j = 0; j < c; ++j) v[(bb * c + j) * r + i] = av[(bb * r + i) * c + j];
    return push({B, c, r}, std::move(v), [a, B, r, c, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (i64 bb = 0; bb < B; ++bb)
            for (i64 i = 0; i < r; ++i)
                for (i64 j = 0; j < c; ++j) ga[(bb * r + i) * c + j] += g[(bb * c + j) * r + i];
    });
}

i64 Tape::add(i64 a, i64 b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.size() != bv.size()) throw std::invalid_argument("oracle add: size mismatch");
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    return push(shape(a), std::move(v), [a, b, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

i64 Tape::sub(i64 a, i64 b) { return add(a, scale(b, -1.0f)); }

i64 Tape::mul(i64 a, i64 b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    if (av.size() != bv.size()) throw std::invalid_argument("oracle mul: size mismatch");
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    return push(shape(a), std::move(v), [a, b, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& bv2 = tp.val(b);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av2[i];
        }
    });
}

i64 Tape::scale(i64 a, float s) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * s;
    return push(shape(a), std::move(v), [a, s, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
}

i64 Tape::add_scalar(i64 a, float s) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + s;
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

i64 Tape::add_constant(i64 a, std::vector<float> c) {
    const auto& av = val(a);
    if (av.size() != c.size()) throw std::invalid_argument("oracle add_constant: size mismatch");
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + c[i];
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

i64 Tape::sigmoid(i64 a) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f / (1.0f + std::exp(-av[i]));
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& ov = tp.val(out_id);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i] * (1.0f - ov[i]);
    });
}

i64 Tape::exp_(i64 a) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(av[i]);
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& ov = tp.val(out_id);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i];
    });
}

i64 Tape::log_(i64 a) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(av[i]);
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av2[i];
    });
}

i64 Tape::rsqrt(i64 a) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f / std::sqrt(av[i]);
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& ov = tp.val(out_id);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (-0.5f * ov[i] * ov[i] * ov[i]);
    });
}

i64 Tape::recip(i64 a) {
    const auto& av = val(a);
    std::vector<float> v(av.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f / av[i];
    return push(shape(a), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& ov = tp.val(out_id);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (-ov[i] * ov[i]);
    });
}

i64 Tape::sum_last(i64 a) {
    auto sh = shape(a);
    const i64 c = sh.back();
    const i64 rows = product(sh) / c;
    std::vector<float> v(static_cast<std::size_t>(rows), 0.0f);
    const auto& av = val(a);
    for (i64 i = 0; i < rows; ++i) {
        float acc = 0.0f;
        for (i64 j = 0; j < c; ++j) acc += av[i * c + j];
        v[static_cast<std::size_t>(i)] = acc;
    }
    sh.back() = 1;
    return push(std::move(sh), std::move(v),
                [a, rows, c, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (i64 i = 0; i < rows; ++i)
            for (i64 j = 0; j < c; ++j) ga[i * c + j] += g[static_cast<std::size_t>(i)];
    });
}

i64 Tape::mul_bcast_last(i64 a, i64 b) {
    const auto& sa = shape(a);
    const i64 c = sa.back();
    const i64 rows = product(sa) / c;
    if (product(shape(b)) != rows)
        throw std::invalid_argument("oracle mul_bcast_last: shape mismatch");
    std::vector<float> v(static_cast<std::size_t>(rows * c));
    const auto& av = val(a);
    const auto& bv = val(b);
    for (i64 i = 0; i < rows; ++i)
        for (i64 j = 0; j < c; ++j) v[i * c + j] = av[i * c + j] * bv[static_cast<std::size_t>(i)];
    return push(sa, std::move(v), [a, b, rows, c, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& bv2 = tp.val(b);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gb = tp.nodes_[static_cast<std::size_t>(b)].grad;
        for (i64 i = 0; i < rows; ++i) {
            float acc = 0.0f;
            for (i64 j = 0; j < c; ++j) {
                ga[i * c + j] += g[i * c + j] * bv2[static_cast<std::size_t>(i)];
                acc += g[i * c + j] * av2[i * c + j];
            }
            gb[static_cast<std::size_t>(i)] += acc;
        }
    });
}

i64 Tape::mul_row_vec(i64 a, i64 vvec) {
    const auto& sa = shape(a);
    const i64 c = sa.back();
    const i64 rows = product(sa) / c;
    if (product(shape(vvec)) != c)
        throw std::invalid_argument("oracle mul_row_vec: vector length mismatch");
    std::vector<float> v(static_cast<std::size_t>(rows * c));
    const auto& av = val(a);
    const auto& vv = val(vvec);
    for (i64 i = 0; i < rows; ++i)
        for (i64 j = 0; j < c; ++j) v[i * c + j] = av[i * c + j] * vv[static_cast<std::size_t>(j)];
    return push(sa, std::move(v),
                [a, vvec, rows, c, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        const auto& av2 = tp.val(a);
        const auto& vv2 = tp.val(vvec);
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        auto& gv = tp.nodes_[static_cast<std::size_t>(vvec)].grad;
        for (i64 i = 0; i < rows; ++i)
            for (i64 j = 0; j < c; ++j) {
                ga[i * c + j] += g[i * c + j] * vv2[static_cast<std::size_t>(j)];
                gv[static_cast<std::size_t>(j)] += g[i * c + j] * av2[i * c + j];
            }
    });
}

i64 Tape::gather_rows(i64 table, const std::vector<std::int32_t>& ids) {
    const auto& st = shape(table);
    const i64 h = st[1];
    const i64 n = static_cast<i64>(ids.size());
    std::vector<float> v(static_cast<std::size_t>(n * h));
    const auto& tv = val(table);
    for (i64 i = 0; i < n; ++i)
        for (i64 j = 0; j < h; ++j) v[i * h + j] = tv[static_cast<i64>(ids[i]) * h + j];
    return push({n, h}, std::move(v),
                [table, ids, n, h, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& gt = tp.nodes_[static_cast<std::size_t>(table)].grad;
        for (i64 i = 0; i < n; ++i)
            for (i64 j = 0; j < h; ++j) gt[static_cast<i64>(ids[i]) * h + j] += g[i * h + j];
    });
}

i64 Tape::pick(i64 a, const std::vector<std::int32_t>& ids) {
    const auto& sa = shape(a);
    const i64 c = sa.back();
    const i64 rows = product(sa) / c;
    std::vector<float> v(static_cast<std::size_t>(rows));
    const auto& av = val(a);
    for (i64 i = 0; i < rows; ++i) v[static_cast<std::size_t>(i)] = av[i * c + ids[i]];
    return push({rows, 1}, std::move(v),
                [a, ids, rows, c, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (i64 i = 0; i < rows; ++i)
            ga[i * c + ids[i]] += g[static_cast<std::size_t>(i)];
    });
}

i64 Tape::mean_all(i64 a) {
    const auto& av = val(a);
    const i64 n = static_cast<i64>(av.size());
    float acc = 0.0f;
    const float inv = 1.0f / static_cast<float>(n);
    for (float x : av) acc += x * inv;
    std::vector<float> v{acc};
    return push({1}, std::move(v), [a, n, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        const float s = g[0] / static_cast<float>(n);
        for (auto& x : ga) x += s;
    });
}

i64 Tape::reshape(i64 a, std::vector<i64> sh) {
    if (product(sh) != numel(a)) throw std::invalid_argument("oracle reshape: numel mismatch");
    std::vector<float> v = val(a);
    return push(std::move(sh), std::move(v), [a, out_id = static_cast<i64>(nodes_.size())](Tape& tp) {
        const auto& g = tp.nodes_[static_cast<std::size_t>(out_id)].grad;
        auto& ga = tp.nodes_[static_cast<std::size_t>(a)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------

Params Params::from_store(const MasterStore& store) {
    Params p;
    p.config = store.config();
    const ModelConfig& m = p.config;
    p.embed = store.tile(m.embed_tile_id()).export_weights_f32();
    p.blocks.resize(static_cast<std::size_t>(m.layers));
    for (i64 l = 1; l <= m.layers; ++l) {
        const LayerTile& tile = store.tile(l);
        const std::vector<float> flat = tile.export_weights_f32();
        BlockTensors& b = p.blocks[static_cast<std::size_t>(l - 1)];
        for (const auto& r : tile.offset_table()) {
            std::vector<float> t(flat.begin() + r.offset, flat.begin() + r.offset + r.numel());
            if (r.name == "w_q") b.w_q = std::move(t);
            else if (r.name == "w_k") b.w_k = std::move(t);
            else if (r.name == "w_v") b.w_v = std::move(t);
            else if (r.name == "w_o") b.w_o = std::move(t);
            else if (r.name == "w_up") b.w_up = std::move(t);
            else if (r.name == "w_gate") b.w_gate = std::move(t);
            else if (r.name == "w_down") b.w_down = std::move(t);
            else if (r.name == "norm1") b.norm1 = std::move(t);
            else if (r.name == "norm2") b.norm2 = std::move(t);
        }
    }
    p.head = store.tile(m.head_tile_id()).export_weights_f32();
    return p;
}

void Params::zero() {
    auto z = [](std::vector<float>& v) { std::fill(v.begin(), v.end(), 0.0f); };
    z(embed);
    z(head);
    for (auto& b : blocks) {
        z(b.w_q); z(b.w_k); z(b.w_v); z(b.w_o);
        z(b.w_up); z(b.w_gate); z(b.w_down);
        z(b.norm1); z(b.norm2);
    }
}

namespace {

struct BlockNodeIds {
    i64 w_q, w_k, w_v, w_o, w_up, w_gate, w_down, norm1, norm2;
};

struct Graph {
    Tape tape;
    i64 embed_node = -1;
    i64 head_node = -1;
    std::vector<BlockNodeIds> block_nodes;
    i64 loss_node = -1;
};

i64 rmsnorm_graph(Tape& tp, i64 x, i64 scale_vec, i64 h) {
    const i64 sq = tp.mul(x, x);
    const i64 ms = tp.scale(tp.sum_last(sq), 1.0f / static_cast<float>(h));
    const i64 inv = tp.rsqrt(tp.add_scalar(ms, static_cast<float>(kRmsNormEps)));
    return tp.mul_row_vec(tp.mul_bcast_last(x, inv), scale_vec);
}

// Row-max constants detached from the graph: subtracting them shifts
// softmax inputs without touching gradients.
std::vector<float> neg_row_max(const std::vector<float>& v, i64 rows, i64 c) {
    std::vector<float> out(static_cast<std::size_t>(rows * c));
    for (i64 i = 0; i < rows; ++i) {
        float mx = v[i * c];
        for (i64 j = 1; j < c; ++j) mx = std::max(mx, v[i * c + j]);
        for (i64 j = 0; j < c; ++j) out[i * c + j] = -mx;
    }
    return out;
}

Graph build_graph(const Params& p, const Batch& batch) {
    const ModelConfig& m = p.config;
    const i64 B = m.batch, S = m.seq, h = m.hidden, f = m.ffn, V = m.vocab;
    const i64 N = B * S;
    Graph g;
    Tape& tp = g.tape;

    g.embed_node = tp.input({V, h}, p.embed.data());
    g.head_node = m.tie_embeddings ? g.embed_node : tp.input({V, h}, p.head.data());

    i64 x = tp.gather_rows(g.embed_node, batch.tokens);   // (N, h)
    for (i64 l = 0; l < m.layers; ++l) {
        const BlockTensors& bt = p.blocks[static_cast<std::size_t>(l)];
        BlockNodeIds ids{};
        ids.w_q = tp.input({h, h}, bt.w_q.data());
        ids.w_k = tp.input({h, h}, bt.w_k.data());
        ids.w_v = tp.input({h, h}, bt.w_v.data());
        ids.w_o = tp.input({h, h}, bt.w_o.data());
        ids.w_up = tp.input({h, f}, bt.w_up.data());
        ids.w_gate = tp.input({h, f}, bt.w_gate.data());
        ids.w_down = tp.input({f, h}, bt.w_down.data());
        ids.norm1 = tp.input({h}, bt.norm1.data());
        ids.norm2 = tp.input({h}, bt.norm2.data());
        g.block_nodes.push_back(ids);

        const i64 n1 = rmsnorm_graph(tp, x, ids.norm1, h);
        const i64 q3 = tp.reshape(tp.matmul(n1, ids.w_q), {B, S, h});
        const i64 k3 = tp.reshape(tp.matmul(n1, ids.w_k), {B, S, h});
        const i64 v3 = tp.reshape(tp.matmul(n1, ids.w_v), {B, S, h});
        i64 scores = tp.scale(tp.bmm(q3, tp.transpose_last(k3)),
                              1.0f / std::sqrt(static_cast<float>(h)));
        std::vector<float> mask(static_cast<std::size_t>(B * S * S), 0.0f);
        for (i64 bb = 0; bb < B; ++bb)
            for (i64 i = 0; i < S; ++i)
                for (i64 j = i + 1; j < S; ++j)
                    mask[(bb * S + i) * S + j] = -1e9f;
        scores = tp.add_constant(scores, std::move(mask));
        const i64 shifted = tp.add_constant(scores, neg_row_max(tp.val(scores), B * S, S));
        const i64 expd = tp.exp_(shifted);
        const i64 z = tp.sum_last(expd);
        const i64 probs = tp.mul_bcast_last(expd, tp.recip(z));
        const i64 attn = tp.reshape(tp.bmm(probs, v3), {N, h});
        const i64 o = tp.matmul(attn, ids.w_o);
        const i64 y = tp.add(x, o);
        const i64 n2 = rmsnorm_graph(tp, y, ids.norm2, h);
        const i64 up = tp.matmul(n2, ids.w_up);
        const i64 gate = tp.matmul(n2, ids.w_gate);
        const i64 act = tp.mul(up, tp.mul(gate, tp.sigmoid(gate)));
        const i64 down = tp.matmul(act, ids.w_down);
        x = tp.add(y, down);
    }

    const i64 logits = tp.matmul_nt(x, g.head_node);               // (N, V)
    const i64 shifted = tp.add_constant(logits, neg_row_max(tp.val(logits), N, V));
    const i64 expd = tp.exp_(shifted);
    const i64 logz = tp.log_(tp.sum_last(expd));                   // (N, 1)
    const i64 picked = tp.pick(shifted, batch.targets);            // (N, 1)
    g.loss_node = tp.mean_all(tp.sub(logz, picked));
    return g;
}

void copy_grad(const Tape& tp, i64 node, std::vector<float>& dst) {
    const auto& g = tp.grad(node);
    dst.assign(g.begin(), g.end());
}

}  // namespace

ForwardBackward oracle_forward_backward(const Params& params, const Batch& batch,
                                        float loss_seed) {
    Graph g = build_graph(params, batch);
    ForwardBackward out;
    out.loss = g.tape.val(g.loss_node)[0];
    g.tape.backward(g.loss_node, loss_seed);
    out.grads.config = params.config;
    copy_grad(g.tape, g.embed_node, out.grads.embed);
    out.grads.blocks.resize(params.blocks.size());
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockNodeIds& ids = g.block_nodes[l];
        BlockTensors& bt = out.grads.blocks[l];
        copy_grad(g.tape, ids.w_q, bt.w_q);
        copy_grad(g.tape, ids.w_k, bt.w_k);
        copy_grad(g.tape, ids.w_v, bt.w_v);
        copy_grad(g.tape, ids.w_o, bt.w_o);
        copy_grad(g.tape, ids.w_up, bt.w_up);
        copy_grad(g.tape, ids.w_gate, bt.w_gate);
        copy_grad(g.tape, ids.w_down, bt.w_down);
        copy_grad(g.tape, ids.norm1, bt.norm1);
        copy_grad(g.tape, ids.norm2, bt.norm2);
    }
    // For tied models the embed gradient already carries both contributions.
    copy_grad(g.tape, g.head_node, out.grads.head);
    return out;
}

float oracle_loss(const Params& params, const Batch& batch) {
    Graph g = build_graph(params, batch);
    return g.tape.val(g.loss_node)[0];
}

namespace {

void adam_vec(std::vector<float>& w, const std::vector<float>& g, std::vector<float>& m,
              std::vector<float>& v, const HyperParams& hp, i64 t) {
    const float lr = static_cast<float>(hp.lr);
    const float b1 = static_cast<float>(hp.beta1);
    const float b2 = static_cast<float>(hp.beta2);
    const float eps = static_cast<float>(hp.eps);
    const float wd = static_cast<float>(hp.weight_decay);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * g[i];
        v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
    }
}

Params zeros_like(const Params& p) {
    Params z = p;
    z.zero();
    return z;
}

}  // namespace

void oracle_adam_update(Params& params, const Params& grads, AdamMoments& mom,
                        const HyperParams& hyper, i64 t) {
    adam_vec(params.embed, grads.embed, mom.m.embed, mom.v.embed, hyper, t);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        auto& w = params.blocks[l];
        const auto& g = grads.blocks[l];
        auto& m = mom.m.blocks[l];
        auto& v = mom.v.blocks[l];
        adam_vec(w.w_q, g.w_q, m.w_q, v.w_q, hyper, t);
        adam_vec(w.w_k, g.w_k, m.w_k, v.w_k, hyper, t);
        adam_vec(w.w_v, g.w_v, m.w_v, v.w_v, hyper, t);
        adam_vec(w.w_o, g.w_o, m.w_o, v.w_o, hyper, t);
        adam_vec(w.w_up, g.w_up, m.w_up, v.w_up, hyper, t);
        adam_vec(w.w_gate, g.w_gate, m.w_gate, v.w_gate, hyper, t);
        adam_vec(w.w_down, g.w_down, m.w_down, v.w_down, hyper, t);
        adam_vec(w.norm1, g.norm1, m.norm1, v.norm1, hyper, t);
        adam_vec(w.norm2, g.norm2, m.norm2, v.norm2, hyper, t);
    }
    if (!params.config.tie_embeddings)
        adam_vec(params.head, grads.head, mom.m.head, mom.v.head, hyper, t);
    else
        params.head = params.embed;
}

std::vector<float> oracle_train(Params& params, const HyperParams& hyper, i64 steps,
                                std::uint64_t data_seed) {
    AdamMoments mom{zeros_like(params), zeros_like(params)};
    Rng data_rng(data_seed);
    std::vector<float> losses;
    for (i64 t = 1; t <= steps; ++t) {
        const Batch batch = make_copy_task_batch(params.config, data_rng);
        ForwardBackward fb = oracle_forward_backward(params, batch);
        losses.push_back(fb.loss);
        oracle_adam_update(params, fb.grads, mom, hyper, t);
    }
    return losses;
}

}  // namespace hlm::oracle
