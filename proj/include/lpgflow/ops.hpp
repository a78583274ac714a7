#ifndef LPGFLOW_OPS_HPP
#define LPGFLOW_OPS_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "tensor.hpp"

// Differentiable primitives. Each op builds one node; backward_fn holds the
// hand-derived vector-Jacobian product and accumulates into parent grads.
// Parent data buffers are stable for the lifetime of a graph, so backward
// functions read them directly instead of copying, except where forward-pass
// intermediates (softmax probabilities, norm statistics) are cheaper to keep.

namespace lpgflow {

namespace detail {

inline std::shared_ptr<TensorNode> make_out(int rows, int cols, bool rg) {
    auto n           = std::make_shared<TensorNode>();
    n->rows          = rows;
    n->cols          = cols;
    n->data.assign(size_t(rows) * cols, 0.0f);
    n->requires_grad = rg;
    return n;
}

inline bool any_grad(std::initializer_list<const Tensor*> ts) {
    for (auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    LPG_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    auto out = detail::make_out(a.rows(), a.cols(), detail::any_grad({&a, &b}));
    for (int64_t i = 0; i < a.numel(); i++) out->data[i] = a.data()[i] + b.data()[i];
    if (out->requires_grad) {
        out->parents   = {a.ptr(), b.ptr()};
        TensorNode* o  = out.get();
        auto an        = a.ptr();
        auto bn        = b.ptr();
        out->backward_fn = [o, an, bn]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++) bn->grad[i] += o->grad[i];
            }
        };
    }
    return Tensor(out);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    LPG_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    auto out = detail::make_out(a.rows(), a.cols(), detail::any_grad({&a, &b}));
    for (int64_t i = 0; i < a.numel(); i++) out->data[i] = a.data()[i] - b.data()[i];
    if (out->requires_grad) {
        out->parents   = {a.ptr(), b.ptr()};
        TensorNode* o  = out.get();
        auto an        = a.ptr();
        auto bn        = b.ptr();
        out->backward_fn = [o, an, bn]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++) bn->grad[i] -= o->grad[i];
            }
        };
    }
    return Tensor(out);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    LPG_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    auto out = detail::make_out(a.rows(), a.cols(), detail::any_grad({&a, &b}));
    for (int64_t i = 0; i < a.numel(); i++) out->data[i] = a.data()[i] * b.data()[i];
    if (out->requires_grad) {
        out->parents   = {a.ptr(), b.ptr()};
        TensorNode* o  = out.get();
        auto an        = a.ptr();
        auto bn        = b.ptr();
        out->backward_fn = [o, an, bn]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++)
                    an->grad[i] += o->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++)
                    bn->grad[i] += o->grad[i] * an->data[i];
            }
        };
    }
    return Tensor(out);
}

inline Tensor scale(const Tensor& a, float s) {
    auto out = detail::make_out(a.rows(), a.cols(), a.requires_grad());
    for (int64_t i = 0; i < a.numel(); i++) out->data[i] = a.data()[i] * s;
    if (out->requires_grad) {
        out->parents  = {a.ptr()};
        TensorNode* o = out.get();
        auto an       = a.ptr();
        out->backward_fn = [o, an, s]() {
            an->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); i++) an->grad[i] += s * o->grad[i];
        };
    }
    return Tensor(out);
}

inline Tensor add_const(const Tensor& a, float c) {
    auto out = detail::make_out(a.rows(), a.cols(), a.requires_grad());
    for (int64_t i = 0; i < a.numel(); i++) out->data[i] = a.data()[i] + c;
    if (out->requires_grad) {
        out->parents  = {a.ptr()};
        TensorNode* o = out.get();
        auto an       = a.ptr();
        out->backward_fn = [o, an]() {
            an->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); i++) an->grad[i] += o->grad[i];
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------------- matmuls

// c = a @ b; a: [M, K], b: [K, N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    LPG_REQUIRE(a.cols() == b.rows(), "matmul: inner dim mismatch");
    const int M = a.rows(), K = a.cols(), N = b.cols();
    auto out = detail::make_out(M, N, detail::any_grad({&a, &b}));
    {
        const float* A = a.data().data();
        const float* B = b.data().data();
        float* C       = out->data.data();
        for (int i = 0; i < M; i++) {
            for (int k = 0; k < K; k++) {
                const float aik = A[size_t(i) * K + k];
                const float* Bk = B + size_t(k) * N;
                float* Ci       = C + size_t(i) * N;
                for (int j = 0; j < N; j++) Ci[j] += aik * Bk[j];
            }
        }
    }
    if (out->requires_grad) {
        out->parents  = {a.ptr(), b.ptr()};
        TensorNode* o = out.get();
        auto an       = a.ptr();
        auto bn       = b.ptr();
        out->backward_fn = [o, an, bn, M, K, N]() {
            const float* G = o->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA[i,k] = dot(G row i, B row k)
                const float* B = bn->data.data();
                for (int i = 0; i < M; i++) {
                    const float* Gi = G + size_t(i) * N;
                    for (int k = 0; k < K; k++) {
                        const float* Bk = B + size_t(k) * N;
                        float acc       = 0.0f;
                        for (int j = 0; j < N; j++) acc += Gi[j] * Bk[j];
                        an->grad[size_t(i) * K + k] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB row k += A[i,k] * G row i
                const float* A = an->data.data();
                for (int i = 0; i < M; i++) {
                    const float* Gi = G + size_t(i) * N;
                    for (int k = 0; k < K; k++) {
                        const float aik = A[size_t(i) * K + k];
                        if (aik == 0.0f) continue;
                        float* dBk = bn->grad.data() + size_t(k) * N;
                        for (int j = 0; j < N; j++) dBk[j] += aik * Gi[j];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// c = a @ b^T; a: [M, K], b: [N, K]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    LPG_REQUIRE(a.cols() == b.cols(), "matmul_nt: inner dim mismatch");
    const int M = a.rows(), K = a.cols(), N = b.rows();
    auto out = detail::make_out(M, N, detail::any_grad({&a, &b}));
    {
        const float* A = a.data().data();
        const float* B = b.data().data();
        float* C       = out->data.data();
        for (int i = 0; i < M; i++) {
            const float* Ai = A + size_t(i) * K;
            for (int j = 0; j < N; j++) {
                const float* Bj = B + size_t(j) * K;
                float acc       = 0.0f;
                for (int k = 0; k < K; k++) acc += Ai[k] * Bj[k];
                C[size_t(i) * N + j] = acc;
            }
        }
    }
    if (out->requires_grad) {
        out->parents  = {a.ptr(), b.ptr()};
        TensorNode* o = out.get();
        auto an       = a.ptr();
        auto bn       = b.ptr();
        out->backward_fn = [o, an, bn, M, K, N]() {
            const float* G = o->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                const float* B = bn->data.data();
                for (int i = 0; i < M; i++) {
                    const float* Gi = G + size_t(i) * N;
                    float* dAi      = an->grad.data() + size_t(i) * K;
                    for (int j = 0; j < N; j++) {
                        const float g = Gi[j];
                        if (g == 0.0f) continue;
                        const float* Bj = B + size_t(j) * K;
                        for (int k = 0; k < K; k++) dAi[k] += g * Bj[k];
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const float* A = an->data.data();
                for (int i = 0; i < M; i++) {
                    const float* Gi = G + size_t(i) * N;
                    const float* Ai = A + size_t(i) * K;
                    for (int j = 0; j < N; j++) {
                        const float g = Gi[j];
                        if (g == 0.0f) continue;
                        float* dBj = bn->grad.data() + size_t(j) * K;
                        for (int k = 0; k < K; k++) dBj[k] += g * Ai[k];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------- row broadcast

// x: [M, N], v: [1, N]; out[i,j] = x[i,j] + v[j]
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    LPG_REQUIRE(v.rows() == 1 && v.cols() == x.cols(), "add_rowvec: shape mismatch");
    const int M = x.rows(), N = x.cols();
    auto out = detail::make_out(M, N, detail::any_grad({&x, &v}));
    for (int i = 0; i < M; i++)
        for (int j = 0; j < N; j++)
            out->data[size_t(i) * N + j] = x.data()[size_t(i) * N + j] + v.data()[j];
    if (out->requires_grad) {
        out->parents  = {x.ptr(), v.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        auto vn       = v.ptr();
        out->backward_fn = [o, xn, vn, M, N]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); i++) xn->grad[i] += o->grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < M; i++)
                    for (int j = 0; j < N; j++)
                        vn->grad[j] += o->grad[size_t(i) * N + j];
            }
        };
    }
    return Tensor(out);
}

// x: [M, N], v: [1, N]; out[i,j] = x[i,j] * v[j]
inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    LPG_REQUIRE(v.rows() == 1 && v.cols() == x.cols(), "mul_rowvec: shape mismatch");
    const int M = x.rows(), N = x.cols();
    auto out = detail::make_out(M, N, detail::any_grad({&x, &v}));
    for (int i = 0; i < M; i++)
        for (int j = 0; j < N; j++)
            out->data[size_t(i) * N + j] = x.data()[size_t(i) * N + j] * v.data()[j];
    if (out->requires_grad) {
        out->parents  = {x.ptr(), v.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        auto vn       = v.ptr();
        out->backward_fn = [o, xn, vn, M, N]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < M; i++)
                    for (int j = 0; j < N; j++)
                        xn->grad[size_t(i) * N + j] +=
                            o->grad[size_t(i) * N + j] * vn->data[j];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < M; i++)
                    for (int j = 0; j < N; j++)
                        vn->grad[j] +=
                            o->grad[size_t(i) * N + j] * xn->data[size_t(i) * N + j];
            }
        };
    }
    return Tensor(out);
}

// -------------------------------------------------------------- activations

inline Tensor silu(const Tensor& x) {
    auto out = detail::make_out(x.rows(), x.cols(), x.requires_grad());
    for (int64_t i = 0; i < x.numel(); i++) {
        const float v = x.data()[i];
        out->data[i]  = v / (1.0f + std::exp(-v));
    }
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn]() {
            xn->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); i++) {
                const float v = xn->data[i];
                const float s = 1.0f / (1.0f + std::exp(-v));
                xn->grad[i] += o->grad[i] * s * (1.0f + v * (1.0f - s));
            }
        };
    }
    return Tensor(out);
}

// tanh-approximated gelu
inline Tensor gelu(const Tensor& x) {
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    auto out = detail::make_out(x.rows(), x.cols(), x.requires_grad());
    for (int64_t i = 0; i < x.numel(); i++) {
        const float v = x.data()[i];
        const float t = std::tanh(k * (v + 0.044715f * v * v * v));
        out->data[i]  = 0.5f * v * (1.0f + t);
    }
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn]() {
            xn->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); i++) {
                const float v  = xn->data[i];
                const float u  = k * (v + 0.044715f * v * v * v);
                const float t  = std::tanh(u);
                const float du = k * (1.0f + 3.0f * 0.044715f * v * v);
                xn->grad[i] +=
                    o->grad[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
            }
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------ normalization

// row-wise softmax with max subtraction
inline Tensor softmax_rows(const Tensor& x) {
    const int M = x.rows(), N = x.cols();
    auto out = detail::make_out(M, N, x.requires_grad());
    for (int i = 0; i < M; i++) {
        const float* xi = x.data().data() + size_t(i) * N;
        float* yi       = out->data.data() + size_t(i) * N;
        float mx        = xi[0];
        for (int j = 1; j < N; j++) mx = std::max(mx, xi[j]);
        float sum = 0.0f;
        for (int j = 0; j < N; j++) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < N; j++) yi[j] *= inv;
    }
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn, M, N]() {
            xn->ensure_grad();
            // dx = y * (g - dot(g, y)) per row
            for (int i = 0; i < M; i++) {
                const float* yi = o->data.data() + size_t(i) * N;
                const float* gi = o->grad.data() + size_t(i) * N;
                float dot       = 0.0f;
                for (int j = 0; j < N; j++) dot += gi[j] * yi[j];
                float* dxi = xn->grad.data() + size_t(i) * N;
                for (int j = 0; j < N; j++) dxi[j] += yi[j] * (gi[j] - dot);
            }
        };
    }
    return Tensor(out);
}

// row-wise standardization (no learned affine; modulation handles that)
inline Tensor layernorm_rows(const Tensor& x, float eps = 1e-6f) {
    const int M = x.rows(), N = x.cols();
    auto out = detail::make_out(M, N, x.requires_grad());
    std::vector<float> inv_std(M);
    for (int i = 0; i < M; i++) {
        const float* xi = x.data().data() + size_t(i) * N;
        float mean      = 0.0f;
        for (int j = 0; j < N; j++) mean += xi[j];
        mean /= N;
        float var = 0.0f;
        for (int j = 0; j < N; j++) {
            const float d = xi[j] - mean;
            var += d * d;
        }
        var /= N;
        const float is = 1.0f / std::sqrt(var + eps);
        inv_std[i]     = is;
        float* yi      = out->data.data() + size_t(i) * N;
        for (int j = 0; j < N; j++) yi[j] = (xi[j] - mean) * is;
    }
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn, M, N, inv_std = std::move(inv_std)]() {
            xn->ensure_grad();
            // dx = inv_std * (g - mean(g) - y * mean(g*y)) per row
            for (int i = 0; i < M; i++) {
                const float* yi = o->data.data() + size_t(i) * N;
                const float* gi = o->grad.data() + size_t(i) * N;
                float mg = 0.0f, mgy = 0.0f;
                for (int j = 0; j < N; j++) {
                    mg += gi[j];
                    mgy += gi[j] * yi[j];
                }
                mg /= N;
                mgy /= N;
                float* dxi = xn->grad.data() + size_t(i) * N;
                for (int j = 0; j < N; j++)
                    dxi[j] += inv_std[i] * (gi[j] - mg - yi[j] * mgy);
            }
        };
    }
    return Tensor(out);
}

// --------------------------------------------------------------- structural

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
    LPG_REQUIRE(0 <= r0 && r0 < r1 && r1 <= x.rows(), "slice_rows: bad range");
    const int N = x.cols();
    auto out = detail::make_out(r1 - r0, N, x.requires_grad());
    std::copy(x.data().begin() + size_t(r0) * N, x.data().begin() + size_t(r1) * N,
              out->data.begin());
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn, r0, N]() {
            xn->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); i++)
                xn->grad[size_t(r0) * N + i] += o->grad[i];
        };
    }
    return Tensor(out);
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    LPG_REQUIRE(!parts.empty(), "concat_rows: empty input");
    const int N = parts[0].cols();
    int M       = 0;
    bool rg     = false;
    for (const auto& p : parts) {
        LPG_REQUIRE(p.cols() == N, "concat_rows: column mismatch");
        M += p.rows();
        rg = rg || p.requires_grad();
    }
    auto out   = detail::make_out(M, N, rg);
    int offset = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(),
                  out->data.begin() + size_t(offset) * N);
        offset += p.rows();
    }
    if (rg) {
        std::vector<std::shared_ptr<TensorNode>> ps;
        for (const auto& p : parts) ps.push_back(p.ptr());
        out->parents  = ps;
        TensorNode* o = out.get();
        out->backward_fn = [o, ps, N]() {
            size_t off = 0;
            for (const auto& p : ps) {
                const size_t n = p->data.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < n; i++) p->grad[i] += o->grad[off + i];
                }
                off += n;
            }
        };
    }
    return Tensor(out);
}

// ids index rows of table; out row i = table row ids[i]
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    LPG_REQUIRE(!ids.empty(), "embedding: empty id list");
    const int D = table.cols();
    for (int id : ids)
        LPG_REQUIRE(id >= 0 && id < table.rows(), "embedding: id out of range");
    auto out = detail::make_out(int(ids.size()), D, table.requires_grad());
    for (size_t i = 0; i < ids.size(); i++)
        std::copy(table.data().begin() + size_t(ids[i]) * D,
                  table.data().begin() + size_t(ids[i] + 1) * D,
                  out->data.begin() + i * D);
    if (out->requires_grad) {
        out->parents  = {table.ptr()};
        TensorNode* o = out.get();
        auto tn       = table.ptr();
        out->backward_fn = [o, tn, ids, D]() {
            tn->ensure_grad();
            for (size_t i = 0; i < ids.size(); i++)
                for (int j = 0; j < D; j++)
                    tn->grad[size_t(ids[i]) * D + j] += o->grad[i * D + j];
        };
    }
    return Tensor(out);
}

// --------------------------------------------------------------- reductions

inline Tensor mean_all(const Tensor& x) {
    auto out = detail::make_out(1, 1, x.requires_grad());
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); i++) acc += x.data()[i];
    out->data[0] = float(acc / double(x.numel()));
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn]() {
            xn->ensure_grad();
            const float g = o->grad[0] / float(xn->data.size());
            for (size_t i = 0; i < xn->grad.size(); i++) xn->grad[i] += g;
        };
    }
    return Tensor(out);
}

inline Tensor sum_all(const Tensor& x) {
    auto out = detail::make_out(1, 1, x.requires_grad());
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); i++) acc += x.data()[i];
    out->data[0] = float(acc);
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn]() {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); i++) xn->grad[i] += o->grad[0];
        };
    }
    return Tensor(out);
}

// ------------------------------------------------------------ rotary + attn

// Per-token pair rotation. x: [T, num_heads*head_dim]; angles: [T, head_dim/2],
// shared across heads. Pair p of every head rotates by angles[t][p]; the
// backward pass is rotation by the negated angle applied to the grad.
inline Tensor rope(const Tensor& x, const std::vector<float>& angles, int num_heads) {
    const int T  = x.rows();
    const int HD = x.cols();
    LPG_REQUIRE(num_heads > 0 && HD % num_heads == 0, "rope: bad head split");
    const int hd = HD / num_heads;
    LPG_REQUIRE(hd % 2 == 0, "rope: head_dim must be even");
    const int pairs = hd / 2;
    LPG_REQUIRE(int64_t(angles.size()) == int64_t(T) * pairs, "rope: angle table size");
    auto out = detail::make_out(T, HD, x.requires_grad());
    for (int t = 0; t < T; t++) {
        const float* ang = angles.data() + size_t(t) * pairs;
        const float* xi  = x.data().data() + size_t(t) * HD;
        float* yi        = out->data.data() + size_t(t) * HD;
        for (int h = 0; h < num_heads; h++) {
            for (int p = 0; p < pairs; p++) {
                const float c = std::cos(ang[p]);
                const float s = std::sin(ang[p]);
                const int ia  = h * hd + 2 * p;
                const float a = xi[ia], b = xi[ia + 1];
                yi[ia]     = a * c - b * s;
                yi[ia + 1] = a * s + b * c;
            }
        }
    }
    if (out->requires_grad) {
        out->parents  = {x.ptr()};
        TensorNode* o = out.get();
        auto xn       = x.ptr();
        out->backward_fn = [o, xn, angles, num_heads, T, HD, hd, pairs]() {
            xn->ensure_grad();
            for (int t = 0; t < T; t++) {
                const float* ang = angles.data() + size_t(t) * pairs;
                const float* gi  = o->grad.data() + size_t(t) * HD;
                float* dxi       = xn->grad.data() + size_t(t) * HD;
                for (int h = 0; h < num_heads; h++) {
                    for (int p = 0; p < pairs; p++) {
                        const float c  = std::cos(ang[p]);
                        const float s  = std::sin(ang[p]);
                        const int ia   = h * hd + 2 * p;
                        const float ga = gi[ia], gb = gi[ia + 1];
                        dxi[ia] += ga * c + gb * s;
                        dxi[ia + 1] += -ga * s + gb * c;
                    }
                }
            }
        };
    }
    return Tensor(out);
}

// Row-softmax matrices of one attention call, one [T, T] buffer per head.
struct AttnProbs {
    int tokens = 0;
    std::vector<std::vector<float>> head_probs;
};

// Multi-head scaled dot-product attention over already-projected q/k/v,
// all [T, num_heads*head_dim]. No masking: every token attends everywhere.
// If probs_out is non-null the per-head softmax matrices are copied there.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int num_heads, AttnProbs* probs_out = nullptr) {
    const int T  = q.rows();
    const int HD = q.cols();
    LPG_REQUIRE(k.rows() == T && v.rows() == T && k.cols() == HD && v.cols() == HD,
                "attention: q/k/v shape mismatch");
    LPG_REQUIRE(num_heads > 0 && HD % num_heads == 0, "attention: bad head split");
    const int hd   = HD / num_heads;
    const float sc = 1.0f / std::sqrt(float(hd));
    auto out = detail::make_out(T, HD, detail::any_grad({&q, &k, &v}));

    // compact per-head copies; strided reads are consolidated once here
    auto extract = [&](const std::vector<float>& src, int h, std::vector<float>& dst) {
        dst.resize(size_t(T) * hd);
        for (int t = 0; t < T; t++)
            std::copy(src.begin() + size_t(t) * HD + size_t(h) * hd,
                      src.begin() + size_t(t) * HD + size_t(h) * hd + hd,
                      dst.begin() + size_t(t) * hd);
    };

    std::vector<std::vector<float>> probs(num_heads);
    if (probs_out) {
        probs_out->tokens = T;
        probs_out->head_probs.assign(num_heads, {});
    }
    std::vector<float> qh, kh, vh;
    for (int h = 0; h < num_heads; h++) {
        extract(q.data(), h, qh);
        extract(k.data(), h, kh);
        extract(v.data(), h, vh);
        std::vector<float>& P = probs[h];
        P.assign(size_t(T) * T, 0.0f);
        for (int i = 0; i < T; i++) {
            float* Pi = P.data() + size_t(i) * T;
            float mx  = -1e30f;
            for (int j = 0; j < T; j++) {
                float acc = 0.0f;
                for (int c = 0; c < hd; c++)
                    acc += qh[size_t(i) * hd + c] * kh[size_t(j) * hd + c];
                Pi[j] = acc * sc;
                mx    = std::max(mx, Pi[j]);
            }
            float sum = 0.0f;
            for (int j = 0; j < T; j++) {
                Pi[j] = std::exp(Pi[j] - mx);
                sum += Pi[j];
            }
            const float inv = 1.0f / sum;
            for (int j = 0; j < T; j++) Pi[j] *= inv;
        }
        for (int i = 0; i < T; i++) {
            float* oi = out->data.data() + size_t(i) * HD + size_t(h) * hd;
            for (int j = 0; j < T; j++) {
                const float p = P[size_t(i) * T + j];
                if (p == 0.0f) continue;
                const float* vj = vh.data() + size_t(j) * hd;
                for (int c = 0; c < hd; c++) oi[c] += p * vj[c];
            }
        }
        if (probs_out) probs_out->head_probs[h] = P;
    }

    if (out->requires_grad) {
        out->parents  = {q.ptr(), k.ptr(), v.ptr()};
        TensorNode* o = out.get();
        auto qn = q.ptr(), kn = k.ptr(), vn = v.ptr();
        out->backward_fn = [o, qn, kn, vn, num_heads, T, HD, hd, sc,
                            probs = std::move(probs)]() {
            qn->ensure_grad();
            kn->ensure_grad();
            vn->ensure_grad();
            std::vector<float> dO(size_t(T) * hd), qh(size_t(T) * hd),
                kh(size_t(T) * hd), vh(size_t(T) * hd);
            std::vector<float> dP(size_t(T) * T), dS(size_t(T) * T);
            for (int h = 0; h < num_heads; h++) {
                for (int t = 0; t < T; t++) {
                    const size_t s0 = size_t(t) * HD + size_t(h) * hd;
                    const size_t d0 = size_t(t) * hd;
                    for (int c = 0; c < hd; c++) {
                        dO[d0 + c] = o->grad[s0 + c];
                        qh[d0 + c] = qn->data[s0 + c];
                        kh[d0 + c] = kn->data[s0 + c];
                        vh[d0 + c] = vn->data[s0 + c];
                    }
                }
                const std::vector<float>& P = probs[h];
                // dV += P^T dO
                for (int i = 0; i < T; i++) {
                    const float* dOi = dO.data() + size_t(i) * hd;
                    for (int j = 0; j < T; j++) {
                        const float p = P[size_t(i) * T + j];
                        if (p == 0.0f) continue;
                        float* dvj = vn->grad.data() + size_t(j) * HD + size_t(h) * hd;
                        for (int c = 0; c < hd; c++) dvj[c] += p * dOi[c];
                    }
                }
                // dP = dO V^T; dS = P * (dP - rowsum(dP * P))
                for (int i = 0; i < T; i++) {
                    const float* dOi = dO.data() + size_t(i) * hd;
                    float* dPi       = dP.data() + size_t(i) * T;
                    for (int j = 0; j < T; j++) {
                        const float* vj = vh.data() + size_t(j) * hd;
                        float acc       = 0.0f;
                        for (int c = 0; c < hd; c++) acc += dOi[c] * vj[c];
                        dPi[j] = acc;
                    }
                    const float* Pi = P.data() + size_t(i) * T;
                    float dot       = 0.0f;
                    for (int j = 0; j < T; j++) dot += dPi[j] * Pi[j];
                    float* dSi = dS.data() + size_t(i) * T;
                    for (int j = 0; j < T; j++) dSi[j] = Pi[j] * (dPi[j] - dot);
                }
                // dQ += dS K * sc; dK += dS^T Q * sc
                for (int i = 0; i < T; i++) {
                    const float* dSi = dS.data() + size_t(i) * T;
                    float* dqi       = qn->grad.data() + size_t(i) * HD + size_t(h) * hd;
                    const float* qi  = qh.data() + size_t(i) * hd;
                    for (int j = 0; j < T; j++) {
                        const float s = dSi[j] * sc;
                        if (s == 0.0f) continue;
                        const float* kj = kh.data() + size_t(j) * hd;
                        float* dkj = kn->grad.data() + size_t(j) * HD + size_t(h) * hd;
                        for (int c = 0; c < hd; c++) {
                            dqi[c] += s * kj[c];
                            dkj[c] += s * qi[c];
                        }
                    }
                }
            }
        };
    }
    return Tensor(out);
}

}  // namespace lpgflow

#endif  // LPGFLOW_OPS_HPP
