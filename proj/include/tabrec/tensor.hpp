#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabrec/rng.hpp"

namespace tabrec {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ", ";
    }
    return out + ")";
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Dense f32 tensor. Value-semantic handle over a shared node so the tape can
// hold inputs/outputs alive; gradients accumulate on the node.
class Tensor {
   public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match buffer of " +
                                        std::to_string(data.size()) + " floats");
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->shape = std::move(shape);
        t.n_->val = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<float> d(static_cast<size_t>(numel_of(shape)), 0.0f);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, float v, bool requires_grad = false) {
        std::vector<float> d(static_cast<size_t>(numel_of(shape)), v);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(float v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->val.size()); }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    float* data() { return n_->val.data(); }
    const float* data() const { return n_->val.data(); }
    std::vector<float>& values() { return n_->val; }
    const std::vector<float>& values() const { return n_->val; }

    float item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return n_->val[0];
    }

    // Gradient buffer, allocated zero on first touch.
    std::vector<float>& grad() {
        if (n_->grad.size() != n_->val.size()) n_->grad.assign(n_->val.size(), 0.0f);
        return n_->grad;
    }
    const std::vector<float>* grad_if_any() const { return n_->grad.size() == n_->val.size() ? &n_->grad : nullptr; }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
    }

    bool same_node(const Tensor& o) const { return n_ == o.n_; }

   private:
    struct Node {
        Shape shape;
        std::vector<float> val;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> n_;
};

// Records backward closures in forward (= topological) order; backward replays
// them once each, in reverse.
class Tape {
   public:
    void record(std::function<void()> back) { recs_.push_back(std::move(back)); }
    size_t size() const { return recs_.size(); }
    void clear() { recs_.clear(); }

    void replay_backward() {
        for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) (*it)();
    }

   private:
    std::vector<std::function<void()>> recs_;
};

inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}

class TapeScope {
   public:
    explicit TapeScope(Tape& t) : prev_(active_tape()) { active_tape() = &t; }
    ~TapeScope() { active_tape() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

   private:
    Tape* prev_;
};

namespace detail {

inline bool want_grad(std::initializer_list<const Tensor*> ins) {
    if (active_tape() == nullptr) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

inline void record(Tensor out, std::function<void()> back) {
    out.set_requires_grad(true);
    active_tape()->record(std::move(back));
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(float* C, const float* A, const float* B, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        float* c = C + static_cast<int64_t>(i) * N;
        const float* a = A + static_cast<int64_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const float av = a[k];
            const float* b = B + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,K] += A[M,N] * B[K,N]^T
inline void gemm_nt(float* C, const float* A, const float* B, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
        float* c = C + static_cast<int64_t>(i) * K;
        const float* a = A + static_cast<int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const float* b = B + static_cast<int64_t>(k) * N;
            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
            for (int j = 0; j < N; ++j) acc += a[j] * b[j];
            c[k] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(float* C, const float* A, const float* B, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const float* a = A + static_cast<int64_t>(m) * K;
        const float* b = B + static_cast<int64_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const float av = a[k];
            float* c = C + static_cast<int64_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// Valid output-column range of a convolution for kernel column j:
// 0 <= ow*stride - pad + j < W.
inline int conv_ow_lo(int j, int pad, int stride) { return std::max(0, (pad - j + stride - 1) / stride); }
inline int conv_ow_hi(int j, int pad, int stride, int W, int Wo) {
    return std::min(Wo, (W - 1 - j + pad) / stride + 1);  // exclusive
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise with trailing-shape broadcast: b must have the same shape as a,
// or a shape that is a suffix of a's (a bias row, a scalar, an additive mask).
// ---------------------------------------------------------------------------

namespace detail {
inline bool suffix_shape(const Shape& big, const Shape& small) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!detail::suffix_shape(a.shape(), b.shape())) shape_error("add", a.shape(), b.shape());
    const int64_t n = a.numel(), m = b.numel();
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % m];
    if (detail::want_grad({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        detail::record(out, [ac, bc, oc, n, m]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += (*og)[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int64_t i = 0; i < n; ++i) gb[i % m] += (*og)[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!detail::suffix_shape(a.shape(), b.shape())) shape_error("sub", a.shape(), b.shape());
    const int64_t n = a.numel(), m = b.numel();
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % m];
    if (detail::want_grad({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        detail::record(out, [ac, bc, oc, n, m]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += (*og)[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int64_t i = 0; i < n; ++i) gb[i % m] -= (*og)[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!detail::suffix_shape(a.shape(), b.shape())) shape_error("mul", a.shape(), b.shape());
    const int64_t n = a.numel(), m = b.numel();
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % m];
    if (detail::want_grad({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        detail::record(out, [ac, bc, oc, n, m]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            const float* pa2 = ac.data();
            const float* pb2 = bc.data();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (int64_t i = 0; i < n; ++i) ga[i] += (*og)[i] * pb2[i % m];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int64_t i = 0; i < n; ++i) gb[i % m] += (*og)[i] * pa2[i];
            }
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc, n]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            for (int64_t i = 0; i < n; ++i) ga[i] += (*og)[i];
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc, n, c]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            for (int64_t i = 0; i < n; ++i) ga[i] += (*og)[i] * c;
        });
    }
    return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

// ---------------------------------------------------------------------------
// matmul: A(..., M, K) x B(..., K, N) with equal batch dims, or rank-2 B
// shared across the batch (the weight-matrix case).
// ---------------------------------------------------------------------------
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb);
    const int M = sa[sa.size() - 2], K = sa[sa.size() - 1];
    const int Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
    if (K != Kb) shape_error("matmul", sa, sb);
    const bool shared_b = sb.size() == 2;
    if (!shared_b && !std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) shape_error("matmul", sa, sb);

    int64_t batch = 1;
    for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    Shape so(sa.begin(), sa.end() - 2);
    so.push_back(M);
    so.push_back(N);
    Tensor out = Tensor::zeros(so);

    // A shared rank-2 B lets the whole batch collapse into one tall GEMM.
    const int64_t fold = shared_b ? batch : 1;
    const int64_t calls = shared_b ? 1 : batch;
    const int Mf = static_cast<int>(fold * M);

    const int64_t a_step = static_cast<int64_t>(Mf) * K;
    const int64_t b_step = shared_b ? 0 : static_cast<int64_t>(K) * N;
    const int64_t o_step = static_cast<int64_t>(Mf) * N;
    for (int64_t bi = 0; bi < calls; ++bi)
        detail::gemm_nn(out.data() + bi * o_step, a.data() + bi * a_step, b.data() + bi * b_step, Mf, K, N);

    if (detail::want_grad({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        detail::record(out, [ac, bc, oc, calls, Mf, K, N, a_step, b_step, o_step]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (int64_t bi = 0; bi < calls; ++bi)
                    detail::gemm_nt(ga.data() + bi * a_step, og->data() + bi * o_step, bc.data() + bi * b_step, Mf, N, K);
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int64_t bi = 0; bi < calls; ++bi)
                    detail::gemm_tn(gb.data() + bi * b_step, ac.data() + bi * a_step, og->data() + bi * o_step, Mf, K, N);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    Tensor out = Tensor::from(std::move(shape), a.values());
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
        });
    }
    return out;
}

namespace detail {
inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

inline void permute_copy(const float* src, float* dst, const Shape& in_shape, const std::vector<int>& axes, bool invert) {
    const size_t r = in_shape.size();
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    auto in_st = strides_of(in_shape);
    auto out_st = strides_of(out_shape);
    if (r == 4) {  // nested loops beat per-element index math on the hot path
        const int64_t s0 = in_st[static_cast<size_t>(axes[0])], s1 = in_st[static_cast<size_t>(axes[1])],
                      s2 = in_st[static_cast<size_t>(axes[2])], s3 = in_st[static_cast<size_t>(axes[3])];
        int64_t flat = 0;
        for (int64_t i0 = 0; i0 < out_shape[0]; ++i0)
            for (int64_t i1 = 0; i1 < out_shape[1]; ++i1)
                for (int64_t i2 = 0; i2 < out_shape[2]; ++i2) {
                    const int64_t base = i0 * s0 + i1 * s1 + i2 * s2;
                    if (invert)
                        for (int64_t i3 = 0; i3 < out_shape[3]; ++i3) dst[base + i3 * s3] += src[flat++];
                    else
                        for (int64_t i3 = 0; i3 < out_shape[3]; ++i3) dst[flat++] = src[base + i3 * s3];
                }
        return;
    }
    const int64_t n = numel_of(in_shape);
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t rem = flat;
        int64_t src_off = 0;
        for (size_t i = 0; i < r; ++i) {
            const int64_t q = rem / out_st[i];
            rem -= q * out_st[i];
            src_off += q * in_st[axes[i]];
        }
        if (invert)
            dst[src_off] += src[flat];
        else
            dst[flat] = src[src_off];
    }
}
}  // namespace detail

inline Tensor permute(const Tensor& a, std::vector<int> axes) {
    const Shape& s = a.shape();
    if (axes.size() != s.size()) throw std::invalid_argument("permute: axes rank mismatch for " + shape_str(s));
    Shape so(s.size());
    for (size_t i = 0; i < s.size(); ++i) so[i] = s[axes[i]];
    Tensor out = Tensor::zeros(so);
    detail::permute_copy(a.data(), out.data(), s, axes, false);
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        Shape in_shape = s;
        detail::record(out, [ac, oc, in_shape, axes]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            detail::permute_copy(og->data(), ac.grad().data(), in_shape, axes, true);
        });
    }
    return out;
}

// 2-D transpose of the last two axes.
inline Tensor transpose(const Tensor& a) {
    std::vector<int> axes(a.shape().size());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations
// ---------------------------------------------------------------------------
inline Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    const float inv_sqrt2 = 0.70710678118654752f;
    for (int64_t i = 0; i < n; ++i) {
        const float x = a.data()[i];
        out.data()[i] = 0.5f * x * (1.0f + std::erf(x * inv_sqrt2));
    }
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc, n, inv_sqrt2]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            const float inv_sqrt2pi = 0.39894228040143268f;
            for (int64_t i = 0; i < n; ++i) {
                const float x = ac.data()[i];
                const float cdf = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
                const float pdf = inv_sqrt2pi * std::exp(-0.5f * x * x);
                ga[i] += (*og)[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = 1.0f / (1.0f + std::exp(-a.data()[i]));
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc, n]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            for (int64_t i = 0; i < n; ++i) {
                const float y = oc.data()[i];
                ga[i] += (*og)[i] * y * (1.0f - y);
            }
        });
    }
    return out;
}

// Softmax over the last axis.
inline Tensor softmax(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.empty()) throw std::invalid_argument("softmax: rank-0 tensor");
    const int V = s.back();
    const int64_t rows = a.numel() / V;
    Tensor out = Tensor::zeros(s);
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * V;
        float* y = out.data() + r * V;
        float mx = x[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, x[j]);
        float sum = 0.0f;
        for (int j = 0; j < V; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < V; ++j) y[j] *= inv;
    }
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc, rows, V]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const float* y = oc.data() + r * V;
                const float* dy = og->data() + r * V;
                float dot = 0.0f;
                for (int j = 0; j < V; ++j) dot += dy[j] * y[j];
                float* gx = ga.data() + r * V;
                for (int j = 0; j < V; ++j) gx[j] += (dy[j] - dot) * y[j];
            }
        });
    }
    return out;
}

// Layer normalization over the last axis with affine parameters.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
    const Shape& s = a.shape();
    const int D = s.back();
    if (gamma.numel() != D || beta.numel() != D) shape_error("layer_norm", s, gamma.shape());
    const int64_t rows = a.numel() / D;
    Tensor out = Tensor::zeros(s);
    std::vector<float> inv_std(static_cast<size_t>(rows));
    std::vector<float> xhat(static_cast<size_t>(a.numel()));
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * D;
        float mean = 0.0f;
        for (int j = 0; j < D; ++j) mean += x[j];
        mean /= static_cast<float>(D);
        float var = 0.0f;
        for (int j = 0; j < D; ++j) {
            const float d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<float>(D);
        const float is = 1.0f / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        float* y = out.data() + r * D;
        float* xh = xhat.data() + r * D;
        for (int j = 0; j < D; ++j) {
            xh[j] = (x[j] - mean) * is;
            y[j] = xh[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    if (detail::want_grad({&a, &gamma, &beta})) {
        Tensor ac = a, gc = gamma, bc = beta, oc = out;
        auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
        auto is = std::make_shared<std::vector<float>>(std::move(inv_std));
        detail::record(out, [ac, gc, bc, oc, xh, is, rows, D]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            for (int64_t r = 0; r < rows; ++r) {
                const float* dy = og->data() + r * D;
                const float* x_hat = xh->data() + r * D;
                if (gc.requires_grad()) {
                    auto& gg = gc.grad();
                    for (int j = 0; j < D; ++j) gg[j] += dy[j] * x_hat[j];
                }
                if (bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (int j = 0; j < D; ++j) gb[j] += dy[j];
                }
                if (ac.requires_grad()) {
                    float mean_dyh = 0.0f, mean_dyh_xhat = 0.0f;
                    for (int j = 0; j < D; ++j) {
                        const float dyh = dy[j] * gc.data()[j];
                        mean_dyh += dyh;
                        mean_dyh_xhat += dyh * x_hat[j];
                    }
                    mean_dyh /= static_cast<float>(D);
                    mean_dyh_xhat /= static_cast<float>(D);
                    auto& ga = ac.grad();
                    float* gx = ga.data() + r * D;
                    const float s = (*is)[static_cast<size_t>(r)];
                    for (int j = 0; j < D; ++j) {
                        const float dyh = dy[j] * gc.data()[j];
                        gx[j] += s * (dyh - mean_dyh - x_hat[j] * mean_dyh_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup: weight (V, D), ids of length L -> (L, D).
// ---------------------------------------------------------------------------
inline Tensor embedding(const Tensor& weight, std::span<const int> ids) {
    const Shape& s = weight.shape();
    if (s.size() != 2) throw std::invalid_argument("embedding: weight must be rank 2, got " + shape_str(s));
    const int V = s[0], D = s[1];
    const int L = static_cast<int>(ids.size());
    Tensor out = Tensor::zeros({L, D});
    for (int i = 0; i < L; ++i) {
        const int id = ids[i];
        if (id < 0 || id >= V)
            throw std::invalid_argument("embedding: id " + std::to_string(id) + " out of range for vocab " + std::to_string(V));
        std::memcpy(out.data() + static_cast<int64_t>(i) * D, weight.data() + static_cast<int64_t>(id) * D,
                    sizeof(float) * static_cast<size_t>(D));
    }
    if (detail::want_grad({&weight})) {
        Tensor wc = weight, oc = out;
        std::vector<int> ids_copy(ids.begin(), ids.end());
        detail::record(out, [wc, oc, ids_copy, D]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& gw = wc.grad();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                const float* gr = og->data() + static_cast<int64_t>(i) * D;
                float* gdst = gw.data() + static_cast<int64_t>(ids_copy[i]) * D;
                for (int j = 0; j < D; ++j) gdst[j] += gr[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------
inline Tensor sum(const Tensor& a) {
    double acc = 0.0;  // double accumulation keeps scalar losses stable
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (detail::want_grad({&a})) {
        Tensor ac = a, oc = out;
        detail::record(out, [ac, oc]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            auto& ga = ac.grad();
            const float g = (*og)[0];
            for (auto& v : ga) v += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    const float inv = 1.0f / static_cast<float>(a.numel());
    return mul_scalar(sum(a), inv);
}

// ---------------------------------------------------------------------------
// Cross-entropy over the last axis with an optional per-position weight mask.
// logits (..., V) flattened to rows; loss = sum_r m_r * nll_r / sum_r m_r.
// ---------------------------------------------------------------------------
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const float> mask = {}) {
    const Shape& s = logits.shape();
    const int V = s.back();
    const int64_t rows = logits.numel() / V;
    if (static_cast<int64_t>(targets.size()) != rows)
        throw std::invalid_argument("cross_entropy: " + std::to_string(rows) + " rows vs " + std::to_string(targets.size()) +
                                    " targets");
    if (!mask.empty() && static_cast<int64_t>(mask.size()) != rows)
        throw std::invalid_argument("cross_entropy: mask length mismatch");

    double total = 0.0;
    double denom = 0.0;
    std::vector<float> probs(static_cast<size_t>(logits.numel()));
    for (int64_t r = 0; r < rows; ++r) {
        const float m = mask.empty() ? 1.0f : mask[static_cast<size_t>(r)];
        const float* x = logits.data() + r * V;
        float* p = probs.data() + r * V;
        float mx = x[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, x[j]);
        float se = 0.0f;
        for (int j = 0; j < V; ++j) {
            p[j] = std::exp(x[j] - mx);
            se += p[j];
        }
        const float inv = 1.0f / se;
        for (int j = 0; j < V; ++j) p[j] *= inv;
        const int t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= V)
            throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " out of range for vocab " +
                                        std::to_string(V));
        if (m != 0.0f) {
            total += static_cast<double>(m) * (std::log(se) + mx - x[t]);
            denom += m;
        }
    }
    if (denom == 0.0) throw std::invalid_argument("cross_entropy: mask selects no positions");
    Tensor out = Tensor::scalar(static_cast<float>(total / denom));
    if (detail::want_grad({&logits})) {
        Tensor lc = logits, oc = out;
        auto pr = std::make_shared<std::vector<float>>(std::move(probs));
        std::vector<int> tgt(targets.begin(), targets.end());
        std::vector<float> msk(mask.begin(), mask.end());
        const float inv_denom = static_cast<float>(1.0 / denom);
        detail::record(out, [lc, oc, pr, tgt, msk, rows, V, inv_denom]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            const float g = (*og)[0] * inv_denom;
            auto& gl = lc.grad();
            for (int64_t r = 0; r < rows; ++r) {
                const float m = msk.empty() ? 1.0f : msk[static_cast<size_t>(r)];
                if (m == 0.0f) continue;
                const float* p = pr->data() + r * V;
                float* gx = gl.data() + r * V;
                const float gm = g * m;
                for (int j = 0; j < V; ++j) gx[j] += gm * p[j];
                gx[tgt[static_cast<size_t>(r)]] -= gm;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2-D convolution via im2col + GEMM. x (Cin,H,W) or (B,Cin,H,W);
// w (Cout,Cin,kh,kw); bias (Cout) optional; zero padding.
// ---------------------------------------------------------------------------
namespace detail {

// col[(ci*kh + i)*kw + j][oh*Wo + ow] = x[ci, oh*stride - pad + i, ow*stride - pad + j], zero outside.
inline void im2col(const float* x, float* col, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                   int Wo) {
    for (int ci = 0; ci < Cin; ++ci)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                float* crow = col + ((static_cast<int64_t>(ci) * kh + i) * kw + j) * Ho * Wo;
                const int lo = conv_ow_lo(j, pad, stride), hi = conv_ow_hi(j, pad, stride, W, Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    float* cdst = crow + static_cast<int64_t>(oh) * Wo;
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < Wo; ++ow) cdst[ow] = 0.0f;
                        continue;
                    }
                    const float* xrow = x + (static_cast<int64_t>(ci) * H + ih) * W;
                    for (int ow = 0; ow < lo; ++ow) cdst[ow] = 0.0f;
                    for (int ow = hi; ow < Wo; ++ow) cdst[ow] = 0.0f;
#pragma omp simd
                    for (int ow = lo; ow < hi; ++ow) cdst[ow] = xrow[ow * stride - pad + j];
                }
            }
}

// Scatter-add of a column matrix back into the image layout.
inline void col2im_add(const float* col, float* gx, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                       int Wo) {
    for (int ci = 0; ci < Cin; ++ci)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const float* crow = col + ((static_cast<int64_t>(ci) * kh + i) * kw + j) * Ho * Wo;
                const int lo = conv_ow_lo(j, pad, stride), hi = conv_ow_hi(j, pad, stride, W, Wo);
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) continue;
                    float* gxrow = gx + (static_cast<int64_t>(ci) * H + ih) * W;
                    const float* csrc = crow + static_cast<int64_t>(oh) * Wo;
#pragma omp simd
                    for (int ow = lo; ow < hi; ++ow) gxrow[ow * stride - pad + j] += csrc[ow];
                }
            }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if ((sx.size() != 3 && sx.size() != 4) || sw.size() != 4) shape_error("conv2d", sx, sw);
    const bool batched = sx.size() == 4;
    const int B = batched ? sx[0] : 1;
    const int Cin = sx[batched ? 1 : 0], H = sx[batched ? 2 : 1], W = sx[batched ? 3 : 2];
    const int Cout = sw[0], kh = sw[2], kw = sw[3];
    if (sw[1] != Cin) shape_error("conv2d", sx, sw);
    if (bias.defined() && bias.numel() != Cout) shape_error("conv2d bias", bias.shape(), sw);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) shape_error("conv2d", sx, sw);

    Shape so = batched ? Shape{B, Cout, Ho, Wo} : Shape{Cout, Ho, Wo};
    Tensor out = Tensor::zeros(so);
    const int64_t x_bstep = static_cast<int64_t>(Cin) * H * W;
    const int64_t o_bstep = static_cast<int64_t>(Cout) * Ho * Wo;
    const int K = Cin * kh * kw;
    const int N = Ho * Wo;

    std::vector<float> col(static_cast<size_t>(K) * N);
    for (int b = 0; b < B; ++b) {
        detail::im2col(x.data() + b * x_bstep, col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo);
        float* ob = out.data() + b * o_bstep;
        detail::gemm_nn(ob, w.data(), col.data(), Cout, K, N);
        if (bias.defined())
            for (int co = 0; co < Cout; ++co) {
                const float bv = bias.data()[co];
                float* orow = ob + static_cast<int64_t>(co) * N;
                for (int n = 0; n < N; ++n) orow[n] += bv;
            }
    }

    if (detail::want_grad({&x, &w, &bias})) {
        Tensor xc = x, wc = w, bc = bias, oc = out;
        detail::record(out, [xc, wc, bc, oc, B, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad, x_bstep, o_bstep, K,
                             N]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            std::vector<float> col(static_cast<size_t>(K) * N);
            std::vector<float> dcol(static_cast<size_t>(K) * N);
            for (int b = 0; b < B; ++b) {
                const float* dyb = og->data() + b * o_bstep;
                if (bc.defined() && bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (int co = 0; co < Cout; ++co) {
                        const float* dy = dyb + static_cast<int64_t>(co) * N;
                        float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                        for (int n = 0; n < N; ++n) acc += dy[n];
                        gb[co] += acc;
                    }
                }
                if (wc.requires_grad()) {
                    detail::im2col(xc.data() + b * x_bstep, col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo);
                    detail::gemm_nt(wc.grad().data(), dyb, col.data(), Cout, N, K);
                }
                if (xc.requires_grad()) {
                    std::fill(dcol.begin(), dcol.end(), 0.0f);
                    detail::gemm_tn(dcol.data(), wc.data(), dyb, Cout, K, N);
                    detail::col2im_add(dcol.data(), xc.grad().data() + b * x_bstep, Cin, H, W, kh, kw, stride, pad, Ho,
                                       Wo);
                }
            }
        });
    }
    return out;
}

// Transposed 2-D convolution (fractionally strided), also via GEMM. x
// (Cin,H,W) or (B,Cin,H,W); w (Cin,Cout,kh,kw); output H = (H-1)*stride + kh.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if ((sx.size() != 3 && sx.size() != 4) || sw.size() != 4) shape_error("conv_transpose2d", sx, sw);
    const bool batched = sx.size() == 4;
    const int B = batched ? sx[0] : 1;
    const int Cin = sx[batched ? 1 : 0], H = sx[batched ? 2 : 1], W = sx[batched ? 3 : 2];
    const int Cout = sw[1], kh = sw[2], kw = sw[3];
    if (sw[0] != Cin) shape_error("conv_transpose2d", sx, sw);
    const int Ho = (H - 1) * stride + kh;
    const int Wo = (W - 1) * stride + kw;

    Shape so = batched ? Shape{B, Cout, Ho, Wo} : Shape{Cout, Ho, Wo};
    Tensor out = Tensor::zeros(so);
    const int64_t x_bstep = static_cast<int64_t>(Cin) * H * W;
    const int64_t o_bstep = static_cast<int64_t>(Cout) * Ho * Wo;
    const int M = Cout * kh * kw;  // w viewed as (Cin, M)
    const int N = H * W;

    std::vector<float> colT(static_cast<size_t>(M) * N);
    for (int b = 0; b < B; ++b) {
        float* ob = out.data() + b * o_bstep;
        if (bias.defined())
            for (int co = 0; co < Cout; ++co) {
                const float bv = bias.data()[co];
                float* orow = ob + static_cast<int64_t>(co) * Ho * Wo;
                for (int64_t n = 0; n < static_cast<int64_t>(Ho) * Wo; ++n) orow[n] = bv;
            }
        std::fill(colT.begin(), colT.end(), 0.0f);
        detail::gemm_tn(colT.data(), w.data(), x.data() + b * x_bstep, Cin, M, N);
        // Scatter colT[(co,i,j), (ih,iw)] into out[co, ih*stride+i, iw*stride+j].
        for (int co = 0; co < Cout; ++co)
            for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j) {
                    const float* crow = colT.data() + ((static_cast<int64_t>(co) * kh + i) * kw + j) * N;
                    for (int ih = 0; ih < H; ++ih) {
                        float* orow = ob + static_cast<int64_t>(co) * Ho * Wo +
                                      static_cast<int64_t>(ih * stride + i) * Wo + j;
                        const float* csrc = crow + static_cast<int64_t>(ih) * W;
#pragma omp simd
                        for (int iw = 0; iw < W; ++iw) orow[iw * stride] += csrc[iw];
                    }
                }
    }

    if (detail::want_grad({&x, &w, &bias})) {
        Tensor xc = x, wc = w, bc = bias, oc = out;
        detail::record(out, [xc, wc, bc, oc, B, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, x_bstep, o_bstep, M,
                             N]() mutable {
            const auto* og = oc.grad_if_any();
            if (!og) return;
            std::vector<float> dcolT(static_cast<size_t>(M) * N);
            for (int b = 0; b < B; ++b) {
                const float* dyb = og->data() + b * o_bstep;
                if (bc.defined() && bc.requires_grad()) {
                    auto& gb = bc.grad();
                    for (int co = 0; co < Cout; ++co) {
                        const float* dy = dyb + static_cast<int64_t>(co) * Ho * Wo;
                        float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                        for (int64_t n = 0; n < static_cast<int64_t>(Ho) * Wo; ++n) acc += dy[n];
                        gb[co] += acc;
                    }
                }
                // Gather dcolT[(co,i,j), (ih,iw)] = dY[co, ih*stride+i, iw*stride+j].
                for (int co = 0; co < Cout; ++co)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            float* crow = dcolT.data() + ((static_cast<int64_t>(co) * kh + i) * kw + j) * N;
                            for (int ih = 0; ih < H; ++ih) {
                                const float* dyr = dyb + static_cast<int64_t>(co) * Ho * Wo +
                                                   static_cast<int64_t>(ih * stride + i) * Wo + j;
                                float* cdst = crow + static_cast<int64_t>(ih) * W;
#pragma omp simd
                                for (int iw = 0; iw < W; ++iw) cdst[iw] = dyr[iw * stride];
                            }
                        }
                if (xc.requires_grad())
                    detail::gemm_nn(xc.grad().data() + b * x_bstep, wc.data(), dcolT.data(), Cin, M, N);
                if (wc.requires_grad())
                    detail::gemm_nt(wc.grad().data(), xc.data() + b * x_bstep, dcolT.data(), Cin, N, M);
            }
        });
    }
    return out;
}

// Multiplies by a fixed Bernoulli keep-mask scaled by 1/(1-p). Identity when
// p == 0 or no tape is active (inference).
inline Tensor dropout(const Tensor& a, float p, Rng& rng) {
    if (p <= 0.0f || active_tape() == nullptr) return a;
    if (p >= 1.0f) throw std::invalid_argument("dropout: p must be < 1");
    Tensor mask = Tensor::zeros(a.shape());
    const float scale = 1.0f / (1.0f - p);
    for (int64_t i = 0; i < mask.numel(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0f : scale;
    return mul(a, mask);
}

// Detached copy: same values, no gradient path.
inline Tensor detach(const Tensor& a) { return Tensor::from(a.shape(), a.values(), false); }

// backward: seeds d(loss)/d(loss) = 1 and replays the tape once in reverse.
// Tensors that never reached the loss keep zero gradients.
inline void backward(Tape& tape, Tensor loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.grad()[0] = 1.0f;
    tape.replay_backward();
}

inline bool all_finite(const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t.data()[i])) return false;
    return true;
}

// Gaussian-initialized tensor, the default for projection weights.
inline Tensor randn(Shape shape, float stddev, Rng& rng, bool requires_grad = true) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.gaussian()) * stddev;
    return t;
}

}  // namespace tabrec
