#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec {

struct AdamWConfig {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

// Per-parameter moment slots plus the shared step counter.
struct AdamWState {
    AdamWConfig config;
    int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    explicit AdamWState(AdamWConfig cfg = {}) : config(cfg) {}

    void ensure_slots(const std::vector<Tensor>& params) {
        if (m.size() == params.size()) return;
        m.clear();
        v.clear();
        for (const Tensor& p : params) {
            m.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
            v.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        }
    }
};

// Decoupled-weight-decay AdamW with bias correction. A non-finite gradient
// aborts the whole step and reports which parameter tripped; nothing is
// updated and the step counter stays put.
inline std::optional<std::string> adamw_step(std::vector<Tensor>& params, AdamWState& state,
                                             std::optional<float> lr_override = std::nullopt) {
    state.ensure_slots(params);
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* g = params[i].grad_if_any();
        if (!g) continue;
        for (float v : *g)
            if (!std::isfinite(v))
                return "adamw_step aborted: non-finite gradient in parameter " + std::to_string(i) + " of shape " +
                       shape_str(params[i].shape());
    }
    state.step += 1;
    const AdamWConfig& c = state.config;
    const float lr = lr_override.value_or(c.lr);
    const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const auto* gp = p.grad_if_any();
        auto& m = state.m[i];
        auto& v = state.v[i];
        float* pd = p.data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            const float g = gp ? (*gp)[static_cast<size_t>(j)] : 0.0f;
            m[static_cast<size_t>(j)] = c.beta1 * m[static_cast<size_t>(j)] + (1.0f - c.beta1) * g;
            v[static_cast<size_t>(j)] = c.beta2 * v[static_cast<size_t>(j)] + (1.0f - c.beta2) * g * g;
            const float mhat = static_cast<float>(m[static_cast<size_t>(j)] / bc1);
            const float vhat = static_cast<float>(v[static_cast<size_t>(j)] / bc2);
            pd[j] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * pd[j]);
        }
    }
    return std::nullopt;
}

// Scales all gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (Tensor& p : params) {
        const auto* g = p.grad_if_any();
        if (!g) continue;
        for (float v : *g) sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float scale = static_cast<float>(max_norm / norm);
        for (Tensor& p : params) {
            if (!p.grad_if_any()) continue;
            for (float& v : p.grad()) v *= scale;
        }
    }
    return norm;
}

inline void zero_grads(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

struct LrSchedule {
    float base_lr = 3e-4f;
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;
};

// Linear ramp 0 -> base_lr over warmup_steps, then cosine decay to 0 at
// total_steps. Steps past the end clamp to 0.
inline float lr_at(const LrSchedule& s, int64_t step) {
    if (s.warmup_steps < 0 || s.warmup_steps >= s.total_steps)
        throw std::invalid_argument("lr_at: need 0 <= warmup_steps < total_steps");
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (step > s.total_steps) return 0.0f;
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<float>(step) / static_cast<float>(s.warmup_steps);
    const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    return static_cast<float>(s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

}  // namespace tabrec
