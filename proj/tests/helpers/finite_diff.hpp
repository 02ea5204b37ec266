#pragma once

// Central finite-difference gradient oracle, independent of the tape: it only
// ever calls the forward path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tabrec/tensor.hpp"

namespace testutil {

// d(loss)/d(x[i]) for every i via central differences.
inline std::vector<double> fd_gradient(tabrec::Tensor& x, const std::function<double()>& forward, double h = 1e-3) {
    std::vector<double> g(static_cast<size_t>(x.numel()));
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float orig = x.data()[i];
        x.data()[i] = static_cast<float>(orig + h);
        const double up = forward();
        x.data()[i] = static_cast<float>(orig - h);
        const double down = forward();
        x.data()[i] = orig;
        g[static_cast<size_t>(i)] = (up - down) / (2.0 * h);
    }
    return g;
}

// As above but only at the given flat indices, for large parameter tensors.
inline std::vector<double> fd_gradient_at(tabrec::Tensor& x, const std::vector<int64_t>& indices,
                                          const std::function<double()>& forward, double h = 1e-3) {
    std::vector<double> g;
    g.reserve(indices.size());
    for (int64_t i : indices) {
        const float orig = x.data()[i];
        x.data()[i] = static_cast<float>(orig + h);
        const double up = forward();
        x.data()[i] = static_cast<float>(orig - h);
        const double down = forward();
        x.data()[i] = orig;
        g.push_back((up - down) / (2.0 * h));
    }
    return g;
}

// Relative L2-norm error between analytic and finite-difference gradients,
// the f32-robust aggregate used throughout the gradient suite.
inline double grad_rel_error(const std::vector<float>& analytic, const std::vector<double>& fd) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double d = static_cast<double>(analytic[i]) - fd[i];
        diff += d * d;
        na += static_cast<double>(analytic[i]) * analytic[i];
        nb += fd[i] * fd[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

// Worst per-partial mismatch beyond rtol*|g| plus an absolute allowance for
// the f32 evaluation noise floor of the differenced loss.
inline bool partials_match(const std::vector<float>& analytic, const std::vector<double>& fd, double rtol,
                           double atol) {
    for (size_t i = 0; i < fd.size(); ++i) {
        const double a = analytic[i];
        const double b = fd[i];
        if (std::abs(a - b) > rtol * std::max(std::abs(a), std::abs(b)) + atol) return false;
    }
    return true;
}

}  // namespace testutil
