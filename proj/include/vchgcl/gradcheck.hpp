#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vchgcl/tensor.hpp"

namespace vchgcl {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0; // at worst_index
    double numeric = 0.0;
};

/// Central-difference check of d f / d x for every coordinate of the leaves in
/// `inputs`. `f` must rebuild its graph from the current leaf values on every
/// call. Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult gradient_check_all(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                          double h = 1e-5) {
    for (auto& x : inputs) {
        if (!x.requires_grad()) x.set_requires_grad(true);
        x.zero_grad();
    }
    backward(f());

    GradCheckResult result;
    std::size_t flat = 0;
    NoGradGuard no_grad;
    for (auto& x : inputs) {
        auto values = x.mutable_data();
        auto grad = x.grad();
        for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double err = std::abs(analytic - numeric) / denom;
            if (!(err <= result.max_relative_error)) {
                result.max_relative_error = std::isnan(err) ? INFINITY : err;
                result.worst_index = flat;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

/// Single-input form: f maps x to a scalar. Returns the maximum relative error.
inline double gradient_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    return gradient_check_all([&] { return f(x); }, {x}, h).max_relative_error;
}

} // namespace vchgcl
