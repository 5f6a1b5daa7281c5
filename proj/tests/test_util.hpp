#pragma once

#include <cmath>
#include <functional>

#include "gwf/tensor.hpp"

namespace gwf::testutil {

/// Central-difference check for a parameter embedded in a model: loss_fn
/// rebuilds the loss from scratch on every call; param data is perturbed in
/// place. Returns max relative error between backward grad and differences.
inline double param_fd_check(const std::function<Tensor()>& loss_fn, Tensor param,
                             double eps = 1e-6, int max_coords = 0) {
    param.zero_grad();
    backward(loss_fn());
    std::vector<double> analytic = param.grad();
    double worst = 0.0;
    const std::int64_t stride =
        max_coords > 0 ? std::max<std::int64_t>(1, param.size() / max_coords) : 1;
    for (std::int64_t i = 0; i < param.size(); i += stride) {
        const double saved = param.data()[i];
        param.data()[i] = saved + eps;
        const double fp = loss_fn().item();
        param.data()[i] = saved - eps;
        const double fm = loss_fn().item();
        param.data()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[static_cast<size_t>(i)] - numeric) /
                           (std::abs(analytic[static_cast<size_t>(i)]) + eps);
        worst = std::max(worst, err);
    }
    return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace gwf::testutil
