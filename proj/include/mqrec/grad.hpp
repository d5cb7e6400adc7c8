#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mqrec/common.hpp"

namespace mqrec {

/// How gradients cross an edge of the compute graph. stop_gradient zeroes
/// them; straight_through copies them unchanged across a non-differentiable
/// boundary (here: nearest-codeword selection).
enum class GradRoute { normal, stop_gradient, straight_through };

inline std::vector<double> route_gradient(GradRoute route, std::span<const double> upstream) {
    switch (route) {
        case GradRoute::stop_gradient:
            return std::vector<double>(upstream.size(), 0.0);
        case GradRoute::normal:
        case GradRoute::straight_through:
            return std::vector<double>(upstream.begin(), upstream.end());
    }
    return {};
}

/// Central-difference check of analytic gradients. Perturbs each parameter
/// in place, re-evaluates `f`, and returns the max relative error
/// |numeric - analytic| / (max(|numeric|, |analytic|) + eps).
inline double finite_difference_check(const std::function<double()>& f,
                                      std::span<double> params,
                                      std::span<const double> analytic, double step,
                                      double eps = 1e-6) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be > 0");
    if (params.size() != analytic.size())
        throw std::invalid_argument("finite_difference_check: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double fp = f();
        params[i] = saved - step;
        const double fm = f();
        params[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_difference_check: non-finite evaluation");
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max(std::abs(numeric), std::abs(analytic[i])) + eps;
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace mqrec
