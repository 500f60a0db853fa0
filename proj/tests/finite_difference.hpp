#pragma once

// Central finite-difference oracle shared by the gradient tests. It only
// evaluates the forward pass, so it stays independent of every backward rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "camf/autograd.hpp"

namespace camf::testing {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|); pairs where both magnitudes fall
// below `floor` are compared absolutely against `floor * tol` instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < floor) {
        return std::abs(analytic - numeric) / floor;
    }
    return std::abs(analytic - numeric) / scale;
}

// `loss` evaluates the scalar objective for the given parameter values.
inline GradCheckReport check_gradients(ParamStore& params, const Gradients& analytic,
                                       const std::function<double(const ParamStore&)>& loss,
                                       double step = 1e-5) {
    GradCheckReport report;
    for (auto& [name, tensor] : params) {
        const Tensor& g = analytic.at(name);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + step;
            const double up = loss(params);
            tensor[i] = saved - step;
            const double down = loss(params);
            tensor[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = relative_error(g[i], numeric);
            ++report.checked;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = name + "[" + std::to_string(i) + "] analytic=" +
                               std::to_string(g[i]) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return report;
}

}  // namespace camf::testing
