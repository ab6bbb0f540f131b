#pragma once

#include <cmath>
#include <functional>

#include "advret/advret.hpp"

namespace th {

using advret::Rng;
using advret::Tensor;

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

// Central finite difference of a scalar functional with respect to one
// tensor coordinate. The tensor is restored afterwards.
inline double central_diff(Tensor<double>& t, std::int64_t i, const std::function<double()>& f, double h = 1e-5) {
    const double orig = t[i];
    t[i] = orig + h;
    const double fp = f();
    t[i] = orig - h;
    const double fm = f();
    t[i] = orig;
    return (fp - fm) / (2.0 * h);
}

// Fixed random projection turning a tensor-valued function into a scalar
// one, so a single backward pass yields every gradient at once.
inline Tensor<double> random_weights(const advret::Shape& dims, Rng& rng) {
    return Tensor<double>::rand_uniform(dims, rng, -1.0, 1.0);
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * w[i];
    return acc;
}

// Compares an analytic gradient tensor against finite differences on a
// deterministic coordinate sample. Near-zero pairs count as matching.
inline void check_gradient(Tensor<double>& input, const Tensor<double>& analytic,
                           const std::function<double()>& loss, int samples, Rng& rng, double tol = 1e-4,
                           double h = 1e-5) {
    REQUIRE(analytic.size() == input.size());
    for (int s = 0; s < samples; ++s) {
        const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(input.size())));
        const double fd = central_diff(input, i, loss, h);
        const double an = analytic[i];
        if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
        INFO("coordinate " << i << ": analytic " << an << " vs fd " << fd);
        REQUIRE(rel_err(an, fd) <= tol);
    }
}

}  // namespace th
