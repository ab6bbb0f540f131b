#pragma once

#include <cmath>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/tensor.hpp"

namespace advret {

enum class ClipGradMode {
    ZeroOutsideBand,  // subgradient: pass-through strictly inside the band, zero outside
    StraightThrough,  // pass the gradient everywhere
};

// Elementwise pass-through mask recorded by the clip forward passes.
struct ClipCache {
    std::vector<unsigned char> pass;
};

// delta = clip(raw, -epsilon, epsilon)
template <class T>
Tensor<T> clip_perturbation(const Tensor<T>& raw, double epsilon, ClipCache* cache = nullptr) {
    if (!(epsilon > 0.0)) throw ConfigError("clip_perturbation: epsilon must be positive");
    if (!raw.all_finite()) throw DomainError("clip_perturbation: raw perturbation contains non-finite values");
    const T eps = static_cast<T>(epsilon);
    Tensor<T> out(raw.dims());
    if (cache) cache->pass.assign(static_cast<std::size_t>(raw.size()), 0);
    for (std::int64_t i = 0; i < raw.size(); ++i) {
        const T v = raw[i];
        out[i] = v < -eps ? -eps : (v > eps ? eps : v);
        if (cache) cache->pass[static_cast<std::size_t>(i)] = (v > -eps && v < eps);
    }
    return out;
}

template <class T>
Tensor<T> clip_perturbation_backward(const Tensor<T>& ddelta, const ClipCache& cache,
                                     ClipGradMode mode = ClipGradMode::ZeroOutsideBand) {
    if (mode == ClipGradMode::StraightThrough) return ddelta;
    Tensor<T> draw(ddelta.dims());
    for (std::int64_t i = 0; i < ddelta.size(); ++i)
        draw[i] = cache.pass[static_cast<std::size_t>(i)] ? ddelta[i] : T(0);
    return draw;
}

// x_adv = clip(x + delta, 0, 1)
template <class T>
Tensor<T> compose_adversarial(const Tensor<T>& x, const Tensor<T>& delta, ClipCache* cache = nullptr) {
    x.require_same_shape(delta);
    Tensor<T> out(x.dims());
    if (cache) cache->pass.assign(static_cast<std::size_t>(x.size()), 0);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const T s = x[i] + delta[i];
        out[i] = s < T(0) ? T(0) : (s > T(1) ? T(1) : s);
        if (cache) cache->pass[static_cast<std::size_t>(i)] = (s > T(0) && s < T(1));
    }
    return out;
}

// Gradient of the adversarial image with respect to delta (identical for x).
template <class T>
Tensor<T> compose_adversarial_backward(const Tensor<T>& dx_adv, const ClipCache& cache) {
    Tensor<T> d(dx_adv.dims());
    for (std::int64_t i = 0; i < dx_adv.size(); ++i)
        d[i] = cache.pass[static_cast<std::size_t>(i)] ? dx_adv[i] : T(0);
    return d;
}

// Per-image root-mean-square of a perturbation batch, used both for noise
// reporting and for matching the Gaussian baseline's level.
template <class T>
std::vector<double> per_image_rms(const Tensor<T>& delta) {
    const int N = delta.n();
    const std::int64_t per = delta.size() / N;
    std::vector<double> out(static_cast<std::size_t>(N), 0.0);
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const T* p = delta.data() + static_cast<std::int64_t>(n) * per;
        for (std::int64_t i = 0; i < per; ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        out[static_cast<std::size_t>(n)] = std::sqrt(acc / static_cast<double>(per));
    }
    return out;
}

}  // namespace advret
