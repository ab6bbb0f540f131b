#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "advret/core/tensor.hpp"
#include "advret/nn/module.hpp"

namespace advret {

// Adam with bias correction. Moment tensors are aligned with the trainable
// entries of one registry, in registration order.
template <class T>
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(nn::ParamRegistry<T>& reg, double lr) {
        ensure(reg);
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        std::size_t slot = 0;
        for (const auto& e : reg.entries()) {
            if (!e.trainable) continue;
            Tensor<T>& m = m_[slot];
            Tensor<T>& v = v_[slot];
            ++slot;
            for (std::int64_t i = 0; i < e.value->size(); ++i) {
                const double g = static_cast<double>((*e.grad)[i]);
                const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
                const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                (*e.value)[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }

    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }

    void ensure(const nn::ParamRegistry<T>& reg) {
        if (!m_.empty()) return;
        for (const auto& e : reg.entries()) {
            if (!e.trainable) continue;
            m_.emplace_back(e.value->dims());
            v_.emplace_back(e.value->dims());
        }
    }

private:
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace advret
