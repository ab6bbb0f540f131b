#pragma once

#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/nn/layers.hpp"
#include "advret/nn/module.hpp"

namespace advret {

// Real-vs-adversarial critic: stride-2 conv blocks (conv + batch norm +
// leaky ReLU), then a single-kernel conv, global average pooling and a
// sigmoid producing one score per image.
struct DiscriminatorSpec {
    int input_channels = 3;
    std::vector<int> conv_blocks = {8, 16, 32};
    int kernel_size = 4;
    int stride = 2;
    int head_kernel = 1;
    double leaky_slope = 0.2;

    void validate() const {
        if (input_channels <= 0) throw ConfigError("discriminator: input_channels must be positive");
        if (conv_blocks.empty()) throw ConfigError("discriminator: conv_blocks must not be empty");
        for (int kc : conv_blocks)
            if (kc <= 0) throw ConfigError("discriminator: kernel counts must be positive");
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
            throw ConfigError("discriminator: leaky_slope must lie in (0,1)");
        if (kernel_size != 4 || stride != 2) throw ConfigError("discriminator: conv blocks are 4x4 stride 2");
        if (head_kernel != 1) throw ConfigError("discriminator: head kernel must be 1x1");
    }
};

template <class T>
class Discriminator {
public:
    explicit Discriminator(DiscriminatorSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        int in_c = spec_.input_channels;
        int i = 0;
        for (int kc : spec_.conv_blocks) {
            const std::string name = "block" + std::to_string(++i);
            body_.template emplace<nn::Conv2d<T>>(name + ".conv", in_c, kc, spec_.kernel_size, spec_.stride, 1);
            body_.template emplace<nn::BatchNorm2d<T>>(name + ".norm", kc);
            body_.template emplace<nn::LeakyReLU<T>>(name + ".lrelu", spec_.leaky_slope);
            in_c = kc;
        }
        body_.template emplace<nn::Conv2d<T>>("head.conv", in_c, 1, spec_.head_kernel, 1, 0);
        body_.register_params("", registry_);
    }

    void init_params(std::uint64_t seed, double stddev = 0.02) {
        Rng rng(seed);
        for (const auto& e : registry_.entries()) {
            if (!e.trainable) continue;
            if (e.name.ends_with(".weight"))
                for (std::int64_t j = 0; j < e.value->size(); ++j) (*e.value)[j] = static_cast<T>(rng.normal(0.0, stddev));
            else if (e.name.ends_with(".bias"))
                e.value->zero();
        }
    }

    // Scores in (0,1), one per image.
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        check(x);
        Tensor<T> a = body_.forward(x, training);
        a = pool_.forward(a, training);           // [n,1]
        a = head_act_.forward(a, training);       // sigmoid
        return a.reshaped({a.rows()});
    }

    Tensor<T> eval(const Tensor<T>& x) const {
        check(x);
        Tensor<T> a = head_act_.eval(pool_.eval(body_.eval(x)));
        return a.reshaped({a.rows()});
    }

    Tensor<T> backward(const Tensor<T>& dscores) {
        Tensor<T> g = dscores.reshaped({dscores.dim(0), 1});
        g = head_act_.backward(g);
        g = pool_.backward(g);
        return body_.backward(g);
    }

    const DiscriminatorSpec& spec() const { return spec_; }
    nn::ParamRegistry<T>& params() { return registry_; }
    const nn::ParamRegistry<T>& params() const { return registry_; }

private:
    void check(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.c() != spec_.input_channels)
            throw ShapeError("discriminator: expected [n," + std::to_string(spec_.input_channels) + ",h,w], got " +
                             shape_str(x.dims()));
        if (x.h() < 16 || x.w() < 16)
            throw ShapeError("discriminator: spatial dims must be at least 16, got " + shape_str(x.dims()));
    }

    DiscriminatorSpec spec_;
    nn::Sequential<T> body_;
    nn::GlobalAvgPool<T> pool_;
    nn::Sigmoid<T> head_act_;
    nn::ParamRegistry<T> registry_;
};

inline std::int64_t discriminator_param_count(const DiscriminatorSpec& spec) {
    const int k2 = spec.kernel_size * spec.kernel_size;
    std::int64_t count = 0;
    int in_c = spec.input_channels;
    for (int kc : spec.conv_blocks) {
        count += static_cast<std::int64_t>(kc) * in_c * k2 + kc;  // conv
        count += 2LL * kc;                                        // norm affine
        in_c = kc;
    }
    count += static_cast<std::int64_t>(in_c) * spec.head_kernel * spec.head_kernel + 1;
    return count;
}

template <class T>
Discriminator<T> build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
    Discriminator<T> d(spec);
    d.init_params(seed);
    return d;
}

}  // namespace advret
