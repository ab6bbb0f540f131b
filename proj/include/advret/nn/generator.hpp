#pragma once

#include <string>
#include <utility>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/nn/layers.hpp"
#include "advret/nn/module.hpp"

namespace advret {

// Encoder-decoder perturbation generator: a stride-1 conv block plus
// stride-2 conv blocks (conv + instance norm + ReLU) down, residual blocks
// at the bottleneck, nearest-neighbour resize-convolutions up, and a bare
// final conv whose output range is handled entirely by clipping.
struct GeneratorSpec {
    int input_channels = 3;
    std::vector<std::pair<int, int>> down_blocks = {{8, 1}, {16, 2}, {32, 2}};  // (kernel_count, stride)
    int residual_blocks = 4;
    int residual_channels = 32;
    std::vector<int> up_blocks = {16, 8, 3};  // kernel counts; last = output channels
    int kernel_size = 3;
    double epsilon = 0.1;
    bool instance_affine = true;

    int stride2_downs() const {
        int n = 0;
        for (const auto& [kc, s] : down_blocks)
            if (s == 2) ++n;
        return n;
    }

    // Inputs must be padded to a multiple of this before the encoder.
    int stride_multiple() const { return 1 << stride2_downs(); }

    void validate() const {
        if (input_channels <= 0) throw ConfigError("generator: input_channels must be positive");
        if (down_blocks.empty()) throw ConfigError("generator: down_blocks must not be empty");
        for (const auto& [kc, s] : down_blocks) {
            if (kc <= 0) throw ConfigError("generator: down block kernel count must be positive");
            if (s != 1 && s != 2) throw ConfigError("generator: down block stride must be 1 or 2");
        }
        if (residual_blocks < 0) throw ConfigError("generator: residual_blocks must be >= 0");
        if (residual_channels != down_blocks.back().first)
            throw ConfigError("generator: residual_channels must match the last down block");
        if (up_blocks.empty()) throw ConfigError("generator: up_blocks must not be empty");
        for (int kc : up_blocks)
            if (kc <= 0) throw ConfigError("generator: up block kernel count must be positive");
        if (static_cast<int>(up_blocks.size()) != stride2_downs() + 1)
            throw ConfigError("generator: up_blocks must supply one upsample per stride-2 down plus the output conv");
        if (up_blocks.back() != input_channels)
            throw ConfigError("generator: final up block must emit input_channels kernels");
        if (kernel_size != 3) throw ConfigError("generator: kernel_size must be 3");
        if (!(epsilon > 0.0)) throw ConfigError("generator: epsilon must be positive");
    }
};

namespace nn {

template <class T>
class ResidualBlock : public Layer<T> {
public:
    explicit ResidualBlock(int channels)
        : conv1_(channels, channels, 3, 1, 1),
          norm1_(channels),
          conv2_(channels, channels, 3, 1, 1),
          norm2_(channels) {}

    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> y = norm2_.eval(conv2_.eval(relu_.eval(norm1_.eval(conv1_.eval(x)))));
        y += x;
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> y = norm2_.forward(conv2_.forward(relu_.forward(norm1_.forward(conv1_.forward(x, training), training), training), training), training);
        y += x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> g = conv1_.backward(norm1_.backward(relu_.backward(conv2_.backward(norm2_.backward(dy)))));
        g += dy;
        return g;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        conv1_.register_params(prefix + ".conv1", reg);
        norm1_.register_params(prefix + ".norm1", reg);
        conv2_.register_params(prefix + ".conv2", reg);
        norm2_.register_params(prefix + ".norm2", reg);
    }

private:
    Conv2d<T> conv1_;
    BatchNorm2d<T> norm1_;
    Conv2d<T> conv2_;
    BatchNorm2d<T> norm2_;
    ReLU<T> relu_;
};

}  // namespace nn

template <class T>
class Generator {
public:
    explicit Generator(GeneratorSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        int in_c = spec_.input_channels;
        int i = 0;
        for (const auto& [kc, stride] : spec_.down_blocks) {
            const std::string name = "down" + std::to_string(++i);
            body_.template emplace<nn::Conv2d<T>>(name + ".conv", in_c, kc, spec_.kernel_size, stride, 1);
            body_.template emplace<nn::InstanceNorm2d<T>>(name + ".norm", kc, spec_.instance_affine);
            body_.template emplace<nn::ReLU<T>>(name + ".relu");
            in_c = kc;
        }
        for (int r = 0; r < spec_.residual_blocks; ++r)
            body_.template emplace<nn::ResidualBlock<T>>("res" + std::to_string(r + 1), spec_.residual_channels);
        for (std::size_t u = 0; u + 1 < spec_.up_blocks.size(); ++u) {
            const std::string name = "up" + std::to_string(u + 1);
            const int kc = spec_.up_blocks[u];
            body_.template emplace<nn::UpsampleNearest2x<T>>(name + ".resize");
            body_.template emplace<nn::Conv2d<T>>(name + ".conv", in_c, kc, spec_.kernel_size, 1, 1);
            body_.template emplace<nn::InstanceNorm2d<T>>(name + ".norm", kc, spec_.instance_affine);
            body_.template emplace<nn::ReLU<T>>(name + ".relu");
            in_c = kc;
        }
        body_.template emplace<nn::Conv2d<T>>("out.conv", in_c, spec_.up_blocks.back(), spec_.kernel_size, 1, 1);
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

    // Raw (unclipped) perturbation, same spatial dims as the input.
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        auto [h, w, pb, pr] = check_and_pads(x);
        orig_h_ = h;
        orig_w_ = w;
        pad_b_ = pb;
        pad_r_ = pr;
        Tensor<T> a = pb || pr ? nn::reflect_pad(x, pb, pr) : x;
        a = body_.forward(a, training);
        return crop(a, h, w);
    }

    Tensor<T> eval(const Tensor<T>& x) const {
        auto [h, w, pb, pr] = check_and_pads(x);
        Tensor<T> a = pb || pr ? nn::reflect_pad(x, pb, pr) : x;
        a = body_.eval(a);
        return crop(a, h, w);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> g = dy;
        if (pad_b_ || pad_r_) {
            Tensor<T> padded({dy.n(), dy.c(), orig_h_ + pad_b_, orig_w_ + pad_r_});
            for (int n = 0; n < dy.n(); ++n)
                for (int ci = 0; ci < dy.c(); ++ci)
                    for (int yy = 0; yy < orig_h_; ++yy)
                        for (int xx = 0; xx < orig_w_; ++xx)
                            padded.at(n, ci, yy, xx) = dy.at(n, ci, yy, xx);
            g = std::move(padded);
        }
        g = body_.backward(g);
        if (pad_b_ || pad_r_) g = nn::reflect_pad_backward(g, orig_h_, orig_w_);
        return g;
    }

    const GeneratorSpec& spec() const { return spec_; }
    nn::ParamRegistry<T>& params() { return registry_; }
    const nn::ParamRegistry<T>& params() const { return registry_; }

private:
    std::tuple<int, int, int, int> check_and_pads(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.c() != spec_.input_channels)
            throw ShapeError("generator: expected [n," + std::to_string(spec_.input_channels) + ",h,w], got " +
                             shape_str(x.dims()));
        if (x.h() < 16 || x.w() < 16)
            throw ShapeError("generator: spatial dims must be at least 16, got " + shape_str(x.dims()));
        const int mult = spec_.stride_multiple();
        const int pb = (mult - x.h() % mult) % mult;
        const int pr = (mult - x.w() % mult) % mult;
        return {x.h(), x.w(), pb, pr};
    }

    static Tensor<T> crop(const Tensor<T>& a, int h, int w) {
        if (a.h() == h && a.w() == w) return a;
        Tensor<T> out({a.n(), a.c(), h, w});
        for (int n = 0; n < a.n(); ++n)
            for (int ci = 0; ci < a.c(); ++ci)
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx) out.at(n, ci, yy, xx) = a.at(n, ci, yy, xx);
        return out;
    }

    GeneratorSpec spec_;
    nn::Sequential<T> body_;
    nn::ParamRegistry<T> registry_;
    int orig_h_ = 0, orig_w_ = 0, pad_b_ = 0, pad_r_ = 0;
};

// Closed-form trainable parameter count implied by a spec; kept next to the
// builder so checkpoints and tests agree on what a "complete" set is.
inline std::int64_t generator_param_count(const GeneratorSpec& spec) {
    const int k2 = spec.kernel_size * spec.kernel_size;
    std::int64_t count = 0;
    int in_c = spec.input_channels;
    for (const auto& [kc, stride] : spec.down_blocks) {
        count += static_cast<std::int64_t>(kc) * in_c * k2 + kc;  // conv w + b
        if (spec.instance_affine) count += 2LL * kc;              // norm gamma + beta
        in_c = kc;
    }
    count += spec.residual_blocks *
             (2LL * (static_cast<std::int64_t>(spec.residual_channels) * spec.residual_channels * k2 +
                     spec.residual_channels) +
              2LL * 2 * spec.residual_channels);
    for (std::size_t u = 0; u + 1 < spec.up_blocks.size(); ++u) {
        const int kc = spec.up_blocks[u];
        count += static_cast<std::int64_t>(kc) * in_c * k2 + kc;
        if (spec.instance_affine) count += 2LL * kc;
        in_c = kc;
    }
    count += static_cast<std::int64_t>(spec.up_blocks.back()) * in_c * k2 + spec.up_blocks.back();
    return count;
}

template <class T>
Generator<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
    Generator<T> g(spec);
    g.init_params(seed);
    return g;
}

}  // namespace advret
