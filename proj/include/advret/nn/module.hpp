#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "advret/core/tensor.hpp"

namespace advret::nn {

// One named array of a network: either a trainable parameter (weight, bias,
// affine scale/shift) or a tracked statistic (running mean/var). Statistics
// are checkpointed but never touched by the optimizer.
template <class T>
struct ParamEntry {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;  // null for statistics
    bool trainable = true;
};

template <class T>
class ParamRegistry {
public:
    void add(std::string name, Tensor<T>* value, Tensor<T>* grad) {
        entries_.push_back({std::move(name), value, grad, true});
    }

    void add_statistic(std::string name, Tensor<T>* value) {
        entries_.push_back({std::move(name), value, nullptr, false});
    }

    const std::vector<ParamEntry<T>>& entries() const { return entries_; }

    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.value->size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_)
            if (e.grad) e.grad->zero();
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            if (!e.value->all_finite()) return false;
        return true;
    }

private:
    std::vector<ParamEntry<T>> entries_;
};

// Layers keep the activations needed for backward() internally, so the
// training-time sequence forward -> backward belongs to a single owner.
// eval() is const, touches no caches or statistics, and is safe to call
// concurrently on disjoint batches.
template <class T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> eval(const Tensor<T>& x) const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
    virtual void register_params(const std::string& /*prefix*/, ParamRegistry<T>& /*reg*/) {}
};

template <class T>
class Sequential : public Layer<T> {
public:
    Sequential() = default;

    template <class L, class... Args>
    L& emplace(std::string name, Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        names_.push_back(std::move(name));
        layers_.push_back(std::move(layer));
        return ref;
    }

    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> a = x;
        for (const auto& l : layers_) a = l->eval(a);
        return a;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> a = x;
        for (auto& l : layers_) a = l->forward(a, training);
        return a;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        Tensor<T> g = grad_out;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i]->register_params(prefix.empty() ? names_[i] : prefix + "." + names_[i], reg);
    }

    std::size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const std::string& layer_name(std::size_t i) const { return names_[i]; }

private:
    std::vector<std::string> names_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace advret::nn
