#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"

namespace advret {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

// Dense row-major tensor, rank 1..4. Rank-4 tensors use NCHW layout.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape dims) : dims_(std::move(dims)), data_(static_cast<std::size_t>(shape_numel(dims_)), T(0)) {}

    Tensor(Shape dims, std::vector<T> values) : dims_(std::move(dims)), data_(std::move(values)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(dims_))
            throw ShapeError("tensor data size does not match shape " + shape_str(dims_));
    }

    static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }

    static Tensor full(Shape dims, T value) {
        Tensor t(std::move(dims));
        t.fill(value);
        return t;
    }

    static Tensor randn(Shape dims, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(dims));
        for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    static Tensor rand_uniform(Shape dims, Rng& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(dims));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool empty() const { return data_.empty(); }
    int rank() const { return static_cast<int>(dims_.size()); }
    const Shape& dims() const { return dims_; }
    int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    // NCHW accessors (rank 4).
    int n() const { return dim4(0); }
    int c() const { return dim4(1); }
    int h() const { return dim4(2); }
    int w() const { return dim4(3); }

    // Rank-2 accessors.
    int rows() const { return dim2(0); }
    int cols() const { return dim2(1); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dims_[1] + j]; }

    T& at(int ni, int ci, int hi, int wi) { return data_[offset4(ni, ci, hi, wi)]; }
    const T& at(int ni, int ci, int hi, int wi) const { return data_[offset4(ni, ci, hi, wi)]; }

    std::size_t offset4(int ni, int ci, int hi, int wi) const {
        assert(rank() == 4);
        return ((static_cast<std::size_t>(ni) * dims_[1] + ci) * dims_[2] + hi) * dims_[3] + wi;
    }

    Tensor reshaped(Shape new_dims) const {
        if (shape_numel(new_dims) != size())
            throw ShapeError("reshape " + shape_str(dims_) + " -> " + shape_str(new_dims) + " changes element count");
        Tensor t = *this;
        t.dims_ = std::move(new_dims);
        return t;
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    void zero() { fill(T(0)); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o);
        for (std::int64_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o);
        for (std::int64_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    double sum() const {
        double acc = 0.0;
        for (const auto& v : data_) acc += static_cast<double>(v);
        return acc;
    }

    double mean() const { return size() ? sum() / static_cast<double>(size()) : 0.0; }

    T min_value() const {
        T m = std::numeric_limits<T>::max();
        for (const auto& v : data_) m = std::min(m, v);
        return m;
    }

    T max_value() const {
        T m = std::numeric_limits<T>::lowest();
        for (const auto& v : data_) m = std::max(m, v);
        return m;
    }

    T abs_max() const {
        T m = T(0);
        for (const auto& v : data_) m = std::max(m, static_cast<T>(std::abs(v)));
        return m;
    }

    bool all_finite() const {
        for (const auto& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    void require_same_shape(const Tensor& o) const {
        if (!same_shape(o))
            throw ShapeError("shape mismatch: " + shape_str(dims_) + " vs " + shape_str(o.dims_));
    }

    bool operator==(const Tensor& o) const { return dims_ == o.dims_ && data_ == o.data_; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(dims_);
        for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

    const std::vector<T>& storage() const { return data_; }

private:
    int dim4(int i) const {
        if (rank() != 4) throw ShapeError("expected rank-4 tensor, got " + shape_str(dims_));
        return dims_[static_cast<std::size_t>(i)];
    }

    int dim2(int i) const {
        if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_str(dims_));
        return dims_[static_cast<std::size_t>(i)];
    }

    Shape dims_;
    std::vector<T> data_;
};

template <class T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
    a += b;
    return a;
}

template <class T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
    a -= b;
    return a;
}

template <class T>
double rms(const Tensor<T>& t) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double v = static_cast<double>(t[i]);
        acc += v * v;
    }
    return t.size() ? std::sqrt(acc / static_cast<double>(t.size())) : 0.0;
}

}  // namespace advret
