#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/nn/module.hpp"

namespace advret::nn {

template <class T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Column buffer layout: RowMajor [K x P] with K = C*kh*kw and
// P = N*OH*OW, p = ((n*OH + oy)*OW + ox). Row k of the buffer is the input
// plane shifted by that tap's offset, so stride-1 taps fill by memcpy and
// one GEMM against the [OC x K] weights covers the whole batch.
template <class T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int oh, int ow, std::vector<T>& col) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const std::int64_t K = static_cast<std::int64_t>(C) * k * k;
    const std::int64_t P = static_cast<std::int64_t>(N) * oh * ow;
    col.resize(static_cast<std::size_t>(K * P));
    const T* xd = x.data();

#pragma omp parallel for schedule(static)
    for (std::int64_t kidx = 0; kidx < K; ++kidx) {
        const int kx = static_cast<int>(kidx % k);
        const int ky = static_cast<int>((kidx / k) % k);
        const int ci = static_cast<int>(kidx / (k * k));
        T* row = col.data() + kidx * P;
        for (int n = 0; n < N; ++n) {
            const T* chan = xd + (static_cast<std::int64_t>(n) * C + ci) * H * W;
            for (int oy = 0; oy < oh; ++oy) {
                T* dst = row + (static_cast<std::int64_t>(n) * oh + oy) * ow;
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) {
                    std::fill_n(dst, ow, T(0));
                    continue;
                }
                const T* src = chan + static_cast<std::int64_t>(iy) * W;
                if (stride == 1) {
                    // Contiguous shifted copy with zeroed out-of-range edges.
                    const int shift = kx - pad;  // ix = ox + shift
                    const int lo = std::max(0, -shift);
                    const int hi = std::min(ow, W - shift);
                    if (lo > 0) std::fill_n(dst, std::min(lo, ow), T(0));
                    if (hi > lo) std::copy_n(src + lo + shift, hi - lo, dst + lo);
                    if (hi < ow) std::fill_n(dst + std::max(hi, 0), ow - std::max(hi, 0), T(0));
                } else {
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const std::vector<T>& col, int k, int stride, int pad, int oh, int ow, Tensor<T>& dx) {
    const int N = dx.n(), C = dx.c(), H = dx.h(), W = dx.w();
    const std::int64_t P = static_cast<std::int64_t>(N) * oh * ow;

#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        T* sample = dx.data() + static_cast<std::int64_t>(n) * C * H * W;
        for (int ci = 0; ci < C; ++ci) {
            T* chan = sample + static_cast<std::int64_t>(ci) * H * W;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    const std::int64_t kidx = (static_cast<std::int64_t>(ci) * k + ky) * k + kx;
                    const T* row = col.data() + kidx * P;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const T* src = row + (static_cast<std::int64_t>(n) * oh + oy) * ow;
                        T* dst = chan + static_cast<std::int64_t>(iy) * W;
                        if (stride == 1) {
                            const int shift = kx - pad;
                            const int lo = std::max(0, -shift);
                            const int hi = std::min(ow, W - shift);
                            for (int ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - pad + kx;
                                if (ix >= 0 && ix < W) dst[ix] += src[ox];
                            }
                        }
                    }
                }
        }
    }
}

// NCHW <-> [C x P] row-major staging around the GEMM; both directions are
// per-(n,c) contiguous plane copies.
template <class T>
void nchw_to_stage(const Tensor<T>& t, int oh, int ow, std::vector<T>& stage) {
    const int N = t.n(), C = t.c();
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
    const std::int64_t P = static_cast<std::int64_t>(N) * plane;
    stage.resize(static_cast<std::size_t>(P * C));
#pragma omp parallel for schedule(static) collapse(2)
    for (int ci = 0; ci < C; ++ci)
        for (int n = 0; n < N; ++n)
            std::copy_n(t.data() + (static_cast<std::int64_t>(n) * C + ci) * plane, plane,
                        stage.data() + ci * P + static_cast<std::int64_t>(n) * plane);
}

template <class T>
void stage_to_nchw(const std::vector<T>& stage, const T* bias, Tensor<T>& out) {
    const int N = out.n(), C = out.c();
    const std::int64_t plane = static_cast<std::int64_t>(out.h()) * out.w();
    const std::int64_t P = static_cast<std::int64_t>(N) * plane;
#pragma omp parallel for schedule(static) collapse(2)
    for (int ci = 0; ci < C; ++ci)
        for (int n = 0; n < N; ++n) {
            const T* src = stage.data() + ci * P + static_cast<std::int64_t>(n) * plane;
            T* dst = out.data() + (static_cast<std::int64_t>(n) * C + ci) * plane;
            const T b = bias ? bias[ci] : T(0);
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
        }
}

// C[M x P] (row-major) = A[M x Kd] (row-major) * B[Kd x P] (row-major),
// tiled over P so a column block of B stays cache-resident while every
// output row reuses it. Eigen's general product handles this skinny-M,
// huge-P shape poorly; accumulation order over Kd is fixed, so results do
// not depend on the tiling or the thread count.
template <class T>
void gemm_wide(const T* a, const T* b, T* c, int m, int kd, std::int64_t p) {
    constexpr std::int64_t kChunk = 2048;
#pragma omp parallel for schedule(static)
    for (std::int64_t c0 = 0; c0 < p; c0 += kChunk) {
        const std::int64_t len = std::min(kChunk, p - c0);
        for (int i = 0; i < m; ++i) {
            T* dst = c + static_cast<std::int64_t>(i) * p + c0;
            std::fill_n(dst, len, T(0));
            const T* arow = a + static_cast<std::int64_t>(i) * kd;
            for (int k = 0; k < kd; ++k) {
                const T w = arow[k];
                const T* src = b + static_cast<std::int64_t>(k) * p + c0;
                for (std::int64_t j = 0; j < len; ++j) dst[j] += w * src[j];
            }
        }
    }
}

// C[M x Kd] += A[M x P] * B[Kd x P]^T with row-major operands and huge P:
// per-pair dot products, tiled so operand chunks stay cache-resident. The
// P range is cut into a fixed number of blocks whose partials are reduced
// in block order, so results are independent of the thread count.
template <class T>
void gemm_dot_acc(const T* a, const T* b, T* c, int m, int kd, std::int64_t p) {
    constexpr int kBlocks = 32;
    constexpr std::int64_t kChunk = 2048;
    const std::int64_t bstep = (p + kBlocks - 1) / kBlocks;
    static thread_local std::vector<double> partials;
    partials.assign(static_cast<std::size_t>(kBlocks) * m * kd, 0.0);
    double* pbase = partials.data();
#pragma omp parallel for schedule(static)
    for (int blk = 0; blk < kBlocks; ++blk) {
        const std::int64_t lo = blk * bstep;
        const std::int64_t hi = std::min<std::int64_t>(p, lo + bstep);
        if (lo >= hi) continue;
        double* acc = pbase + static_cast<std::size_t>(blk) * m * kd;
        for (std::int64_t c0 = lo; c0 < hi; c0 += kChunk) {
            const std::int64_t len = std::min<std::int64_t>(kChunk, hi - c0);
            // k outer / i inner: the m*chunk slab of A stays cache-resident
            // while each B row is touched exactly once per chunk.
            for (int k = 0; k < kd; ++k) {
                const T* brow = b + static_cast<std::int64_t>(k) * p + c0;
                for (int i = 0; i < m; ++i) {
                    const T* arow = a + static_cast<std::int64_t>(i) * p + c0;
                    // Sixteen explicit lanes: a plain reduction cannot be
                    // vectorized under strict FP semantics, fixed-order
                    // lanes can.
                    T lane[16] = {};
                    const std::int64_t vec = len - len % 16;
                    for (std::int64_t j = 0; j < vec; j += 16)
                        for (int l = 0; l < 16; ++l) lane[l] += arow[j + l] * brow[j + l];
                    T dot = T(0);
                    for (int l = 0; l < 16; ++l) dot += lane[l];
                    for (std::int64_t j = vec; j < len; ++j) dot += arow[j] * brow[j];
                    acc[static_cast<std::size_t>(i) * kd + k] += static_cast<double>(dot);
                }
            }
        }
    }
    for (int blk = 0; blk < kBlocks; ++blk) {
        const double* acc = pbase + static_cast<std::size_t>(blk) * m * kd;
        for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(m) * kd; ++idx)
            c[idx] += static_cast<T>(acc[idx]);
    }
}

}  // namespace detail

template <class T>
class Conv2d : public Layer<T> {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
        : in_c_(in_channels), out_c_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
        if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || pad < 0)
            throw ConfigError("conv2d: channels/kernel/stride must be positive");
        w_ = Tensor<T>({out_c_, in_c_, k_, k_});
        b_ = Tensor<T>({out_c_});
        gw_ = Tensor<T>({out_c_, in_c_, k_, k_});
        gb_ = Tensor<T>({out_c_});
    }

    void init(Rng& rng, double stddev) {
        for (std::int64_t i = 0; i < w_.size(); ++i) w_[i] = static_cast<T>(rng.normal(0.0, stddev));
        b_.zero();
    }

    Tensor<T> eval(const Tensor<T>& x) const override { return run(x, nullptr); }

    Tensor<T> forward(const Tensor<T>& x, bool /*training*/) override {
        x_cache_ = x;
        return run(x, &col_cache_);
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const Tensor<T>& x = x_cache_;
        const int N = x.n(), H = x.h(), W = x.w();
        const int oh = dy.h(), ow = dy.w();
        const std::int64_t K = static_cast<std::int64_t>(in_c_) * k_ * k_;
        const std::int64_t P = static_cast<std::int64_t>(N) * oh * ow;

        // Scratch buffers are reused across calls; fresh multi-megabyte
        // allocations would be returned to the OS each time and the page
        // faults dominate the actual arithmetic. The column buffer itself
        // comes cached from the forward pass.
        static thread_local std::vector<T> dy_stage, dcol;
        detail::nchw_to_stage(dy, oh, ow, dy_stage);

        detail::gemm_dot_acc(dy_stage.data(), col_cache_.data(), gw_.data(), out_c_, static_cast<int>(K), P);
        // Plain fixed-order loop: vectorized reductions round differently
        // depending on buffer alignment, which breaks bitwise reproducibility.
        for (int oc = 0; oc < out_c_; ++oc) {
            double acc = 0.0;
            const T* row = dy_stage.data() + static_cast<std::int64_t>(oc) * P;
            for (std::int64_t p = 0; p < P; ++p) acc += static_cast<double>(row[p]);
            gb_[oc] += static_cast<T>(acc);
        }

        dcol.resize(static_cast<std::size_t>(K * P));
        static thread_local std::vector<T> w_t;
        w_t.resize(static_cast<std::size_t>(K) * out_c_);
        for (std::int64_t k = 0; k < K; ++k)
            for (int oc = 0; oc < out_c_; ++oc) w_t[k * out_c_ + oc] = w_[static_cast<std::int64_t>(oc) * K + k];
        detail::gemm_wide(w_t.data(), dy_stage.data(), dcol.data(), static_cast<int>(K), out_c_, P);

        Tensor<T> dx({N, in_c_, H, W});
        detail::col2im(dcol, k_, stride_, pad_, oh, ow, dx);
        return dx;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        reg.add(prefix + ".weight", &w_, &gw_);
        reg.add(prefix + ".bias", &b_, &gb_);
    }

    Tensor<T>& weight() { return w_; }
    Tensor<T>& bias() { return b_; }

private:
    Tensor<T> run(const Tensor<T>& x, std::vector<T>* keep_col) const {
        if (x.rank() != 4 || x.c() != in_c_)
            throw ShapeError("conv2d: expected [n," + std::to_string(in_c_) + ",h,w], got " + shape_str(x.dims()));
        const int N = x.n(), H = x.h(), W = x.w();
        if (H + 2 * pad_ < k_ || W + 2 * pad_ < k_)
            throw ShapeError("conv2d: input " + shape_str(x.dims()) + " smaller than kernel");
        const int oh = (H + 2 * pad_ - k_) / stride_ + 1;
        const int ow = (W + 2 * pad_ - k_) / stride_ + 1;
        const std::int64_t K = static_cast<std::int64_t>(in_c_) * k_ * k_;
        const std::int64_t P = static_cast<std::int64_t>(N) * oh * ow;

        static thread_local std::vector<T> scratch_col, y_stage;
        std::vector<T>& col = keep_col ? *keep_col : scratch_col;
        detail::im2col(x, k_, stride_, pad_, oh, ow, col);
        y_stage.resize(static_cast<std::size_t>(P * out_c_));
        detail::gemm_wide(w_.data(), col.data(), y_stage.data(), out_c_, static_cast<int>(K), P);

        Tensor<T> out({N, out_c_, oh, ow});
        detail::stage_to_nchw(y_stage, b_.data(), out);
        return out;
    }

    int in_c_, out_c_, k_, stride_, pad_;
    Tensor<T> w_, b_, gw_, gb_;
    Tensor<T> x_cache_;
    std::vector<T> col_cache_;
};

// Batch normalization over (n,h,w) per channel. Training mode with batch
// size 1 falls back to the stored running statistics, as does eval mode.
template <class T>
class BatchNorm2d : public Layer<T> {
public:
    explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
        : c_(channels), eps_(eps), momentum_(momentum) {
        gamma_ = Tensor<T>::full({c_}, T(1));
        beta_ = Tensor<T>({c_});
        ggamma_ = Tensor<T>({c_});
        gbeta_ = Tensor<T>({c_});
        running_mean_ = Tensor<T>({c_});
        running_var_ = Tensor<T>::full({c_}, T(1));
    }

    Tensor<T> eval(const Tensor<T>& x) const override {
        check(x);
        Tensor<T> out(x.dims());
        apply_running(x, out, nullptr);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        check(x);
        Tensor<T> out(x.dims());
        xhat_ = Tensor<T>(x.dims());
        used_batch_stats_ = training && x.n() > 1;
        if (!used_batch_stats_) {
            apply_running(x, out, &xhat_);
            return out;
        }

        const int N = x.n(), H = x.h(), W = x.w();
        const std::int64_t plane = static_cast<std::int64_t>(H) * W;
        const std::int64_t m = static_cast<std::int64_t>(N) * plane;
        inv_std_.assign(static_cast<std::size_t>(c_), 0.0);
        mean_.assign(static_cast<std::size_t>(c_), 0.0);
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c_; ++ci) {
            double s = 0.0, s2 = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* src = x.data() + (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(src[i]);
                    s += v;
                    s2 += v * v;
                }
            }
            const double mu = s / static_cast<double>(m);
            const double var = std::max(0.0, s2 / static_cast<double>(m) - mu * mu);
            mean_[ci] = mu;
            inv_std_[ci] = 1.0 / std::sqrt(var + eps_);
            const T g = gamma_[ci], b = beta_[ci];
            const T muT = static_cast<T>(mu), istdT = static_cast<T>(inv_std_[ci]);
            for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                const T* src = x.data() + off;
                T* xh = xhat_.data() + off;
                T* dst = out.data() + off;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T v = (src[i] - muT) * istdT;
                    xh[i] = v;
                    dst[i] = g * v + b;
                }
            }
            const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
            running_mean_[ci] = static_cast<T>((1.0 - momentum_) * running_mean_[ci] + momentum_ * mu);
            running_var_[ci] = static_cast<T>((1.0 - momentum_) * running_var_[ci] + momentum_ * unbiased);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const int N = dy.n();
        const std::int64_t plane = static_cast<std::int64_t>(dy.h()) * dy.w();
        Tensor<T> dx(dy.dims());
        const std::int64_t m = static_cast<std::int64_t>(N) * plane;
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c_; ++ci) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                const T* d = dy.data() + off;
                const T* xh = xhat_.data() + off;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_dy += static_cast<double>(d[i]);
                    sum_dy_xhat += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
                }
            }
            ggamma_[ci] += static_cast<T>(sum_dy_xhat);
            gbeta_[ci] += static_cast<T>(sum_dy);
            const double g = static_cast<double>(gamma_[ci]);
            if (used_batch_stats_) {
                const T scale = static_cast<T>(g * inv_std_[ci] / static_cast<double>(m));
                const T mT = static_cast<T>(m), sdy = static_cast<T>(sum_dy), sdyx = static_cast<T>(sum_dy_xhat);
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                    const T* d = dy.data() + off;
                    const T* xh = xhat_.data() + off;
                    T* out = dx.data() + off;
                    for (std::int64_t i = 0; i < plane; ++i)
                        out[i] = scale * (mT * d[i] - sdy - xh[i] * sdyx);
                }
            } else {
                const T scale = static_cast<T>(g / std::sqrt(static_cast<double>(running_var_[ci]) + eps_));
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                    const T* d = dy.data() + off;
                    T* out = dx.data() + off;
                    for (std::int64_t i = 0; i < plane; ++i) out[i] = scale * d[i];
                }
            }
        }
        return dx;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        reg.add(prefix + ".gamma", &gamma_, &ggamma_);
        reg.add(prefix + ".beta", &beta_, &gbeta_);
        reg.add_statistic(prefix + ".running_mean", &running_mean_);
        reg.add_statistic(prefix + ".running_var", &running_var_);
    }

private:
    void check(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.c() != c_)
            throw ShapeError("batchnorm: expected [n," + std::to_string(c_) + ",h,w], got " + shape_str(x.dims()));
    }

    void apply_running(const Tensor<T>& x, Tensor<T>& out, Tensor<T>* xhat) const {
        const int N = x.n();
        const std::int64_t plane = static_cast<std::int64_t>(x.h()) * x.w();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c_; ++ci) {
            const T mu = running_mean_[ci];
            const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[ci]) + eps_));
            const T g = gamma_[ci], b = beta_[ci];
            for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                const T* src = x.data() + off;
                T* dst = out.data() + off;
                T* xh = xhat ? xhat->data() + off : nullptr;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T v = (src[i] - mu) * istd;
                    if (xh) xh[i] = v;
                    dst[i] = g * v + b;
                }
            }
        }
    }

    int c_;
    double eps_, momentum_;
    Tensor<T> gamma_, beta_, ggamma_, gbeta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<double> inv_std_, mean_;
    bool used_batch_stats_ = false;
};

// Instance normalization: statistics per (sample, channel) over (h,w), so
// behaviour does not depend on batch size; identical in train and eval.
template <class T>
class InstanceNorm2d : public Layer<T> {
public:
    explicit InstanceNorm2d(int channels, bool affine = true, double eps = 1e-5)
        : c_(channels), affine_(affine), eps_(eps) {
        gamma_ = Tensor<T>::full({c_}, T(1));
        beta_ = Tensor<T>({c_});
        ggamma_ = Tensor<T>({c_});
        gbeta_ = Tensor<T>({c_});
    }

    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> out(x.dims());
        normalize(x, out, nullptr, nullptr);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool /*training*/) override {
        Tensor<T> out(x.dims());
        xhat_ = Tensor<T>(x.dims());
        inv_std_.assign(static_cast<std::size_t>(x.n()) * c_, 0.0);
        normalize(x, out, &xhat_, &inv_std_);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const int N = dy.n();
        const std::int64_t plane = static_cast<std::int64_t>(dy.h()) * dy.w();
        Tensor<T> dx(dy.dims());
        std::vector<double> dg(static_cast<std::size_t>(c_), 0.0), db(static_cast<std::size_t>(c_), 0.0);
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c_; ++ci) {
            const double g = affine_ ? static_cast<double>(gamma_[ci]) : 1.0;
            for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                const T* d = dy.data() + off;
                const T* xh = xhat_.data() + off;
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_dy += static_cast<double>(d[i]);
                    sum_dy_xhat += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
                }
                dg[ci] += sum_dy_xhat;
                db[ci] += sum_dy;
                const T scale =
                    static_cast<T>(g * inv_std_[static_cast<std::size_t>(n) * c_ + ci] / static_cast<double>(plane));
                const T mT = static_cast<T>(plane), sdy = static_cast<T>(sum_dy), sdyx = static_cast<T>(sum_dy_xhat);
                T* out = dx.data() + off;
                for (std::int64_t i = 0; i < plane; ++i) out[i] = scale * (mT * d[i] - sdy - xh[i] * sdyx);
            }
        }
        if (affine_)
            for (int ci = 0; ci < c_; ++ci) {
                ggamma_[ci] += static_cast<T>(dg[ci]);
                gbeta_[ci] += static_cast<T>(db[ci]);
            }
        return dx;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        if (affine_) {
            reg.add(prefix + ".gamma", &gamma_, &ggamma_);
            reg.add(prefix + ".beta", &beta_, &gbeta_);
        }
    }

private:
    void normalize(const Tensor<T>& x, Tensor<T>& out, Tensor<T>* xhat, std::vector<double>* inv_std) const {
        if (x.rank() != 4 || x.c() != c_)
            throw ShapeError("instancenorm: expected [n," + std::to_string(c_) + ",h,w], got " +
                             shape_str(x.dims()));
        const int N = x.n();
        const std::int64_t plane = static_cast<std::int64_t>(x.h()) * x.w();
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < c_; ++ci) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * c_ + ci) * plane;
                const T* src = x.data() + off;
                double s = 0.0, s2 = 0.0;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(src[i]);
                    s += v;
                    s2 += v * v;
                }
                const double mu = s / static_cast<double>(plane);
                const double var = std::max(0.0, s2 / static_cast<double>(plane) - mu * mu);
                const double istd = 1.0 / std::sqrt(var + eps_);
                if (inv_std) (*inv_std)[static_cast<std::size_t>(n) * c_ + ci] = istd;
                const T g = affine_ ? gamma_[ci] : T(1);
                const T b = affine_ ? beta_[ci] : T(0);
                const T muT = static_cast<T>(mu), istdT = static_cast<T>(istd);
                T* dst = out.data() + off;
                T* xh = xhat ? xhat->data() + off : nullptr;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T v = (src[i] - muT) * istdT;
                    if (xh) xh[i] = v;
                    dst[i] = g * v + b;
                }
            }
    }

    int c_;
    bool affine_;
    double eps_;
    Tensor<T> gamma_, beta_, ggamma_, gbeta_;
    Tensor<T> xhat_;
    std::vector<double> inv_std_;
};

template <class T>
class ReLU : public Layer<T> {
public:
    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> out(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        mask_.assign(static_cast<std::size_t>(x.size()), 0);
        Tensor<T> out(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > T(0);
            mask_[static_cast<std::size_t>(i)] = pos;
            out[i] = pos ? x[i] : T(0);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx(dy.dims());
        for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] = mask_[static_cast<std::size_t>(i)] ? dy[i] : T(0);
        return dx;
    }

private:
    std::vector<unsigned char> mask_;
};

template <class T>
class LeakyReLU : public Layer<T> {
public:
    explicit LeakyReLU(double slope) : slope_(static_cast<T>(slope)) {
        if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky relu slope must lie in (0,1)");
    }

    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> out(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        mask_.assign(static_cast<std::size_t>(x.size()), 0);
        Tensor<T> out(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > T(0);
            mask_[static_cast<std::size_t>(i)] = pos;
            out[i] = pos ? x[i] : slope_ * x[i];
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx(dy.dims());
        for (std::int64_t i = 0; i < dy.size(); ++i)
            dx[i] = mask_[static_cast<std::size_t>(i)] ? dy[i] : slope_ * dy[i];
        return dx;
    }

private:
    T slope_;
    std::vector<unsigned char> mask_;
};

template <class T>
class Sigmoid : public Layer<T> {
public:
    Tensor<T> eval(const Tensor<T>& x) const override {
        Tensor<T> out(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        y_ = eval(x);
        return y_;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx(dy.dims());
        for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y_[i] * (T(1) - y_[i]);
        return dx;
    }

    static T sigmoid(T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
    }

private:
    Tensor<T> y_;
};

template <class T>
class UpsampleNearest2x : public Layer<T> {
public:
    Tensor<T> eval(const Tensor<T>& x) const override {
        const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
        Tensor<T> out({N, C, 2 * H, 2 * W});
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < C; ++ci) {
                const T* src_plane = x.data() + (static_cast<std::int64_t>(n) * C + ci) * H * W;
                T* dst_plane = out.data() + (static_cast<std::int64_t>(n) * C + ci) * 4 * H * W;
                for (int yy = 0; yy < H; ++yy) {
                    const T* src = src_plane + static_cast<std::int64_t>(yy) * W;
                    T* d0 = dst_plane + static_cast<std::int64_t>(2 * yy) * 2 * W;
                    for (int xx = 0; xx < W; ++xx) {
                        d0[2 * xx] = src[xx];
                        d0[2 * xx + 1] = src[xx];
                    }
                    std::copy_n(d0, 2 * W, d0 + 2 * W);
                }
            }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override { return eval(x); }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const int N = dy.n(), C = dy.c(), H = dy.h() / 2, W = dy.w() / 2;
        Tensor<T> dx({N, C, H, W});
#pragma omp parallel for schedule(static) collapse(2)
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < C; ++ci) {
                const T* src_plane = dy.data() + (static_cast<std::int64_t>(n) * C + ci) * 4 * H * W;
                T* dst_plane = dx.data() + (static_cast<std::int64_t>(n) * C + ci) * H * W;
                for (int yy = 0; yy < H; ++yy) {
                    const T* r0 = src_plane + static_cast<std::int64_t>(2 * yy) * 2 * W;
                    const T* r1 = r0 + 2 * W;
                    T* dst = dst_plane + static_cast<std::int64_t>(yy) * W;
                    for (int xx = 0; xx < W; ++xx)
                        dst[xx] = r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
                }
            }
        return dx;
    }
};

// [n,c,h,w] -> [n,c]
template <class T>
class GlobalAvgPool : public Layer<T> {
public:
    Tensor<T> eval(const Tensor<T>& x) const override {
        const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
        Tensor<T> out({N, C});
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < C; ++ci) {
                double s = 0.0;
                for (int yy = 0; yy < H; ++yy)
                    for (int xx = 0; xx < W; ++xx) s += static_cast<double>(x.at(n, ci, yy, xx));
                out.at(n, ci) = static_cast<T>(s / (static_cast<double>(H) * W));
            }
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        h_ = x.h();
        w_ = x.w();
        return eval(x);
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const int N = dy.rows(), C = dy.cols();
        Tensor<T> dx({N, C, h_, w_});
        const T inv = T(1) / static_cast<T>(h_ * w_);
        for (int n = 0; n < N; ++n)
            for (int ci = 0; ci < C; ++ci) {
                const T g = dy.at(n, ci) * inv;
                for (int yy = 0; yy < h_; ++yy)
                    for (int xx = 0; xx < w_; ++xx) dx.at(n, ci, yy, xx) = g;
            }
        return dx;
    }

private:
    int h_ = 0, w_ = 0;
};

template <class T>
class Linear : public Layer<T> {
public:
    Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {
        w_ = Tensor<T>({out_, in_});
        b_ = Tensor<T>({out_});
        gw_ = Tensor<T>({out_, in_});
        gb_ = Tensor<T>({out_});
    }

    void init(Rng& rng, double stddev) {
        for (std::int64_t i = 0; i < w_.size(); ++i) w_[i] = static_cast<T>(rng.normal(0.0, stddev));
        b_.zero();
    }

    Tensor<T> eval(const Tensor<T>& x) const override {
        if (x.rank() != 2 || x.cols() != in_)
            throw ShapeError("linear: expected [n," + std::to_string(in_) + "], got " + shape_str(x.dims()));
        const int N = x.rows();
        Tensor<T> out({N, out_});
        Eigen::Map<const MatRM<T>> xM(x.data(), N, in_);
        Eigen::Map<const MatRM<T>> wM(w_.data(), out_, in_);
        Eigen::Map<MatRM<T>> oM(out.data(), N, out_);
        oM.noalias() = xM * wM.transpose();
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out_; ++o) out.at(n, o) += b_[o];
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        x_cache_ = x;
        return eval(x);
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const int N = dy.rows();
        Eigen::Map<const MatRM<T>> dyM(dy.data(), N, out_);
        Eigen::Map<const MatRM<T>> xM(x_cache_.data(), N, in_);
        Eigen::Map<MatRM<T>> gwM(gw_.data(), out_, in_);
        gwM.noalias() += dyM.transpose() * xM;
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out_; ++o) gb_[o] += dy.at(n, o);
        Tensor<T> dx({N, in_});
        Eigen::Map<MatRM<T>> dxM(dx.data(), N, in_);
        Eigen::Map<const MatRM<T>> wM(w_.data(), out_, in_);
        dxM.noalias() = dyM * wM;
        return dx;
    }

    void register_params(const std::string& prefix, ParamRegistry<T>& reg) override {
        reg.add(prefix + ".weight", &w_, &gw_);
        reg.add(prefix + ".bias", &b_, &gb_);
    }

private:
    int in_, out_;
    Tensor<T> w_, b_, gw_, gb_;
    Tensor<T> x_cache_;
};

// Reflection padding (edge not repeated), used to bring arbitrary input
// sizes up to the generator's stride multiple. pad <= dim-1 is required.
template <class T>
Tensor<T> reflect_pad(const Tensor<T>& x, int pad_bottom, int pad_right) {
    if (pad_bottom == 0 && pad_right == 0) return x;
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    if (pad_bottom > H - 1 || pad_right > W - 1)
        throw ShapeError("reflect_pad: padding exceeds input size");
    Tensor<T> out({N, C, H + pad_bottom, W + pad_right});
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < C; ++ci)
            for (int yy = 0; yy < H + pad_bottom; ++yy) {
                const int iy = yy < H ? yy : 2 * H - 2 - yy;
                for (int xx = 0; xx < W + pad_right; ++xx) {
                    const int ix = xx < W ? xx : 2 * W - 2 - xx;
                    out.at(n, ci, yy, xx) = x.at(n, ci, iy, ix);
                }
            }
    return out;
}

template <class T>
Tensor<T> reflect_pad_backward(const Tensor<T>& dy, int orig_h, int orig_w) {
    const int N = dy.n(), C = dy.c(), PH = dy.h(), PW = dy.w();
    Tensor<T> dx({N, C, orig_h, orig_w});
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < C; ++ci)
            for (int yy = 0; yy < PH; ++yy) {
                const int iy = yy < orig_h ? yy : 2 * orig_h - 2 - yy;
                for (int xx = 0; xx < PW; ++xx) {
                    const int ix = xx < orig_w ? xx : 2 * orig_w - 2 - xx;
                    dx.at(n, ci, iy, ix) += dy.at(n, ci, yy, xx);
                }
            }
    return dx;
}

// Softmax cross-entropy over logits [n,k]; returns mean loss and fills
// dlogits with the gradient of the mean.
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                             std::type_identity_t<Tensor<T>>* dlogits) {
    const int N = logits.rows(), K = logits.cols();
    if (static_cast<int>(labels.size()) != N) throw ShapeError("cross entropy: labels/logits mismatch");
    if (dlogits) *dlogits = Tensor<T>({N, K});
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at(n, k)));
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(logits.at(n, k)) - mx);
        const int lbl = labels[static_cast<std::size_t>(n)];
        if (lbl < 0 || lbl >= K) throw DomainError("cross entropy: label out of range");
        loss -= (static_cast<double>(logits.at(n, lbl)) - mx - std::log(z));
        if (dlogits)
            for (int k = 0; k < K; ++k) {
                const double p = std::exp(static_cast<double>(logits.at(n, k)) - mx) / z;
                dlogits->at(n, k) = static_cast<T>((p - (k == lbl ? 1.0 : 0.0)) / static_cast<double>(N));
            }
    }
    return loss / static_cast<double>(N);
}

}  // namespace advret::nn
