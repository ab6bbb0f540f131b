#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/tensor.hpp"
#include "advret/target/target_model.hpp"

namespace advret {

// Weighted combination of the generator's objectives plus the triplet margin.
struct LossWeights {
    double lambda_r = 4.0;
    double lambda_m = 0.03;
    double margin = 1.0;

    static LossWeights retrieval() { return {4.0, 0.03, 1.0}; }
    static LossWeights reid() { return {8.0, 0.05, 1.0}; }
    static LossWeights face() { return {2.0, 0.01, 1.0}; }

    void validate() const {
        if (lambda_r < 0.0 || lambda_m < 0.0) throw ConfigError("loss weights must be nonnegative");
        if (!(margin > 0.0)) throw ConfigError("metric-loss margin must be positive");
    }
};

struct LossRecord {
    double gan_g = 0.0;
    double gan_d = 0.0;
    double recon = 0.0;
    double metric = 0.0;
    double total_g = 0.0;
    double total_d = 0.0;

    bool all_finite() const {
        return std::isfinite(gan_g) && std::isfinite(gan_d) && std::isfinite(recon) && std::isfinite(metric) &&
               std::isfinite(total_g) && std::isfinite(total_d);
    }
};

// Per-image RMSE, averaged over the batch. An unnormalized L2 option exists
// for comparison, but weights are calibrated against the RMSE form.
enum class ReconNorm { RMSE, RawL2 };

template <class T>
double recon_loss(const Tensor<T>& x_adv, const Tensor<T>& x, ReconNorm norm = ReconNorm::RMSE) {
    x_adv.require_same_shape(x);
    const int N = x.n();
    const std::int64_t per = x.size() / N;
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const std::int64_t base = static_cast<std::int64_t>(n) * per;
        for (std::int64_t i = 0; i < per; ++i) {
            const double d = static_cast<double>(x_adv[base + i]) - static_cast<double>(x[base + i]);
            acc += d * d;
        }
        total += norm == ReconNorm::RMSE ? std::sqrt(acc / static_cast<double>(per)) : std::sqrt(acc);
    }
    return total / static_cast<double>(N);
}

template <class T>
Tensor<T> recon_loss_backward(const Tensor<T>& x_adv, const Tensor<T>& x, ReconNorm norm = ReconNorm::RMSE) {
    const int N = x.n();
    const std::int64_t per = x.size() / N;
    Tensor<T> d(x.dims());
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const std::int64_t base = static_cast<std::int64_t>(n) * per;
        for (std::int64_t i = 0; i < per; ++i) {
            const double r = static_cast<double>(x_adv[base + i]) - static_cast<double>(x[base + i]);
            acc += r * r;
        }
        const double rmse = std::sqrt(acc / static_cast<double>(per));
        const double l2 = std::sqrt(acc);
        const double denom = norm == ReconNorm::RMSE ? rmse * static_cast<double>(per) : l2;
        if (denom <= 0.0) continue;  // subgradient 0 at the kink
        for (std::int64_t i = 0; i < per; ++i) {
            const double r = static_cast<double>(x_adv[base + i]) - static_cast<double>(x[base + i]);
            d[base + i] = static_cast<T>(r / denom / static_cast<double>(N));
        }
    }
    return d;
}

// Least-squares GAN losses over scores in (0,1).

template <class T>
double gan_loss_d(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
    if (real_scores.size() == 0 || fake_scores.size() == 0) throw DomainError("gan_loss_d: empty score batch");
    double lr = 0.0, lf = 0.0;
    for (std::int64_t i = 0; i < real_scores.size(); ++i) {
        const double s = static_cast<double>(real_scores[i]);
        lr += (s - 1.0) * (s - 1.0);
    }
    for (std::int64_t i = 0; i < fake_scores.size(); ++i) {
        const double s = static_cast<double>(fake_scores[i]);
        lf += s * s;
    }
    return lr / static_cast<double>(real_scores.size()) + lf / static_cast<double>(fake_scores.size());
}

template <class T>
void gan_loss_d_backward(const Tensor<T>& real_scores, const Tensor<T>& fake_scores, Tensor<T>& dreal,
                         Tensor<T>& dfake) {
    dreal = Tensor<T>(real_scores.dims());
    dfake = Tensor<T>(fake_scores.dims());
    for (std::int64_t i = 0; i < real_scores.size(); ++i)
        dreal[i] = static_cast<T>(2.0 * (static_cast<double>(real_scores[i]) - 1.0) /
                                  static_cast<double>(real_scores.size()));
    for (std::int64_t i = 0; i < fake_scores.size(); ++i)
        dfake[i] = static_cast<T>(2.0 * static_cast<double>(fake_scores[i]) / static_cast<double>(fake_scores.size()));
}

template <class T>
double gan_loss_g(const Tensor<T>& fake_scores) {
    if (fake_scores.size() == 0) throw DomainError("gan_loss_g: empty score batch");
    double l = 0.0;
    for (std::int64_t i = 0; i < fake_scores.size(); ++i) {
        const double s = static_cast<double>(fake_scores[i]);
        l += (s - 1.0) * (s - 1.0);
    }
    return l / static_cast<double>(fake_scores.size());
}

template <class T>
Tensor<T> gan_loss_g_backward(const Tensor<T>& fake_scores) {
    Tensor<T> d(fake_scores.dims());
    for (std::int64_t i = 0; i < fake_scores.size(); ++i)
        d[i] = static_cast<T>(2.0 * (static_cast<double>(fake_scores[i]) - 1.0) /
                              static_cast<double>(fake_scores.size()));
    return d;
}

// Triplet hinge pushing the adversarial embedding farther from the anchor
// than the hardest real negative, by at least the margin:
// mean_i max(d(f_x, f_neg) + m - d(f_x, f_adv), 0).
template <class T>
double metric_loss(const Tensor<T>& f_x, const Tensor<T>& f_neg, const Tensor<T>& f_adv, double margin,
                   Metric metric) {
    f_x.require_same_shape(f_neg);
    f_x.require_same_shape(f_adv);
    if (!(margin > 0.0)) throw ConfigError("metric_loss: margin must be positive");
    const int N = f_x.rows(), D = f_x.cols();
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const double d_neg = distance(f_x.data() + static_cast<std::int64_t>(n) * D,
                                      f_neg.data() + static_cast<std::int64_t>(n) * D, D, metric);
        const double d_adv = distance(f_x.data() + static_cast<std::int64_t>(n) * D,
                                      f_adv.data() + static_cast<std::int64_t>(n) * D, D, metric);
        total += std::max(d_neg + margin - d_adv, 0.0);
    }
    return total / static_cast<double>(N);
}

template <class T>
void metric_loss_backward(const Tensor<T>& f_x, const Tensor<T>& f_neg, const Tensor<T>& f_adv, double margin,
                          Metric metric, Tensor<T>* df_x, Tensor<T>* df_neg, Tensor<T>* df_adv) {
    const int N = f_x.rows(), D = f_x.cols();
    if (df_x) *df_x = Tensor<T>(f_x.dims());
    if (df_neg) *df_neg = Tensor<T>(f_neg.dims());
    if (df_adv) *df_adv = Tensor<T>(f_adv.dims());
    const double inv_n = 1.0 / static_cast<double>(N);
    for (int n = 0; n < N; ++n) {
        const std::int64_t off = static_cast<std::int64_t>(n) * D;
        const double d_neg = distance(f_x.data() + off, f_neg.data() + off, D, metric);
        const double d_adv = distance(f_x.data() + off, f_adv.data() + off, D, metric);
        if (d_neg + margin - d_adv <= 0.0) continue;  // hinge inactive
        // + d(f_x, f_neg) term
        distance_backward(f_x.data() + off, f_neg.data() + off, D, metric, inv_n,
                          df_x ? df_x->data() + off : nullptr, df_neg ? df_neg->data() + off : nullptr);
        // - d(f_x, f_adv) term
        distance_backward(f_x.data() + off, f_adv.data() + off, D, metric, -inv_n,
                          df_x ? df_x->data() + off : nullptr, df_adv ? df_adv->data() + off : nullptr);
    }
}

inline double generator_total_loss(double gan_g, double recon, double metric, const LossWeights& w) {
    return gan_g + w.lambda_r * recon + w.lambda_m * metric;
}

}  // namespace advret
