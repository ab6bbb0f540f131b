#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "advret/attack/perturbation.hpp"
#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/nn/discriminator.hpp"
#include "advret/nn/generator.hpp"
#include "advret/objectives.hpp"
#include "advret/target/target_model.hpp"
#include "advret/train/adam.hpp"
#include "advret/train/checkpoint.hpp"

namespace advret {

struct TrainConfig {
    int epochs = 500;
    int batch_size = 32;
    double lr_g = 0.001;
    double lr_d = 0.004;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Epochs (1-based) at whose start the rates shrink by the factor.
    // Empty means the 150/200-out-of-500 schedule scaled to `epochs`.
    std::vector<int> decay_epochs;
    double decay_factor = 0.9;
    double epsilon = 0.1;
    LossWeights weights = LossWeights::retrieval();
    std::uint64_t seed = 7;
    bool ablate_discriminator = false;
    int checkpoint_every = 0;  // epochs between snapshots; 0 = final only
    ClipGradMode clip_grad = ClipGradMode::ZeroOutsideBand;
    ReconNorm recon_norm = ReconNorm::RMSE;

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (hard-negative mining needs a peer)");
        if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw ConfigError("train: learning rates must be positive");
        if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train: decay factor must be in (0,1]");
        if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
        for (int e : decay_epochs)
            if (e < 1 || e >= epochs)
                throw ConfigError("train: decay epoch " + std::to_string(e) + " outside (0, epochs)");
        if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
        weights.validate();
    }

    std::vector<int> resolved_decay_epochs() const {
        if (!decay_epochs.empty()) return decay_epochs;
        std::vector<int> out;
        for (int base : {150, 200}) {
            const int e = static_cast<int>(static_cast<std::int64_t>(base) * epochs / 500);
            if (e >= 1 && e < epochs) out.push_back(e);
        }
        return out;
    }
};

inline double lr_at_epoch(double base, int epoch_1based, const std::vector<int>& decay_epochs, double factor) {
    double lr = base;
    for (int d : decay_epochs)
        if (epoch_1based >= d) lr *= factor;
    return lr;
}

// For each row, the index of the in-batch sample farthest from it under the
// metric; ties resolved to the smallest index.
template <class T>
std::vector<int> mine_hard_negatives(const Tensor<T>& features, Metric metric) {
    const int N = features.rows(), D = features.cols();
    if (N < 2) throw ConfigError("hard-negative mining needs a batch of at least 2");
    std::vector<int> out(static_cast<std::size_t>(N), -1);
    for (int i = 0; i < N; ++i) {
        double best = -1.0;
        int arg = -1;
        for (int j = 0; j < N; ++j) {
            if (j == i) continue;
            const double d = distance(features.data() + static_cast<std::int64_t>(i) * D,
                                      features.data() + static_cast<std::int64_t>(j) * D, D, metric);
            if (d > best) {
                best = d;
                arg = j;
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

struct HistoryRow {
    std::int64_t step = 0;
    int epoch = 0;
    LossRecord losses;
    double lr_g = 0.0;
    double lr_d = 0.0;
};

inline void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write history file: " + path.string());
    out << "step\tepoch\tgan_g\tgan_d\trecon\tmetric\ttotal_g\tlr_g\tlr_d\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld\t%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                      static_cast<long long>(r.step), r.epoch, r.losses.gan_g, r.losses.gan_d, r.losses.recon,
                      r.losses.metric, r.losses.total_g, r.lr_g, r.lr_d);
        out << buf;
    }
}

// Alternating min-max training: one discriminator update then one generator
// update per batch. In ablated ("generator-only") mode the discriminator is
// never touched and the adversarial term vanishes from the generator loss.
template <class T>
class AttackTrainer {
public:
    AttackTrainer(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec, const TrainConfig& cfg)
        : cfg_(cfg),
          gen_(gspec),
          disc_(dspec),
          rng_(Rng::stream(cfg.seed, 0xba7c)) {
        cfg_.validate();
        if (gspec.epsilon != cfg.epsilon)
            throw ConfigError("train: generator epsilon and train epsilon disagree");
        gen_.init_params(Rng::stream(cfg.seed, 0x9e0).next_u64());
        disc_.init_params(Rng::stream(cfg.seed, 0xd15c).next_u64());
        adam_g_.beta1 = adam_d_.beta1 = cfg.adam_beta1;
        adam_g_.beta2 = adam_d_.beta2 = cfg.adam_beta2;
        adam_g_.eps = adam_d_.eps = cfg.adam_eps;
        lr_g_ = cfg.lr_g;
        lr_d_ = cfg.lr_d;
    }

    LossRecord train_step(const Tensor<T>& x, TargetModel<T>& target) {
        const LossWeights& w = cfg_.weights;

        // Perturb with the current generator. The same adversarial batch
        // feeds the discriminator update and, afterwards, the generator
        // update (whose scores are recomputed with the updated critic).
        gen_.params().zero_grads();
        Tensor<T> raw = gen_.forward(x, /*training=*/true);
        ClipCache clip_cache, comp_cache;
        Tensor<T> delta = clip_perturbation(raw, cfg_.epsilon, &clip_cache);
        Tensor<T> x_adv = compose_adversarial(x, delta, &comp_cache);

        LossRecord rec;
        if (!cfg_.ablate_discriminator) {
            // Step 1: discriminator on real then adversarial images, with the
            // generator fixed. The least-squares loss separates, so each half
            // is back-propagated right after its forward pass.
            disc_.params().zero_grads();
            Tensor<T> real_scores = disc_.forward(x, true);
            Tensor<T> dreal(real_scores.dims());
            for (std::int64_t i = 0; i < real_scores.size(); ++i)
                dreal[i] = static_cast<T>(2.0 * (static_cast<double>(real_scores[i]) - 1.0) /
                                          static_cast<double>(real_scores.size()));
            disc_.backward(dreal);
            Tensor<T> fake_scores = disc_.forward(x_adv, true);
            Tensor<T> dfake(fake_scores.dims());
            for (std::int64_t i = 0; i < fake_scores.size(); ++i)
                dfake[i] = static_cast<T>(2.0 * static_cast<double>(fake_scores[i]) /
                                          static_cast<double>(fake_scores.size()));
            disc_.backward(dfake);
            rec.gan_d = gan_loss_d(real_scores, fake_scores);
            adam_d_.step(disc_.params(), lr_d_);
        }

        // Step 2: generator update against the (possibly updated) critic,
        // the frozen target and the reconstruction penalty.
        Tensor<T> d_xadv(x_adv.dims());
        if (!cfg_.ablate_discriminator) {
            Tensor<T> fake2 = disc_.forward(x_adv, true);
            rec.gan_g = gan_loss_g(fake2);
            Tensor<T> dscores = gan_loss_g_backward(fake2);
            d_xadv += disc_.backward(dscores);  // critic grads are discarded; zeroed next step
        }

        rec.recon = recon_loss(x_adv, x, cfg_.recon_norm);
        {
            Tensor<T> drecon = recon_loss_backward(x_adv, x, cfg_.recon_norm);
            drecon *= static_cast<T>(w.lambda_r);
            d_xadv += drecon;
        }

        target.mutable_params_for_restore().zero_grads();
        Tensor<T> f_x = target.embed(x);
        const std::vector<int> neg_idx = mine_hard_negatives(f_x, target.metric());
        Tensor<T> f_neg({f_x.rows(), f_x.cols()});
        for (int i = 0; i < f_x.rows(); ++i)
            std::copy_n(f_x.data() + static_cast<std::int64_t>(neg_idx[static_cast<std::size_t>(i)]) * f_x.cols(),
                        f_x.cols(), f_neg.data() + static_cast<std::int64_t>(i) * f_x.cols());
        Tensor<T> f_adv = target.embed_forward(x_adv);
        rec.metric = metric_loss(f_x, f_neg, f_adv, w.margin, target.metric());
        {
            Tensor<T> df_adv;
            metric_loss_backward<T>(f_x, f_neg, f_adv, w.margin, target.metric(), nullptr, nullptr, &df_adv);
            df_adv *= static_cast<T>(w.lambda_m);
            d_xadv += target.embed_backward(df_adv);
        }

        Tensor<T> d_delta = compose_adversarial_backward(d_xadv, comp_cache);
        Tensor<T> d_raw = clip_perturbation_backward(d_delta, clip_cache, cfg_.clip_grad);
        gen_.backward(d_raw);
        adam_g_.step(gen_.params(), lr_g_);

        rec.total_g = generator_total_loss(rec.gan_g, rec.recon, rec.metric, w);
        rec.total_d = rec.gan_d;
        if (!rec.all_finite())
            throw TrainingError("non-finite loss at step " + std::to_string(step_ + 1) + " (gan_g=" +
                                std::to_string(rec.gan_g) + ", gan_d=" + std::to_string(rec.gan_d) + ", recon=" +
                                std::to_string(rec.recon) + ", metric=" + std::to_string(rec.metric) + ")");
        ++step_;
        return rec;
    }

    using EpochCallback = std::function<void(int /*epoch*/, const AttackTrainer&)>;

    // Runs the remaining epochs (supports resumed states). Incomplete final
    // batches are dropped; per-step rows accumulate into the history.
    void train(const Tensor<T>& images, TargetModel<T>& target, const EpochCallback& on_epoch = {}) {
        cfg_.validate();
        if (images.rank() != 4 || images.n() == 0) throw ConfigError("train: empty training set");
        if (cfg_.epochs == 0) return;
        if (images.n() < cfg_.batch_size)
            throw ConfigError("train: dataset smaller than one batch (" + std::to_string(images.n()) + " < " +
                              std::to_string(cfg_.batch_size) + ")");
        const std::vector<int> decay = cfg_.resolved_decay_epochs();
        const int N = images.n();
        std::vector<int> order(static_cast<std::size_t>(N));
        Tensor<T> batch({cfg_.batch_size, images.c(), images.h(), images.w()});
        const std::int64_t per = static_cast<std::int64_t>(images.c()) * images.h() * images.w();

        while (epoch_ < cfg_.epochs) {
            const int epoch = epoch_ + 1;  // 1-based
            lr_g_ = lr_at_epoch(cfg_.lr_g, epoch, decay, cfg_.decay_factor);
            lr_d_ = lr_at_epoch(cfg_.lr_d, epoch, decay, cfg_.decay_factor);
            std::iota(order.begin(), order.end(), 0);
            rng_.shuffle(order);
            for (int lo = 0; lo + cfg_.batch_size <= N; lo += cfg_.batch_size) {
                for (int i = 0; i < cfg_.batch_size; ++i)
                    std::copy_n(images.data() + static_cast<std::int64_t>(order[static_cast<std::size_t>(lo + i)]) * per,
                                per, batch.data() + static_cast<std::int64_t>(i) * per);
                const LossRecord rec = train_step(batch, target);
                history_.push_back({step_, epoch, rec, lr_g_, lr_d_});
            }
            ++epoch_;
            if (on_epoch) on_epoch(epoch, *this);
        }
    }

    // --- checkpointing ---

    Archive to_archive() const {
        Archive a;
        a.meta["kind"] = "attack_train_state";
        a.meta["ablate_discriminator"] = cfg_.ablate_discriminator;
        a.meta["epsilon"] = cfg_.epsilon;
        a.meta["epoch"] = epoch_;
        a.meta["generator"] = generator_spec_json(gen_.spec());
        archive_registry(a, gen_.params(), "g.");
        archive_registry(a, disc_.params(), "d.");
        append_adam(a, "adam_g.", adam_g_, gen_.params());
        append_adam(a, "adam_d.", adam_d_, disc_.params());
        const auto st = rng_.state();
        a.add_scalars<std::uint64_t>("rng.state", {st[0], st[1], st[2], st[3]});
        a.add_scalars<std::int64_t>("counters", {step_, epoch_, adam_g_.step_count(), adam_d_.step_count()});
        std::vector<double> hist;
        hist.reserve(history_.size() * 9);
        for (const auto& r : history_) {
            hist.push_back(static_cast<double>(r.step));
            hist.push_back(static_cast<double>(r.epoch));
            hist.push_back(r.losses.gan_g);
            hist.push_back(r.losses.gan_d);
            hist.push_back(r.losses.recon);
            hist.push_back(r.losses.metric);
            hist.push_back(r.losses.total_g);
            hist.push_back(r.lr_g);
            hist.push_back(r.lr_d);
        }
        a.add_raw("history", ArchiveDType::F64, {static_cast<std::int64_t>(history_.size()), 9}, hist.data(),
                  hist.size() * sizeof(double));
        return a;
    }

    void save(const std::filesystem::path& path) const { to_archive().save(path); }

    void restore(const Archive& a) {
        if (a.meta.value("kind", "") != "attack_train_state")
            throw CheckpointError("archive is not an attack training state");
        restore_registry(a, gen_.params(), "g.");
        restore_registry(a, disc_.params(), "d.");
        adam_g_.ensure(gen_.params());
        adam_d_.ensure(disc_.params());
        restore_adam(a, "adam_g.", adam_g_, gen_.params());
        restore_adam(a, "adam_d.", adam_d_, disc_.params());
        const auto st = a.scalars<std::uint64_t>("rng.state");
        if (st.size() != 4) throw CheckpointError("corrupt rng state in checkpoint");
        rng_.set_state({st[0], st[1], st[2], st[3]});
        const auto counters = a.scalars<std::int64_t>("counters");
        if (counters.size() != 4) throw CheckpointError("corrupt counters in checkpoint");
        step_ = counters[0];
        epoch_ = static_cast<int>(counters[1]);
        adam_g_.set_step_count(counters[2]);
        adam_d_.set_step_count(counters[3]);
        const auto hist = a.tensor<double>("history");
        history_.clear();
        for (int r = 0; r < hist.rows(); ++r)
            history_.push_back({static_cast<std::int64_t>(hist.at(r, 0)),
                                static_cast<int>(hist.at(r, 1)),
                                {hist.at(r, 2), hist.at(r, 3), hist.at(r, 4), hist.at(r, 5), hist.at(r, 6),
                                 hist.at(r, 3)},
                                hist.at(r, 7),
                                hist.at(r, 8)});
    }

    // Generator-only archive for evaluation and transfer runs.
    Archive generator_archive() const {
        Archive a;
        a.meta["kind"] = "generator";
        a.meta["generator"] = generator_spec_json(gen_.spec());
        archive_registry(a, gen_.params(), "g.");
        return a;
    }

    static nlohmann::json generator_spec_json(const GeneratorSpec& s) {
        nlohmann::json j;
        j["input_channels"] = s.input_channels;
        j["down_blocks"] = s.down_blocks;
        j["residual_blocks"] = s.residual_blocks;
        j["residual_channels"] = s.residual_channels;
        j["up_blocks"] = s.up_blocks;
        j["kernel_size"] = s.kernel_size;
        j["epsilon"] = s.epsilon;
        j["instance_affine"] = s.instance_affine;
        return j;
    }

    static GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
        GeneratorSpec s;
        s.input_channels = j.at("input_channels").get<int>();
        s.down_blocks = j.at("down_blocks").get<std::vector<std::pair<int, int>>>();
        s.residual_blocks = j.at("residual_blocks").get<int>();
        s.residual_channels = j.at("residual_channels").get<int>();
        s.up_blocks = j.at("up_blocks").get<std::vector<int>>();
        s.kernel_size = j.at("kernel_size").get<int>();
        s.epsilon = j.at("epsilon").get<double>();
        s.instance_affine = j.at("instance_affine").get<bool>();
        return s;
    }

    Generator<T>& generator() { return gen_; }
    const Generator<T>& generator() const { return gen_; }
    Discriminator<T>& discriminator() { return disc_; }
    const Discriminator<T>& discriminator() const { return disc_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<HistoryRow>& history() const { return history_; }
    int epoch() const { return epoch_; }
    std::int64_t step() const { return step_; }
    double current_lr_g() const { return lr_g_; }
    double current_lr_d() const { return lr_d_; }

private:
    static void append_adam(Archive& a, const std::string& prefix, const Adam<T>& opt,
                            const nn::ParamRegistry<T>& reg) {
        auto& m = const_cast<Adam<T>&>(opt).first_moments();
        auto& v = const_cast<Adam<T>&>(opt).second_moments();
        if (m.empty()) const_cast<Adam<T>&>(opt).ensure(reg);
        std::size_t slot = 0;
        for (const auto& e : reg.entries()) {
            if (!e.trainable) continue;
            a.add_tensor(prefix + "m." + e.name, m[slot]);
            a.add_tensor(prefix + "v." + e.name, v[slot]);
            ++slot;
        }
    }

    static void restore_adam(const Archive& a, const std::string& prefix, Adam<T>& opt,
                             const nn::ParamRegistry<T>& reg) {
        std::size_t slot = 0;
        for (const auto& e : reg.entries()) {
            if (!e.trainable) continue;
            opt.first_moments()[slot] = a.tensor<T>(prefix + "m." + e.name);
            opt.second_moments()[slot] = a.tensor<T>(prefix + "v." + e.name);
            ++slot;
        }
    }

    TrainConfig cfg_;
    Generator<T> gen_;
    Discriminator<T> disc_;
    Adam<T> adam_g_, adam_d_;
    Rng rng_;
    std::int64_t step_ = 0;
    int epoch_ = 0;
    double lr_g_ = 0.0, lr_d_ = 0.0;
    std::vector<HistoryRow> history_;
};

// Standalone generator loading for evaluation/transfer.
template <class T>
Generator<T> load_generator(const Archive& a) {
    const std::string kind = a.meta.value("kind", "");
    if (kind != "generator" && kind != "attack_train_state")
        throw CheckpointError("archive does not contain a generator");
    GeneratorSpec spec = AttackTrainer<T>::generator_spec_from_json(a.meta.at("generator"));
    Generator<T> g(spec);
    restore_registry(a, g.params(), "g.");
    return g;
}

}  // namespace advret
