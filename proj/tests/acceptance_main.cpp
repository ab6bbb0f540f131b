// Acceptance suite: runs every acceptance criterion in order, prints one
// pass/fail line per criterion and exits nonzero if any fail. Criteria 5-7
// share one desk-scale pipeline (toy dataset, frozen toy targets, attack
// trainings) so the whole suite stays within a desktop-CPU budget.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "advret/advret.hpp"

using namespace advret;
using Real = float;

namespace {

int g_failures = 0;

struct Criterion {
    explicit Criterion(int id, std::string title) : id_(id), title_(std::move(title)) {
        start_ = std::chrono::steady_clock::now();
    }
    void check(bool ok, const std::string& detail) {
        if (!ok) {
            failed_ = true;
            details_ += (details_.empty() ? "" : "; ") + detail;
        }
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
    ~Criterion() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::printf("[%s] criterion %d: %s (%.1fs)%s%s%s%s\n", failed_ ? "FAIL" : "PASS", id_, title_.c_str(), secs,
                    notes_.empty() ? "" : " -- ", notes_.c_str(), details_.empty() ? "" : " !! ", details_.c_str());
        std::fflush(stdout);
        if (failed_) ++g_failures;
    }
    int id_;
    std::string title_, details_, notes_;
    bool failed_ = false;
    std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------- 1 ----

void criterion1_clip_invariants() {
    Criterion c(1, "1000 randomized generator outputs satisfy the clip contracts exactly");
    const double eps = 0.1;
    Rng rng(101);
    int produced = 0;
    double max_linf = 0.0;
    while (produced < 1000) {
        // Vary the parameter scale so raw outputs regularly exceed the band.
        GeneratorSpec spec;
        Generator<Real> gen(spec);
        gen.init_params(rng.next_u64(), rng.uniform(0.01, 0.3));
        const int batch = 20;
        const int side = 16 + 4 * static_cast<int>(rng.bounded(5));
        Tensor<Real> x = Tensor<Real>::rand_uniform({batch, 3, side, side}, rng);
        Tensor<Real> delta = clip_perturbation(gen.eval(x), eps);
        Tensor<Real> adv = compose_adversarial(x, delta);
        max_linf = std::max(max_linf, static_cast<double>(delta.abs_max()));
        c.check(delta.abs_max() <= static_cast<Real>(eps), "|delta|_inf exceeded epsilon");
        c.check(adv.min_value() >= Real(0) && adv.max_value() <= Real(1), "adversarial image left [0,1]");
        produced += batch;
    }
    c.note("outputs=" + std::to_string(produced) + " max|delta|=" + fmt(max_linf));
}

// ---------------------------------------------------------------- 2 ----

bool grad_matches(double analytic, double fd, double tol = 1e-4) {
    if (std::abs(analytic) < 1e-7 && std::abs(fd) < 1e-7) return true;
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8}) <= tol;
}

template <class F>
double fd_at(Tensor<double>& t, std::int64_t i, F&& f, double h = 1e-5) {
    const double orig = t[i];
    t[i] = orig + h;
    const double fp = f();
    t[i] = orig - h;
    const double fm = f();
    t[i] = orig;
    return (fp - fm) / (2.0 * h);
}

void criterion2_analytic_losses_and_gradients() {
    Criterion c(2, "analytic loss examples to 1e-6 and gradient checks to 1e-4 relative");

    // Worked loss examples.
    {
        Tensor<double> x({1, 1, 1, 2}, {0.2, 0.4});
        Tensor<double> residual({1, 1, 1, 2}, {0.5, 0.8});
        c.check(std::abs(recon_loss(x, x) - 0.0) < 1e-6, "recon identity");
        c.check(std::abs(recon_loss(residual, x) - 0.35355339) < 1e-6, "recon 0.3536 example");
        Tensor<double> shifted({1, 1, 1, 2}, {0.3, 0.5});
        c.check(std::abs(recon_loss(shifted, x) - 0.1) < 1e-6, "recon constant residual");

        Tensor<double> ones({2}, {1.0, 1.0}), zeros({2}, {0.0, 0.0}), half({1}, {0.5});
        c.check(std::abs(gan_loss_d(ones, zeros)) < 1e-6, "gan_d perfect");
        c.check(std::abs(gan_loss_d(half, half) - 0.5) < 1e-6, "gan_d midpoint");
        c.check(std::abs(gan_loss_d(zeros, ones) - 2.0) < 1e-6, "gan_d inverted");
        c.check(std::abs(gan_loss_g(ones)) < 1e-6, "gan_g fooled");
        c.check(std::abs(gan_loss_g(half) - 0.25) < 1e-6, "gan_g midpoint");
        c.check(std::abs(gan_loss_g(zeros) - 1.0) < 1e-6, "gan_g detected");

        Tensor<double> f_x({1, 1}, {0.0}), f_neg({1, 1}, {0.3});
        Tensor<double> far({1, 1}, {1.5}), near({1, 1}, {0.8});
        c.check(std::abs(metric_loss(f_x, f_neg, far, 1.0, Metric::Euclidean)) < 1e-6, "metric inactive hinge");
        c.check(std::abs(metric_loss(f_x, f_neg, near, 1.0, Metric::Euclidean) - 0.5) < 1e-6, "metric hinge 0.5");
        c.check(std::abs(metric_loss(f_x, f_neg, f_x, 1.0, Metric::Euclidean) - 1.3) < 1e-6, "metric max violation");

        const LossWeights w = LossWeights::retrieval();
        c.check(std::abs(generator_total_loss(0.25, 0.1, 0.5, w) - 0.665) < 1e-6, "total 0.665 example");
        c.check(std::abs(generator_total_loss(0.0, 0.0, 0.0, w)) < 1e-6, "total zero");
    }

    Rng rng(202);

    // Loss gradients.
    {
        Tensor<double> x = Tensor<double>::rand_uniform({2, 3, 4, 4}, rng, 0.0, 1.0);
        Tensor<double> adv = Tensor<double>::rand_uniform({2, 3, 4, 4}, rng, 0.0, 1.0);
        Tensor<double> g = recon_loss_backward(adv, x);
        for (int s = 0; s < 8; ++s) {
            const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(adv.size())));
            c.check(grad_matches(g[i], fd_at(adv, i, [&] { return recon_loss(adv, x); })), "recon gradient");
        }

        Tensor<double> r = Tensor<double>::rand_uniform({5}, rng, 0.05, 0.95);
        Tensor<double> f = Tensor<double>::rand_uniform({5}, rng, 0.05, 0.95);
        Tensor<double> dr, df;
        gan_loss_d_backward(r, f, dr, df);
        for (int i = 0; i < 5; ++i) {
            c.check(grad_matches(dr[i], fd_at(r, i, [&] { return gan_loss_d(r, f); })), "gan_d real gradient");
            c.check(grad_matches(df[i], fd_at(f, i, [&] { return gan_loss_d(r, f); })), "gan_d fake gradient");
        }
        Tensor<double> dg = gan_loss_g_backward(f);
        for (int i = 0; i < 5; ++i)
            c.check(grad_matches(dg[i], fd_at(f, i, [&] { return gan_loss_g(f); })), "gan_g gradient");

        for (Metric metric : {Metric::Euclidean, Metric::CosineDistance}) {
            Tensor<double> fx = Tensor<double>::rand_uniform({3, 5}, rng, -1.0, 1.0);
            Tensor<double> fn = Tensor<double>::rand_uniform({3, 5}, rng, -1.0, 1.0);
            Tensor<double> fa = Tensor<double>::rand_uniform({3, 5}, rng, -1.0, 1.0);
            Tensor<double> dx, dn, da;
            metric_loss_backward(fx, fn, fa, 1.0, metric, &dx, &dn, &da);
            auto loss = [&] { return metric_loss(fx, fn, fa, 1.0, metric); };
            for (int s = 0; s < 6; ++s) {
                const std::int64_t i = static_cast<std::int64_t>(rng.bounded(15));
                c.check(grad_matches(dx[i], fd_at(fx, i, loss)), "metric d/df_x");
                c.check(grad_matches(dn[i], fd_at(fn, i, loss)), "metric d/df_neg");
                c.check(grad_matches(da[i], fd_at(fa, i, loss)), "metric d/df_adv");
            }
        }
    }

    // Generator gradient vs finite differences (params and input).
    {
        GeneratorSpec spec;
        Generator<double> gen(spec);
        gen.init_params(11);
        Tensor<double> x = Tensor<double>::rand_uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
        Tensor<double> w = Tensor<double>::rand_uniform({1, 3, 16, 16}, rng, -1.0, 1.0);
        auto loss = [&] {
            Tensor<double> y = gen.forward(x, true);
            double acc = 0.0;
            for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * w[i];
            return acc;
        };
        gen.params().zero_grads();
        loss();
        Tensor<double> dx = gen.backward(w);
        for (int s = 0; s < 6; ++s) {
            const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(x.size())));
            c.check(grad_matches(dx[i], fd_at(x, i, loss)), "generator input gradient");
        }
        int param_checks = 0;
        for (const auto& e : gen.params().entries()) {
            if (!e.trainable) continue;
            if (e.name != "down1.conv.weight" && e.name != "res1.conv2.weight" && e.name != "up2.conv.weight" &&
                e.name != "out.conv.weight")
                continue;
            for (int s = 0; s < 3; ++s) {
                const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(e.value->size())));
                c.check(grad_matches((*e.grad)[i], fd_at(*e.value, i, loss)), "generator grad " + e.name);
                ++param_checks;
            }
        }
        c.check(param_checks == 12, "generator parameter sample coverage");
    }

    // Discriminator gradient vs finite differences.
    {
        DiscriminatorSpec spec;
        Discriminator<double> disc(spec);
        disc.init_params(13);
        Tensor<double> x = Tensor<double>::rand_uniform({2, 3, 16, 16}, rng, 0.0, 1.0);
        Tensor<double> w({2}, {0.8, -0.6});
        auto loss = [&] {
            const Tensor<double> s = disc.forward(x, true);
            return s[0] * w[0] + s[1] * w[1];
        };
        disc.params().zero_grads();
        loss();
        Tensor<double> dx = disc.backward(w);
        for (int s = 0; s < 6; ++s) {
            const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(x.size())));
            c.check(grad_matches(dx[i], fd_at(x, i, loss)), "discriminator input gradient");
        }
        for (const auto& e : disc.params().entries()) {
            if (!e.trainable) continue;
            if (e.name != "block1.conv.weight" && e.name != "block2.norm.gamma" && e.name != "head.conv.weight")
                continue;
            for (int s = 0; s < 3; ++s) {
                const std::int64_t i = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(e.value->size())));
                c.check(grad_matches((*e.grad)[i], fd_at(*e.value, i, loss)), "discriminator grad " + e.name);
            }
        }
    }
}

// ---------------------------------------------------------------- 3 ----

void criterion3_aggregator_properties() {
    Criterion c(3, "aggregation identities: GeM(1)=mean, SPoC=h*w*GeM(1), GeM(64)~MAC, 1-region R-MAC");
    Rng rng(303);

    for (int trial = 0; trial < 100; ++trial) {
        const int h = 2 + static_cast<int>(rng.bounded(3));
        const int w = (trial % 2) ? h : 2 + static_cast<int>(rng.bounded(3));
        Tensor<double> chi = Tensor<double>::rand_uniform({1, 8, h, w}, rng, 0.0, 4.0);

        AggregationSpec gem1{Aggregation::GeM, 1.0};
        AggregationSpec gem64{Aggregation::GeM, 64.0};
        AggregationSpec mac{Aggregation::MAC};
        AggregationSpec spoc{Aggregation::SPoC};
        const Tensor<double> g1 = aggregate(chi, gem1);
        const Tensor<double> g64 = aggregate(chi, gem64);
        const Tensor<double> mx = aggregate(chi, mac);
        const Tensor<double> sp = aggregate(chi, spoc);

        for (int ch = 0; ch < 8; ++ch) {
            double mean = 0.0;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) mean += chi.at(0, ch, yy, xx);
            mean /= h * w;
            c.check(std::abs(g1.at(0, ch) - mean) < 1e-12, "GeM(1) is the mean");
            if ((h * w & (h * w - 1)) == 0)  // power-of-two cells: identity is exact
                c.check(sp.at(0, ch) == h * w * g1.at(0, ch), "SPoC = h*w*GeM(1) exactly");
            else
                c.check(std::abs(sp.at(0, ch) - h * w * g1.at(0, ch)) < 1e-12, "SPoC = h*w*GeM(1)");
            c.check(std::abs(g64.at(0, ch) - mx.at(0, ch)) <= 0.05 * mx.at(0, ch) + 1e-12, "GeM(64) within 5% of MAC");
        }
    }

    Tensor<double> chi = Tensor<double>::rand_uniform({2, 6, 4, 4}, rng, 0.0, 2.0);
    AggregationSpec rmac1{Aggregation::RMAC, 3.0, 1};
    AggregationSpec mac{Aggregation::MAC};
    const Tensor<double> r = aggregate(chi, rmac1);
    const Tensor<double> m = aggregate(chi, mac);
    for (int n = 0; n < 2; ++n) {
        double norm = 0.0;
        for (int ch = 0; ch < 6; ++ch) norm += m.at(n, ch) * m.at(n, ch);
        norm = std::sqrt(norm);
        for (int ch = 0; ch < 6; ++ch)
            c.check(std::abs(r.at(n, ch) - m.at(n, ch) / norm) < 1e-9, "single-region R-MAC = normalized MAC");
    }
}

// ---------------------------------------------------------------- 4 ----

double ap_oracle(const std::vector<int>& rel, int total_relevant) {
    double acc = 0.0;
    for (std::size_t k = 0; k < rel.size(); ++k) {
        if (!rel[k]) continue;
        int hits = 0;
        for (std::size_t j = 0; j <= k; ++j) hits += rel[j];
        acc += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return acc / total_relevant;
}

void criterion4_ranking_oracles() {
    Criterion c(4, "AP matches the brute-force oracle; euclid-on-normalized = cosine ranking; CMC monotone");
    Rng rng(404);

    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> rel(12);
        int total = 0;
        for (auto& r : rel) {
            r = rng.uniform() < 0.4;
            total += r;
        }
        total += static_cast<int>(rng.bounded(3));
        if (total == 0) continue;
        c.check(std::abs(average_precision(rel, total) - ap_oracle(rel, total)) <= 1e-9, "AP oracle agreement");
    }

    for (int trial = 0; trial < 100; ++trial) {
        const int n = 12, d = 5;
        Tensor<double> feats = l2_normalize_rows(Tensor<double>::rand_uniform({n, d}, rng, -1.0, 1.0));
        GalleryIndex<double> index;
        index.fingerprint = "fp";
        index.features = feats;
        for (int i = 0; i < n; ++i) {
            index.ids.push_back("g" + std::to_string(i));
            index.labels.push_back("l");
        }
        Tensor<double> q = l2_normalize_rows(Tensor<double>::rand_uniform({1, d}, rng, -1.0, 1.0));
        const auto a = rank_gallery(index, q.data(), d, Metric::Euclidean, "", "fp");
        const auto b = rank_gallery(index, q.data(), d, Metric::CosineDistance, "", "fp");
        c.check(a == b, "euclidean-on-normalized differs from cosine ranking");
    }

    std::vector<int> ranks;
    for (int i = 0; i < 50; ++i) ranks.push_back(1 + static_cast<int>(rng.bounded(15)));
    const auto curve = cmc(ranks, {1, 2, 3, 5, 8, 10, 15});
    double prev = 0.0;
    for (const auto& [k, v] : curve) {
        c.check(v >= prev, "CMC must be nondecreasing in k");
        prev = v;
    }
    c.check(std::abs(curve.at(15) - 1.0) < 1e-12, "CMC saturates at the max rank");
}

// ------------------------------------------------------------- 5/6/7 ----

TargetModel<Real> clone_with_aggregation(const TargetModel<Real>& src, const ToyBackboneSpec& spec,
                                         Aggregation method) {
    auto backbone = build_toy_backbone<Real>(spec);
    AggregationSpec agg = src.aggregation();
    agg.method = method;
    TargetModel<Real> out(src.backbone_id(), std::move(backbone), agg, src.metric(), src.normalized(),
                          src.preprocessing());
    const auto& from = src.params().entries();
    const auto& to = out.mutable_params_for_restore().entries();
    for (std::size_t i = 0; i < from.size(); ++i) *to[i].value = *from[i].value;
    out.refresh_fingerprint();
    return out;
}

TrainConfig attack_config(bool ablate) {
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 32;
    cfg.seed = 7;
    cfg.weights = LossWeights::retrieval();
    cfg.epsilon = 0.1;
    cfg.ablate_discriminator = ablate;
    return cfg;
}

Generator<Real> train_attack(const Tensor<Real>& train_images, TargetModel<Real>& target, bool ablate, Criterion& c,
                             const char* tag) {
    AttackTrainer<Real> trainer(GeneratorSpec{}, DiscriminatorSpec{}, attack_config(ablate));
    trainer.train(train_images, target);
    const auto& last = trainer.history().back();
    c.note(std::string(tag) + " final total_g " + fmt(last.losses.total_g));
    Generator<Real> gen(GeneratorSpec{});
    const auto& from = trainer.generator().params().entries();
    const auto& to = gen.params().entries();
    for (std::size_t i = 0; i < from.size(); ++i) *to[i].value = *from[i].value;
    return gen;
}

void criteria_5_6_7_end_to_end() {
    // Shared desk-scale artifacts: 10 classes x 200 images at 64x64, one
    // frozen backbone wrapped with GeM and MAC pooling.
    ToyDataConfig data_cfg;
    data_cfg.classes = 10;
    data_cfg.per_class = 200;
    data_cfg.image_size = 64;
    data_cfg.seed = 3;
    ToyDatasetInMemory<Real> data = render_toy_dataset<Real>(data_cfg);

    std::optional<TargetModel<Real>> target_gem, target_mac;
    GalleryIndex<Real> index_gem, index_mac;
    double clean_gem = 0.0, clean_mac = 0.0, attacked_gem_map = 1.0;
    std::optional<Generator<Real>> gen_gem, gen_mac;
    ToyBackboneSpec backbone_spec;

    {
        Criterion c(5, "desk-scale attack: clean mAP >= 0.8, attacked <= 0.3x clean, gaussian >= 0.8x clean");
        ToyTargetTrainConfig tcfg;
        tcfg.epochs = 40;
        tcfg.batch_size = 32;
        tcfg.lr = 2e-3;
        tcfg.accuracy_floor = 0.9;
        tcfg.seed = 1;
        AggregationSpec agg;
        agg.method = Aggregation::GeM;
        agg.gem_p = 3.0;
        ToyTargetTrainReport rep;
        target_gem = build_toy_target<Real>(backbone_spec, data.train.images, data.train_labels, data_cfg.classes,
                                            tcfg, agg, Metric::Euclidean, true, Preprocessing{}, &rep);
        target_mac = clone_with_aggregation(*target_gem, backbone_spec, Aggregation::MAC);
        index_gem = build_index(*target_gem, data.gallery);
        index_mac = build_index(*target_mac, data.gallery);
        clean_gem = evaluate(*target_gem, data.query, index_gem, AttackMode::None).map;
        clean_mac = evaluate(*target_mac, data.query, index_mac, AttackMode::None).map;
        c.check(clean_gem >= 0.8, "clean self-retrieval mAP below 0.8: " + fmt(clean_gem));

        gen_gem = train_attack(data.train.images, *target_gem, false, c, "attack(gem)");
        const EvalReport attacked = evaluate(*target_gem, data.query, index_gem, AttackMode::Generator, &*gen_gem);
        const EvalReport gaussian = evaluate(*target_gem, data.query, index_gem, AttackMode::Gaussian, &*gen_gem);
        attacked_gem_map = attacked.map;
        c.note("train-acc " + fmt(rep.final_train_accuracy) + " clean " + fmt(clean_gem) + " attacked " +
               fmt(attacked.map) + " gaussian " + fmt(gaussian.map) + " noise-rms " + fmt(attacked.noise_rms_mean));
        c.check(attacked.map <= 0.3 * clean_gem,
                "attacked mAP " + fmt(attacked.map) + " above 0.3x clean " + fmt(clean_gem));
        c.check(gaussian.map >= 0.8 * clean_gem,
                "gaussian mAP " + fmt(gaussian.map) + " below 0.8x clean " + fmt(clean_gem));
        c.check(attacked.noise_linf <= 0.1 + 1e-6, "noise exceeded the epsilon bound");
    }

    {
        Criterion c(6, "transferability between MAC and GeM targets sharing the backbone");
        gen_mac = train_attack(data.train.images, *target_mac, false, c, "attack(mac)");
        const double mac_under_gem_gen =
            evaluate(*target_mac, data.query, index_mac, AttackMode::Generator, &*gen_gem).map;
        const double gem_under_mac_gen =
            evaluate(*target_gem, data.query, index_gem, AttackMode::Generator, &*gen_mac).map;
        c.note("gem-gen on mac-target " + fmt(clean_mac) + " -> " + fmt(mac_under_gem_gen) +
               "; mac-gen on gem-target " + fmt(clean_gem) + " -> " + fmt(gem_under_mac_gen));
        c.check(mac_under_gem_gen <= 0.7 * clean_mac, "transfer gem->mac dropped less than 30% relative");
        c.check(gem_under_mac_gen <= 0.7 * clean_gem, "transfer mac->gem dropped less than 30% relative");

        // The transfer matrix agrees with the direct evaluations.
        const TransferMatrix m =
            transfer_evaluate<Real>({{"gem", &*gen_gem}, {"mac", &*gen_mac}},
                                    {{"gem", &*target_gem}, {"mac", &*target_mac}}, data.query, data.gallery);
        c.check(m.gaps.empty(), "transfer matrix reported gaps");
        c.check(std::abs(m.map_cells[0][0] - clean_gem) < 1e-9, "no-attack row disagrees with evaluate()");
        c.check(std::abs(m.map_cells[1][0] - attacked_gem_map) < 1e-9, "diagonal cell disagrees with evaluate()");
    }

    {
        Criterion c(7, "discriminator ablation stays within 0.15 absolute of the full attack");
        Generator<Real> gen_abl = train_attack(data.train.images, *target_gem, true, c, "ablated");
        const EvalReport abl = evaluate(*target_gem, data.query, index_gem, AttackMode::Generator, &gen_abl);
        const EvalReport full = evaluate(*target_gem, data.query, index_gem, AttackMode::Generator, &*gen_gem);
        c.note("full-attack mAP " + fmt(full.map) + " rms " + fmt(full.noise_rms_mean) + "; ablated mAP " +
               fmt(abl.map) + " rms " + fmt(abl.noise_rms_mean));
        c.check(std::abs(abl.map - full.map) <= 0.15,
                "ablated attack differs by " + fmt(std::abs(abl.map - full.map)) + " absolute");
    }
}

// ---------------------------------------------------------------- 8 ----

void criterion8_reproducibility() {
    Criterion c(8, "two deterministic runs produce identical history files and final metrics");
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "advret_acceptance_repro";
    fs::remove_all(dir);
    fs::create_directories(dir);

    ToyDataConfig dcfg;
    dcfg.classes = 6;
    dcfg.per_class = 24;
    dcfg.image_size = 32;
    dcfg.seed = 5;
    auto ds = render_toy_dataset<Real>(dcfg);

    ToyTargetTrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.batch_size = 24;
    tcfg.accuracy_floor = 0.5;
    tcfg.seed = 2;
    AggregationSpec agg;

    auto run_once = [&](const fs::path& history_path) {
        TargetModel<Real> target =
            build_toy_target<Real>(ToyBackboneSpec{}, ds.train.images, ds.train_labels, dcfg.classes, tcfg, agg,
                                   Metric::Euclidean, true, Preprocessing{}, nullptr);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.seed = 11;
        AttackTrainer<Real> trainer(GeneratorSpec{}, DiscriminatorSpec{}, cfg);
        trainer.train(ds.train.images, target);
        write_history(history_path, trainer.history());
        Generator<Real>& gen = trainer.generator();
        const GalleryIndex<Real> index = build_index(target, ds.gallery);
        const EvalReport rep = evaluate(target, ds.query, index, AttackMode::Generator, &gen);
        return std::make_pair(rep.map, rep.noise_rms_mean);
    };

    const auto [map1, rms1] = run_once(dir / "h1.tsv");
    const auto [map2, rms2] = run_once(dir / "h2.tsv");

    std::ifstream f1(dir / "h1.tsv", std::ios::binary), f2(dir / "h2.tsv", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    c.check(!b1.empty() && b1 == b2, "history files differ between identical runs");
    c.check(map1 == map2, "final mAP differs: " + fmt(map1) + " vs " + fmt(map2));
    c.check(rms1 == rms2, "noise rms differs between identical runs");
    c.note("mAP " + fmt(map1) + " over " + std::to_string(std::count(b1.begin(), b1.end(), '\n') - 1) + " steps");
    fs::remove_all(dir);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n================\n");
    const auto t0 = std::chrono::steady_clock::now();
    criterion1_clip_invariants();
    criterion2_analytic_losses_and_gradients();
    criterion3_aggregator_properties();
    criterion4_ranking_oracles();
    criteria_5_6_7_end_to_end();
    criterion8_reproducibility();
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("================\n%s (%d failure%s, %.1fs total)\n", g_failures ? "FAILED" : "all criteria passed",
                g_failures, g_failures == 1 ? "" : "s", total);
    return g_failures ? 1 : 0;
}
