// Command-line front end: toy data generation, target training, attack
// training, evaluation, transfer matrices and report rendering.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advret/advret.hpp"

namespace fs = std::filesystem;
using namespace advret;

using Real = float;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<bool> deterministic;
    std::optional<std::string> out;
};

// Guards a run directory against concurrent writers.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw IoError("run directory is locked by another process (" + path_.string() +
                          " exists); remove the stale lock if no run is active");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~RunLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

struct RunPaths {
    fs::path root, config, checkpoints, history, reports, grids;
};

RunPaths run_paths(const std::string& out_dir) {
    RunPaths p;
    p.root = out_dir;
    p.config = p.root / "config";
    p.checkpoints = p.root / "checkpoints";
    p.history = p.root / "history";
    p.reports = p.root / "reports";
    p.grids = p.root / "grids";
    return p;
}

void make_run_dirs(const RunPaths& p) {
    for (const auto& d : {p.root, p.config, p.checkpoints, p.history, p.reports, p.grids})
        fs::create_directories(d);
}

RunConfig load_config(const GlobalArgs& g) {
    if (g.config_path.empty()) throw ConfigError("--config is required for this command");
    RunConfig cfg = RunConfig::load(g.config_path);
    if (g.seed) {
        cfg.seed = *g.seed;
        cfg.attack.seed = *g.seed;
    }
    if (g.deterministic) cfg.deterministic = *g.deterministic;
    if (g.out) cfg.out_dir = *g.out;
    cfg.validate();
    return cfg;
}

void snapshot_config(const RunConfig& cfg, const RunPaths& paths, const nlohmann::json& fingerprints) {
    cfg.save(paths.config / "run_config.json");
    nlohmann::json j = fingerprints;
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    std::ofstream out(paths.config / "fingerprints.json", std::ios::trunc);
    out << j.dump(2) << "\n";
}

fs::path target_checkpoint_path(const RunConfig& cfg) {
    if (!cfg.target.checkpoint.empty()) return cfg.target.checkpoint;
    return run_paths(cfg.out_dir).checkpoints / "target.ckpt";
}

fs::path generator_checkpoint_path(const RunConfig& cfg) {
    if (!cfg.eval.generator_checkpoint.empty()) return cfg.eval.generator_checkpoint;
    return run_paths(cfg.out_dir).checkpoints / "generator.ckpt";
}

std::map<std::string, int> label_indexing(const std::vector<std::string>& labels) {
    std::map<std::string, int> idx;
    for (const auto& l : labels) idx.emplace(l, 0);
    int next = 0;
    for (auto& [l, i] : idx) i = next++;
    return idx;
}

int cmd_gen_data(const GlobalArgs& g, const ToyDataConfig& cfg_in) {
    ToyDataConfig cfg = cfg_in;
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out) throw ConfigError("gen-data: --out <directory> is required");
    const auto t0 = std::chrono::steady_clock::now();
    const ToyDatasetSummary s = write_toy_dataset(*g.out, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("wrote %d images (%d train / %d gallery / %d query) to %s in %.1fs\n", s.total, s.train, s.gallery,
                s.query, g.out->c_str(), secs);
    std::printf("manifest: %s\n", s.manifest_path.string().c_str());
    return 0;
}

int cmd_train_target(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    if (cfg.data.manifest.empty()) throw ConfigError("train-target: data.manifest is required");
    const RunPaths paths = run_paths(cfg.out_dir);
    RunLock lock(paths.root);
    make_run_dirs(paths);

    DatasetManifest manifest = DatasetManifest::load(cfg.data.manifest);
    manifest.validate();
    LoadedSplit<Real> train = load_split<Real>(manifest, kSplitTrain, cfg.data.image_size);
    if (train.count() == 0) throw ConfigError("train-target: manifest has no train rows");
    const auto label_idx = label_indexing(train.labels);
    std::vector<int> labels;
    labels.reserve(train.labels.size());
    for (const auto& l : train.labels) {
        if (l.empty()) throw ConfigError("train-target: train rows must be labeled to fit the toy classifier");
        labels.push_back(label_idx.at(l));
    }

    ToyTargetTrainConfig tcfg = cfg.target.train;
    tcfg.seed = Rng::stream(cfg.seed, 0x7a26).next_u64();
    ToyTargetTrainReport rep;
    std::printf("training toy target on %d images, %zu classes...\n", train.count(), label_idx.size());
    TargetModel<Real> target =
        build_toy_target<Real>(cfg.target.backbone_spec, train.images, labels, static_cast<int>(label_idx.size()),
                               tcfg, cfg.target.aggregation, cfg.target.metric, cfg.target.normalize,
                               cfg.target.preprocessing, &rep);
    std::printf("final train accuracy %.4f\n", rep.final_train_accuracy);

    const fs::path ckpt = target_checkpoint_path(cfg);
    target_archive(target, cfg.target.backbone_spec).save(ckpt);
    snapshot_config(cfg, paths, {{"target", target.fingerprint()}});
    std::printf("target checkpoint: %s (fingerprint %s)\n", ckpt.string().c_str(), target.fingerprint().c_str());
    return 0;
}

int cmd_train_attack(const GlobalArgs& g, const std::string& resume_flag) {
    RunConfig cfg = load_config(g);
    const RunPaths paths = run_paths(cfg.out_dir);

    // Fail fast on missing inputs before any compute.
    const fs::path target_ckpt = target_checkpoint_path(cfg);
    if (!fs::exists(target_ckpt))
        throw ConfigError("train-attack: target checkpoint does not exist: " + target_ckpt.string() +
                          " (run train-target first)");
    if (cfg.data.manifest.empty() || !fs::exists(cfg.data.manifest))
        throw ConfigError("train-attack: data.manifest does not exist: " + cfg.data.manifest);

    RunLock lock(paths.root);
    make_run_dirs(paths);

    TargetModel<Real> target = load_target<Real>(target_ckpt);
    DatasetManifest manifest = DatasetManifest::load(cfg.data.manifest);
    manifest.validate();
    LoadedSplit<Real> train = load_split<Real>(manifest, kSplitTrain, cfg.data.image_size);
    if (train.count() == 0) throw ConfigError("train-attack: manifest has no train rows");

    AttackTrainer<Real> trainer(cfg.generator, cfg.discriminator, cfg.attack);
    const std::string resume = !resume_flag.empty() ? resume_flag : cfg.resume;
    if (!resume.empty()) {
        trainer.restore(Archive::load(resume));
        std::printf("resumed from %s at epoch %d\n", resume.c_str(), trainer.epoch());
    }

    std::printf("attack training: %d images, %d epochs, batch %d%s\n", train.count(), cfg.attack.epochs,
                cfg.attack.batch_size, cfg.attack.ablate_discriminator ? " (discriminator ablated)" : "");
    const auto t0 = std::chrono::steady_clock::now();
    trainer.train(train.images, target, [&](int epoch, const AttackTrainer<Real>& t) {
        if (cfg.attack.checkpoint_every > 0 && epoch % cfg.attack.checkpoint_every == 0 && epoch < cfg.attack.epochs)
            t.save(paths.checkpoints / ("attack_epoch" + std::to_string(epoch) + ".ckpt"));
        if (epoch % 10 == 0 || epoch == cfg.attack.epochs) {
            const auto& h = t.history().back();
            std::printf("epoch %4d  total_g %.4f  gan_d %.4f  recon %.4f  metric %.4f  lr_g %.2e\n", epoch,
                        h.losses.total_g, h.losses.gan_d, h.losses.recon, h.losses.metric, h.lr_g);
            std::fflush(stdout);
        }
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    trainer.save(paths.checkpoints / "attack_state.ckpt");
    trainer.generator_archive().save(paths.checkpoints / "generator.ckpt");
    write_history(paths.history / "history.tsv", trainer.history());
    snapshot_config(cfg, paths,
                    {{"target", target.fingerprint()}, {"generator", generator_fingerprint(trainer.generator())}});
    std::printf("done in %.1fs; %zu history rows; generator checkpoint: %s\n", secs, trainer.history().size(),
                (paths.checkpoints / "generator.ckpt").string().c_str());

    if (cfg.attack.ablate_discriminator) {
        // The critic must still equal its initialization.
        Discriminator<Real> fresh(cfg.discriminator);
        fresh.init_params(Rng::stream(cfg.attack.seed, 0xd15c).next_u64());
        const auto& a = trainer.discriminator().params().entries();
        const auto& b = fresh.params().entries();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!(*a[i].value == *b[i].value))
                throw TrainingError("ablated run mutated discriminator parameter " + a[i].name);
    }
    return 0;
}

void maybe_write_grids(const RunConfig& cfg, const RunPaths& paths, const TargetModel<Real>& target,
                       const GalleryIndex<Real>& index, const LoadedSplit<Real>& queries,
                       const LoadedSplit<Real>& gallery, const Generator<Real>& gen) {
    if (cfg.eval.grid_count <= 0) return;
    const int n = std::min(cfg.eval.grid_count, queries.count());
    for (int qi = 0; qi < n; ++qi) {
        Tensor<Real> x({1, 3, queries.images.h(), queries.images.w()});
        std::copy_n(queries.images.data() + queries.images.offset4(qi, 0, 0, 0), x.size(), x.data());
        Tensor<Real> delta = clip_perturbation(gen.eval(x), gen.spec().epsilon);
        Tensor<Real> x_adv = compose_adversarial(x, delta);
        Tensor<Real> f = target.embed(x_adv);
        const auto ranked = rank_gallery(index, f.data(), f.cols(), target.metric(),
                                         queries.ids[static_cast<std::size_t>(qi)], target.fingerprint());
        std::vector<Tensor<Real>> top;
        std::vector<bool> correct;
        for (int k = 0; k < 5 && k < static_cast<int>(ranked.size()); ++k) {
            top.push_back(get_batch_image(gallery.images, ranked[static_cast<std::size_t>(k)]));
            correct.push_back(index.labels[static_cast<std::size_t>(ranked[static_cast<std::size_t>(k)])] ==
                              queries.labels[static_cast<std::size_t>(qi)]);
        }
        char name[64];
        std::snprintf(name, sizeof(name), "query_%03d.ppm", qi);
        write_query_grid(paths.grids / name, get_batch_image(x, 0), get_batch_image(delta, 0),
                         get_batch_image(x_adv, 0), top, correct, gen.spec().epsilon);
    }
}

int cmd_evaluate(const GlobalArgs& g, const std::string& attack_arg) {
    RunConfig cfg = load_config(g);
    const RunPaths paths = run_paths(cfg.out_dir);
    const fs::path target_ckpt = target_checkpoint_path(cfg);
    if (!fs::exists(target_ckpt))
        throw ConfigError("evaluate: target checkpoint does not exist: " + target_ckpt.string());

    std::vector<AttackMode> modes;
    if (attack_arg == "all")
        modes = {AttackMode::None, AttackMode::Generator, AttackMode::Gaussian};
    else
        modes = {attack_mode_from_name(attack_arg)};

    const bool needs_generator = modes.size() > 1 || modes[0] != AttackMode::None;
    const fs::path gen_ckpt = generator_checkpoint_path(cfg);
    if (needs_generator && !fs::exists(gen_ckpt))
        throw ConfigError("evaluate: generator checkpoint does not exist: " + gen_ckpt.string() +
                          " (run train-attack first)");

    RunLock lock(paths.root);
    make_run_dirs(paths);

    TargetModel<Real> target = load_target<Real>(target_ckpt);
    DatasetManifest manifest = DatasetManifest::load(cfg.data.manifest);
    manifest.validate();
    LoadedSplit<Real> gallery = load_split<Real>(manifest, kSplitGallery, cfg.data.image_size);
    LoadedSplit<Real> queries = load_split<Real>(manifest, kSplitQuery, cfg.data.image_size);

    GalleryIndex<Real> index = build_index(target, gallery);
    std::optional<Generator<Real>> gen;
    if (needs_generator) gen.emplace(load_generator<Real>(Archive::load(gen_ckpt)));

    EvalOptions opts;
    opts.cmc_ks = cfg.eval.cmc_ks;
    opts.gaussian_seed = cfg.eval.gaussian_seed;
    for (AttackMode mode : modes) {
        const EvalReport rep = evaluate(target, queries, index, mode, gen ? &*gen : nullptr, opts);
        write_eval_report(paths.reports, rep);
        std::printf("%-9s  mAP %.4f", rep.attack.c_str(), rep.map);
        for (const auto& [k, v] : rep.cmc_at) std::printf("  cmc@%d %.4f", k, v);
        if (mode != AttackMode::None) std::printf("  noise rms %.4f linf %.4f", rep.noise_rms_mean, rep.noise_linf);
        std::printf("\n");
        if (mode == AttackMode::Generator) maybe_write_grids(cfg, paths, target, index, queries, gallery, *gen);
    }
    snapshot_config(cfg, paths, {{"target", target.fingerprint()}, {"index", index.fingerprint}});
    return 0;
}

int cmd_transfer(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    const RunPaths paths = run_paths(cfg.out_dir);
    if (cfg.transfer_targets.empty() || cfg.transfer_generators.empty())
        throw ConfigError("transfer: config needs transfer.targets and transfer.generators blocks");
    for (const auto& [id, t] : cfg.transfer_targets)
        if (t.checkpoint.empty() || !fs::exists(t.checkpoint))
            throw ConfigError("transfer: target '" + id + "' checkpoint missing: " + t.checkpoint);

    RunLock lock(paths.root);
    make_run_dirs(paths);

    DatasetManifest manifest = DatasetManifest::load(cfg.data.manifest);
    manifest.validate();
    LoadedSplit<Real> gallery = load_split<Real>(manifest, kSplitGallery, cfg.data.image_size);
    LoadedSplit<Real> queries = load_split<Real>(manifest, kSplitQuery, cfg.data.image_size);

    std::vector<TargetModel<Real>> target_storage;
    target_storage.reserve(cfg.transfer_targets.size());
    std::vector<std::pair<std::string, const TargetModel<Real>*>> targets;
    for (const auto& [id, t] : cfg.transfer_targets) {
        target_storage.push_back(load_target<Real>(t.checkpoint));
        targets.emplace_back(id, &target_storage.back());
    }
    std::vector<Generator<Real>> gen_storage;
    gen_storage.reserve(cfg.transfer_generators.size());
    std::vector<std::pair<std::string, const Generator<Real>*>> generators;
    for (const auto& [id, path] : cfg.transfer_generators) {
        if (!fs::exists(path)) {
            generators.emplace_back(id, nullptr);  // recorded as a gap
            continue;
        }
        gen_storage.push_back(load_generator<Real>(Archive::load(path)));
        generators.emplace_back(id, &gen_storage.back());
    }

    EvalOptions opts;
    opts.cmc_ks = cfg.eval.cmc_ks;
    opts.gaussian_seed = cfg.eval.gaussian_seed;
    const TransferMatrix m = transfer_evaluate(generators, targets, queries, gallery, opts);
    write_transfer(paths.reports, m);
    std::fputs(render_transfer_table(m).c_str(), stdout);
    snapshot_config(cfg, paths, nlohmann::json::object());
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& ablation_dir) {
    const RunPaths paths = run_paths(run_dir);
    if (!fs::exists(paths.reports)) throw ConfigError("report: no reports directory under " + run_dir);

    std::map<std::string, EvalReport> reports;
    std::vector<std::string> missing;
    for (const std::string mode : {"none", "generator", "gaussian"}) {
        const fs::path p = paths.reports / ("eval_" + mode + ".json");
        if (!fs::exists(p)) {
            missing.push_back(p.string());
            continue;
        }
        std::ifstream in(p);
        reports.emplace(mode, eval_report_from_json(nlohmann::json::parse(in)));
    }
    if (reports.empty())
        throw ConfigError("report: no evaluation reports found; expected at least one of: " +
                          [&] {
                              std::string s;
                              for (const auto& m : missing) s += m + " ";
                              return s;
                          }());

    std::optional<EvalReport> ablation;
    if (!ablation_dir.empty()) {
        const fs::path p = run_paths(ablation_dir).reports / "eval_generator.json";
        if (!fs::exists(p)) throw ConfigError("report: ablation run has no attack report: " + p.string());
        std::ifstream in(p);
        ablation = eval_report_from_json(nlohmann::json::parse(in));
    }

    std::string doc;
    char buf[256];
    doc += "retrieval attack summary\n";
    doc += "========================\n\n";
    auto row = [&](const std::string& name, const EvalReport& r) {
        std::snprintf(buf, sizeof(buf), "%-24s mAP %.4f", name.c_str(), r.map);
        doc += buf;
        for (const auto& [k, v] : r.cmc_at) {
            std::snprintf(buf, sizeof(buf), "  cmc@%-2d %.4f", k, v);
            doc += buf;
        }
        if (r.attack != "none") {
            std::snprintf(buf, sizeof(buf), "  noise-rms %.4f  noise-linf %.4f", r.noise_rms_mean, r.noise_linf);
            doc += buf;
        }
        doc += "\n";
    };
    if (reports.count("none")) row("original", reports.at("none"));
    if (reports.count("gaussian")) row("gaussian baseline", reports.at("gaussian"));
    if (reports.count("generator")) row("attack", reports.at("generator"));
    if (ablation) row("attack (no critic)", *ablation);

    if (reports.count("none") && reports.count("generator")) {
        const double clean = reports.at("none").map, attacked = reports.at("generator").map;
        std::snprintf(buf, sizeof(buf), "\nattack drop: %.4f -> %.4f (%.1f%% of clean retained)\n", clean, attacked,
                      clean > 0 ? 100.0 * attacked / clean : 0.0);
        doc += buf;
    }
    if (reports.count("none") && reports.count("gaussian")) {
        const double clean = reports.at("none").map, gauss = reports.at("gaussian").map;
        std::snprintf(buf, sizeof(buf), "gaussian baseline: %.4f -> %.4f (%.1f%% of clean retained)\n", clean, gauss,
                      clean > 0 ? 100.0 * gauss / clean : 0.0);
        doc += buf;
    }
    if (ablation && reports.count("generator")) {
        std::snprintf(buf, sizeof(buf),
                      "ablation delta: |%.4f - %.4f| = %.4f absolute; perturbation rms %.4f vs %.4f\n",
                      reports.at("generator").map, ablation->map,
                      std::abs(reports.at("generator").map - ablation->map), reports.at("generator").noise_rms_mean,
                      ablation->noise_rms_mean);
        doc += buf;
    }

    const fs::path tpath = paths.reports / "transfer.json";
    if (fs::exists(tpath)) {
        std::ifstream in(tpath);
        const auto j = nlohmann::json::parse(in);
        TransferMatrix m;
        m.row_ids = j.at("rows").get<std::vector<std::string>>();
        m.target_ids = j.at("targets").get<std::vector<std::string>>();
        for (const auto& jr : j.at("map")) {
            std::vector<double> row_cells;
            for (const auto& v : jr)
                row_cells.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
            m.map_cells.push_back(std::move(row_cells));
        }
        m.gaps = j.at("gaps").get<std::vector<std::string>>();
        doc += "\ntransfer (mAP under attack)\n";
        doc += render_transfer_table(m);
    }

    std::ofstream out(paths.reports / "summary.txt", std::ios::trunc);
    out << doc;
    std::fputs(doc.c_str(), stdout);
    std::printf("\nsummary: %s\n", (paths.reports / "summary.txt").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"query-specific adversarial perturbations against deep-feature image retrieval"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "path to the run config (json)");
    std::uint64_t seed_val = 0;
    auto* seed_opt = app.add_option("--seed", seed_val, "override the config seed");
    bool det_val = true;
    auto* det_opt = app.add_flag("--deterministic,!--no-deterministic", det_val, "fixed-seed reproducible mode");
    std::string out_val;
    auto* out_opt = app.add_option("--out", out_val, "override the output/run directory");

    auto* gen_data = app.add_subcommand("gen-data", "generate the procedural toy dataset");
    ToyDataConfig toy;
    gen_data->add_option("--classes", toy.classes, "number of classes")->capture_default_str();
    gen_data->add_option("--per-class", toy.per_class, "images per class")->capture_default_str();
    gen_data->add_option("--image-size", toy.image_size, "square image side")->capture_default_str();

    auto* train_target = app.add_subcommand("train-target", "train and freeze the toy retrieval target");
    auto* train_attack = app.add_subcommand("train-attack", "train the perturbation generator against a frozen target");
    std::string resume;
    train_attack->add_option("--resume", resume, "resume from a training-state checkpoint");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "rank queries against the gallery and report mAP/CMC");
    std::string attack_arg = "all";
    evaluate_cmd->add_option("--attack", attack_arg, "none|generator|gaussian|all")->capture_default_str();

    auto* transfer_cmd = app.add_subcommand("transfer", "cross-evaluate generators against multiple targets");

    auto* report_cmd = app.add_subcommand("report", "summarize a finished run directory");
    std::string run_dir, ablation_dir;
    report_cmd->add_option("run_dir", run_dir, "run directory to summarize")->required();
    report_cmd->add_option("--ablation", ablation_dir, "run directory of a discriminator-ablated attack to compare");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    if (*seed_opt) g.seed = seed_val;
    if (*det_opt) g.deterministic = det_val;
    if (*out_opt) g.out = out_val;

    try {
        if (gen_data->parsed()) return cmd_gen_data(g, toy);
        if (train_target->parsed()) return cmd_train_target(g);
        if (train_attack->parsed()) return cmd_train_attack(g, resume);
        if (evaluate_cmd->parsed()) return cmd_evaluate(g, attack_arg);
        if (transfer_cmd->parsed()) return cmd_transfer(g);
        if (report_cmd->parsed()) return cmd_report(run_dir, ablation_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
