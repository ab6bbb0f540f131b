#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "advret/core/errors.hpp"
#include "advret/eval/harness.hpp"
#include "advret/nn/discriminator.hpp"
#include "advret/nn/generator.hpp"
#include "advret/objectives.hpp"
#include "advret/target/toy_target.hpp"
#include "advret/train/trainer.hpp"

namespace advret {

using nlohmann::json;

namespace config_detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& context) {
    if (!obj.is_object()) throw ConfigError("config: '" + context + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in '" + context + "'");
}

}  // namespace config_detail

struct DataConfig {
    std::string manifest;
    int image_size = 64;
};

struct TargetConfig {
    std::string backbone = "toy4";
    ToyBackboneSpec backbone_spec;
    AggregationSpec aggregation;
    Metric metric = Metric::Euclidean;
    bool normalize = true;
    Preprocessing preprocessing;
    std::string checkpoint;  // written by train-target, read by the rest
    ToyTargetTrainConfig train;
};

struct EvalConfig {
    std::vector<int> cmc_ks = {1, 5, 10};
    std::uint64_t gaussian_seed = 1234;
    int grid_count = 0;
    std::string generator_checkpoint;  // empty -> <out>/checkpoints/generator.ckpt
};

struct RunConfig {
    std::string task = "retrieval";  // retrieval | reid | face
    std::uint64_t seed = 7;
    bool deterministic = true;
    std::string out_dir = "runs/default";
    DataConfig data;
    TargetConfig target;
    GeneratorSpec generator;
    DiscriminatorSpec discriminator;
    TrainConfig attack;
    EvalConfig eval;
    std::map<std::string, TargetConfig> transfer_targets;
    std::map<std::string, std::string> transfer_generators;
    std::string resume;  // optional training-state checkpoint

    static RunConfig with_task_defaults(const std::string& task) {
        RunConfig c;
        c.task = task;
        if (task == "retrieval") {
            c.attack.batch_size = 32;
            c.attack.weights = LossWeights::retrieval();
        } else if (task == "reid") {
            c.attack.batch_size = 256;
            c.attack.weights = LossWeights::reid();
        } else if (task == "face") {
            c.attack.batch_size = 64;
            c.attack.weights = LossWeights::face();
        } else {
            throw ConfigError("config: unknown task preset '" + task + "' (expected retrieval|reid|face)");
        }
        c.attack.epsilon = c.generator.epsilon;
        return c;
    }

    static RunConfig from_json(const json& j);
    json to_json() const;

    static RunConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path.string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config parse error in " + path.string() + ": " + e.what());
        }
        return from_json(j);
    }

    void save(const std::filesystem::path& path) const {
        namespace fs = std::filesystem;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write config: " + path.string());
        out << to_json().dump(2) << "\n";
    }

    // Semantic checks; path existence is checked by the commands that
    // actually consume each artifact.
    void validate() const {
        generator.validate();
        discriminator.validate();
        attack.validate();
        target.backbone_spec.validate();
        target.aggregation.validate();
        if (data.image_size < 16) throw ConfigError("config: image_size must be >= 16");
        if (attack.epsilon != generator.epsilon)
            throw ConfigError("config: attack.epsilon is derived from generator.epsilon and may not disagree");
        for (const auto& [id, t] : transfer_targets) {
            t.backbone_spec.validate();
            t.aggregation.validate();
        }
    }

    bool operator==(const RunConfig& other) const { return to_json() == other.to_json(); }
};

namespace config_detail {

inline void parse_target(const json& j, TargetConfig& t, const std::string& ctx) {
    check_keys(j,
               {"backbone", "channels", "strides", "kernel_size", "aggregation", "gem_p", "rmac_levels",
                "rmac_overlap", "metric", "normalize", "preprocess_mean", "preprocess_std", "checkpoint", "train"},
               ctx);
    t.backbone = j.value("backbone", t.backbone);
    if (t.backbone != "toy4") throw ConfigError("config: only the 'toy4' backbone is bundled; external backbones load from checkpoints");
    if (j.contains("channels")) t.backbone_spec.channels = j["channels"].get<std::vector<int>>();
    if (j.contains("strides")) t.backbone_spec.strides = j["strides"].get<std::vector<int>>();
    t.backbone_spec.kernel_size = j.value("kernel_size", t.backbone_spec.kernel_size);
    if (j.contains("aggregation")) t.aggregation.method = aggregation_from_name(j["aggregation"].get<std::string>());
    t.aggregation.gem_p = j.value("gem_p", t.aggregation.gem_p);
    t.aggregation.rmac_levels = j.value("rmac_levels", t.aggregation.rmac_levels);
    t.aggregation.rmac_overlap = j.value("rmac_overlap", t.aggregation.rmac_overlap);
    if (j.contains("metric")) t.metric = metric_from_name(j["metric"].get<std::string>());
    t.normalize = j.value("normalize", t.normalize);
    if (j.contains("preprocess_mean")) t.preprocessing.mean = j["preprocess_mean"].get<std::array<double, 3>>();
    if (j.contains("preprocess_std")) t.preprocessing.std = j["preprocess_std"].get<std::array<double, 3>>();
    t.checkpoint = j.value("checkpoint", t.checkpoint);
    if (j.contains("train")) {
        const json& jt = j["train"];
        check_keys(jt, {"epochs", "batch_size", "lr", "accuracy_floor"}, ctx + ".train");
        t.train.epochs = jt.value("epochs", t.train.epochs);
        t.train.batch_size = jt.value("batch_size", t.train.batch_size);
        t.train.lr = jt.value("lr", t.train.lr);
        t.train.accuracy_floor = jt.value("accuracy_floor", t.train.accuracy_floor);
    }
}

inline json target_json(const TargetConfig& t) {
    json j;
    j["backbone"] = t.backbone;
    j["channels"] = t.backbone_spec.channels;
    j["strides"] = t.backbone_spec.strides;
    j["kernel_size"] = t.backbone_spec.kernel_size;
    j["aggregation"] = aggregation_name(t.aggregation.method);
    j["gem_p"] = t.aggregation.gem_p;
    j["rmac_levels"] = t.aggregation.rmac_levels;
    j["rmac_overlap"] = t.aggregation.rmac_overlap;
    j["metric"] = metric_name(t.metric);
    j["normalize"] = t.normalize;
    j["preprocess_mean"] = t.preprocessing.mean;
    j["preprocess_std"] = t.preprocessing.std;
    j["checkpoint"] = t.checkpoint;
    j["train"] = {{"epochs", t.train.epochs},
                  {"batch_size", t.train.batch_size},
                  {"lr", t.train.lr},
                  {"accuracy_floor", t.train.accuracy_floor}};
    return j;
}

}  // namespace config_detail

inline RunConfig RunConfig::from_json(const json& j) {
    using config_detail::check_keys;
    check_keys(j,
               {"task", "seed", "deterministic", "out_dir", "data", "target", "generator", "discriminator",
                "attack", "eval", "transfer", "resume"},
               "config");
    RunConfig c = with_task_defaults(j.value("task", "retrieval"));
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.resume = j.value("resume", c.resume);

    if (j.contains("data")) {
        const json& jd = j["data"];
        check_keys(jd, {"manifest", "image_size"}, "data");
        c.data.manifest = jd.value("manifest", c.data.manifest);
        c.data.image_size = jd.value("image_size", c.data.image_size);
    }

    if (j.contains("target")) config_detail::parse_target(j["target"], c.target, "target");

    if (j.contains("generator")) {
        const json& jg = j["generator"];
        check_keys(jg,
                   {"input_channels", "down_blocks", "residual_blocks", "residual_channels", "up_blocks",
                    "kernel_size", "epsilon", "instance_affine"},
                   "generator");
        c.generator.input_channels = jg.value("input_channels", c.generator.input_channels);
        if (jg.contains("down_blocks"))
            c.generator.down_blocks = jg["down_blocks"].get<std::vector<std::pair<int, int>>>();
        c.generator.residual_blocks = jg.value("residual_blocks", c.generator.residual_blocks);
        c.generator.residual_channels = jg.value("residual_channels", c.generator.residual_channels);
        if (jg.contains("up_blocks")) c.generator.up_blocks = jg["up_blocks"].get<std::vector<int>>();
        c.generator.kernel_size = jg.value("kernel_size", c.generator.kernel_size);
        c.generator.epsilon = jg.value("epsilon", c.generator.epsilon);
        c.generator.instance_affine = jg.value("instance_affine", c.generator.instance_affine);
    }

    if (j.contains("discriminator")) {
        const json& jd = j["discriminator"];
        check_keys(jd, {"input_channels", "conv_blocks", "kernel_size", "stride", "head_kernel", "leaky_slope"},
                   "discriminator");
        c.discriminator.input_channels = jd.value("input_channels", c.discriminator.input_channels);
        if (jd.contains("conv_blocks")) c.discriminator.conv_blocks = jd["conv_blocks"].get<std::vector<int>>();
        c.discriminator.kernel_size = jd.value("kernel_size", c.discriminator.kernel_size);
        c.discriminator.stride = jd.value("stride", c.discriminator.stride);
        c.discriminator.head_kernel = jd.value("head_kernel", c.discriminator.head_kernel);
        c.discriminator.leaky_slope = jd.value("leaky_slope", c.discriminator.leaky_slope);
    }

    if (j.contains("attack")) {
        const json& ja = j["attack"];
        check_keys(ja,
                   {"epochs", "batch_size", "lr_g", "lr_d", "adam_beta1", "adam_beta2", "adam_eps", "decay_epochs",
                    "decay_factor", "lambda_r", "lambda_m", "margin", "ablate_discriminator", "checkpoint_every",
                    "clip_gradient", "recon_norm"},
                   "attack");
        c.attack.epochs = ja.value("epochs", c.attack.epochs);
        c.attack.batch_size = ja.value("batch_size", c.attack.batch_size);
        c.attack.lr_g = ja.value("lr_g", c.attack.lr_g);
        c.attack.lr_d = ja.value("lr_d", c.attack.lr_d);
        c.attack.adam_beta1 = ja.value("adam_beta1", c.attack.adam_beta1);
        c.attack.adam_beta2 = ja.value("adam_beta2", c.attack.adam_beta2);
        c.attack.adam_eps = ja.value("adam_eps", c.attack.adam_eps);
        if (ja.contains("decay_epochs")) c.attack.decay_epochs = ja["decay_epochs"].get<std::vector<int>>();
        c.attack.decay_factor = ja.value("decay_factor", c.attack.decay_factor);
        c.attack.weights.lambda_r = ja.value("lambda_r", c.attack.weights.lambda_r);
        c.attack.weights.lambda_m = ja.value("lambda_m", c.attack.weights.lambda_m);
        c.attack.weights.margin = ja.value("margin", c.attack.weights.margin);
        c.attack.ablate_discriminator = ja.value("ablate_discriminator", c.attack.ablate_discriminator);
        c.attack.checkpoint_every = ja.value("checkpoint_every", c.attack.checkpoint_every);
        if (ja.contains("clip_gradient")) {
            const std::string m = ja["clip_gradient"].get<std::string>();
            if (m == "zero-outside")
                c.attack.clip_grad = ClipGradMode::ZeroOutsideBand;
            else if (m == "straight-through")
                c.attack.clip_grad = ClipGradMode::StraightThrough;
            else
                throw ConfigError("config: clip_gradient must be zero-outside|straight-through");
        }
        if (ja.contains("recon_norm")) {
            const std::string m = ja["recon_norm"].get<std::string>();
            if (m == "rmse")
                c.attack.recon_norm = ReconNorm::RMSE;
            else if (m == "l2")
                c.attack.recon_norm = ReconNorm::RawL2;
            else
                throw ConfigError("config: recon_norm must be rmse|l2");
        }
    }
    c.attack.seed = c.seed;
    c.attack.epsilon = c.generator.epsilon;

    if (j.contains("eval")) {
        const json& je = j["eval"];
        check_keys(je, {"cmc_ks", "gaussian_seed", "grid_count", "generator_checkpoint"}, "eval");
        if (je.contains("cmc_ks")) c.eval.cmc_ks = je["cmc_ks"].get<std::vector<int>>();
        c.eval.gaussian_seed = je.value("gaussian_seed", c.eval.gaussian_seed);
        c.eval.grid_count = je.value("grid_count", c.eval.grid_count);
        c.eval.generator_checkpoint = je.value("generator_checkpoint", c.eval.generator_checkpoint);
    }

    if (j.contains("transfer")) {
        const json& jt = j["transfer"];
        check_keys(jt, {"targets", "generators"}, "transfer");
        if (jt.contains("targets"))
            for (const auto& [id, tj] : jt["targets"].items()) {
                TargetConfig t = c.target;  // inherit defaults from the main target block
                config_detail::parse_target(tj, t, "transfer.targets." + id);
                c.transfer_targets.emplace(id, std::move(t));
            }
        if (jt.contains("generators"))
            for (const auto& [id, gj] : jt["generators"].items())
                c.transfer_generators.emplace(id, gj.get<std::string>());
    }

    c.validate();
    return c;
}

inline json RunConfig::to_json() const {
    json j;
    j["task"] = task;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["out_dir"] = out_dir;
    j["resume"] = resume;
    j["data"] = {{"manifest", data.manifest}, {"image_size", data.image_size}};
    j["target"] = config_detail::target_json(target);
    j["generator"] = {{"input_channels", generator.input_channels},
                      {"down_blocks", generator.down_blocks},
                      {"residual_blocks", generator.residual_blocks},
                      {"residual_channels", generator.residual_channels},
                      {"up_blocks", generator.up_blocks},
                      {"kernel_size", generator.kernel_size},
                      {"epsilon", generator.epsilon},
                      {"instance_affine", generator.instance_affine}};
    j["discriminator"] = {{"input_channels", discriminator.input_channels},
                          {"conv_blocks", discriminator.conv_blocks},
                          {"kernel_size", discriminator.kernel_size},
                          {"stride", discriminator.stride},
                          {"head_kernel", discriminator.head_kernel},
                          {"leaky_slope", discriminator.leaky_slope}};
    j["attack"] = {{"epochs", attack.epochs},
                   {"batch_size", attack.batch_size},
                   {"lr_g", attack.lr_g},
                   {"lr_d", attack.lr_d},
                   {"adam_beta1", attack.adam_beta1},
                   {"adam_beta2", attack.adam_beta2},
                   {"adam_eps", attack.adam_eps},
                   {"decay_epochs", attack.decay_epochs},
                   {"decay_factor", attack.decay_factor},
                   {"lambda_r", attack.weights.lambda_r},
                   {"lambda_m", attack.weights.lambda_m},
                   {"margin", attack.weights.margin},
                   {"ablate_discriminator", attack.ablate_discriminator},
                   {"checkpoint_every", attack.checkpoint_every},
                   {"clip_gradient",
                    attack.clip_grad == ClipGradMode::ZeroOutsideBand ? "zero-outside" : "straight-through"},
                   {"recon_norm", attack.recon_norm == ReconNorm::RMSE ? "rmse" : "l2"}};
    j["eval"] = {{"cmc_ks", eval.cmc_ks},
                 {"gaussian_seed", eval.gaussian_seed},
                 {"grid_count", eval.grid_count},
                 {"generator_checkpoint", eval.generator_checkpoint}};
    json targets = json::object(), generators = json::object();
    for (const auto& [id, t] : transfer_targets) targets[id] = config_detail::target_json(t);
    for (const auto& [id, g] : transfer_generators) generators[id] = g;
    j["transfer"] = {{"targets", targets}, {"generators", generators}};
    return j;
}

}  // namespace advret
