#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/data/image_io.hpp"
#include "advret/data/manifest.hpp"

namespace advret {

// Procedural desk-scale dataset: classes are shape x color-family
// combinations rendered with jittered pose, size, hue and background, so a
// small CNN separates them quickly while images within a class still vary.
struct ToyDataConfig {
    int classes = 10;
    int per_class = 200;
    int image_size = 64;
    std::uint64_t seed = 3;
    double train_frac = 0.5;
    double gallery_frac = 0.375;  // remainder becomes the query split

    void validate() const {
        if (classes < 1 || classes > 10) throw ConfigError("gen-data: classes must be in [1,10]");
        if (per_class < 4) throw ConfigError("gen-data: need at least 4 images per class");
        if (image_size < 16) throw ConfigError("gen-data: image_size must be >= 16");
        if (!(train_frac > 0.0) || !(gallery_frac > 0.0) || train_frac + gallery_frac >= 1.0)
            throw ConfigError("gen-data: split fractions must be positive and leave room for queries");
    }
};

namespace toy_detail {

struct Vec2 {
    double x = 0, y = 0;
};

inline Vec2 rotate(Vec2 p, double t) {
    const double c = std::cos(t), s = std::sin(t);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

inline double sd_box(Vec2 p, double hx, double hy) {
    const double dx = std::abs(p.x) - hx, dy = std::abs(p.y) - hy;
    const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dx, dy), 0.0);
}

inline double sd_equilateral_triangle(Vec2 p, double r) {
    const double k = std::sqrt(3.0);
    p.x = std::abs(p.x) - r;
    p.y = p.y + r / k;
    if (p.x + k * p.y > 0.0) p = {(p.x - k * p.y) / 2.0, (-k * p.x - p.y) / 2.0};
    p.x -= std::clamp(p.x, -2.0 * r, 0.0);
    return -std::sqrt(p.x * p.x + p.y * p.y) * (p.y > 0 ? -1.0 : 1.0);
}

// Shapes indexed 0..4: circle, square, triangle, cross, ring.
inline double shape_sdf(int shape, Vec2 p, double r, double rot) {
    switch (shape) {
        case 0: return std::sqrt(p.x * p.x + p.y * p.y) - r;
        case 1: return sd_box(rotate(p, rot), r * 0.85, r * 0.85);
        case 2: return sd_equilateral_triangle(rotate(p, rot), r * 1.1);
        case 3: {
            const Vec2 q = rotate(p, rot);
            return std::min(sd_box(q, r, r * 0.34), sd_box(q, r * 0.34, r));
        }
        default: return std::abs(std::sqrt(p.x * p.x + p.y * p.y) - r * 0.8) - r * 0.3;
    }
}

}  // namespace toy_detail

// Renders one class sample; deterministic in (seed, class_id, index).
template <class T>
Tensor<T> render_toy_image(int class_id, int index, std::uint64_t seed, int side = 64) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(class_id), static_cast<std::uint64_t>(index));
    const int shape = class_id % 5;
    const int palette = (class_id / 5) % 2;
    const double base[2][3] = {{0.85, 0.30, 0.20}, {0.20, 0.45, 0.85}};

    double color[3];
    const double brightness = rng.uniform(0.85, 1.1);
    for (int ci = 0; ci < 3; ++ci)
        color[ci] = std::clamp(base[palette][ci] * brightness + rng.uniform(-0.08, 0.08), 0.05, 0.98);

    const double scale = side / 64.0;
    const double cx = side / 2.0 + rng.uniform(-7.0, 7.0) * scale;
    const double cy = side / 2.0 + rng.uniform(-7.0, 7.0) * scale;
    const double r = rng.uniform(10.0, 16.0) * scale;
    const double rot = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double bg = rng.uniform(0.25, 0.75);
    const double aa = 1.5 * scale;

    Tensor<T> img({3, side, side});
    for (int yy = 0; yy < side; ++yy)
        for (int xx = 0; xx < side; ++xx) {
            const double noise = rng.uniform(-0.06, 0.06);
            const double sdf = toy_detail::shape_sdf(shape, {xx + 0.5 - cx, yy + 0.5 - cy}, r, rot);
            const double cov = std::clamp(0.5 - sdf / aa, 0.0, 1.0);
            for (int ci = 0; ci < 3; ++ci) {
                const double v = (1.0 - cov) * (bg + noise) + cov * color[ci];
                img[(static_cast<std::int64_t>(ci) * side + yy) * side + xx] =
                    static_cast<T>(std::clamp(v, 0.0, 1.0));
            }
        }
    return img;
}

struct ToyDatasetSummary {
    int total = 0, train = 0, gallery = 0, query = 0;
    std::filesystem::path manifest_path;
};

// Writes images plus a manifest with train/gallery/query splits.
inline ToyDatasetSummary write_toy_dataset(const std::filesystem::path& out_dir, const ToyDataConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create dataset directory: " + (out_dir / "images").string());

    const int n_train = std::max(1, static_cast<int>(std::lround(cfg.per_class * cfg.train_frac)));
    const int n_gallery = std::max(2, static_cast<int>(std::lround(cfg.per_class * cfg.gallery_frac)));
    if (n_train + n_gallery >= cfg.per_class)
        throw ConfigError("gen-data: split fractions leave no query images");

    const fs::path manifest_path = out_dir / "manifest.csv";
    std::ofstream manifest(manifest_path, std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest: " + manifest_path.string());
    manifest << "path,label,split\n";

    ToyDatasetSummary summary;
    summary.manifest_path = manifest_path;
    char name[64];
    for (int c = 0; c < cfg.classes; ++c)
        for (int i = 0; i < cfg.per_class; ++i) {
            std::snprintf(name, sizeof(name), "images/c%d_%04d.ppm", c, i);
            save_ppm(out_dir / name, render_toy_image<float>(c, i, cfg.seed, cfg.image_size));
            const char* split = i < n_train ? kSplitTrain : (i < n_train + n_gallery ? kSplitGallery : kSplitQuery);
            manifest << name << "," << c << "," << split << "\n";
            ++summary.total;
            if (split == kSplitTrain)
                ++summary.train;
            else if (split == kSplitGallery)
                ++summary.gallery;
            else
                ++summary.query;
        }
    if (!manifest) throw IoError("manifest write failed: " + manifest_path.string());
    return summary;
}

// In-memory variant used by tests and the acceptance suite.
template <class T>
struct ToyDatasetInMemory {
    LoadedSplit<T> train, gallery, query;
    std::vector<int> train_labels;
};

template <class T>
ToyDatasetInMemory<T> render_toy_dataset(const ToyDataConfig& cfg) {
    cfg.validate();
    const int n_train = std::max(1, static_cast<int>(std::lround(cfg.per_class * cfg.train_frac)));
    const int n_gallery = std::max(2, static_cast<int>(std::lround(cfg.per_class * cfg.gallery_frac)));
    const int n_query = cfg.per_class - n_train - n_gallery;
    if (n_query < 1) throw ConfigError("gen-data: split fractions leave no query images");

    ToyDatasetInMemory<T> ds;
    ds.train.images = Tensor<T>({cfg.classes * n_train, 3, cfg.image_size, cfg.image_size});
    ds.gallery.images = Tensor<T>({cfg.classes * n_gallery, 3, cfg.image_size, cfg.image_size});
    ds.query.images = Tensor<T>({cfg.classes * n_query, 3, cfg.image_size, cfg.image_size});
    int it = 0, ig = 0, iq = 0;
    char name[64];
    for (int c = 0; c < cfg.classes; ++c)
        for (int i = 0; i < cfg.per_class; ++i) {
            Tensor<T> img = render_toy_image<T>(c, i, cfg.seed, cfg.image_size);
            std::snprintf(name, sizeof(name), "images/c%d_%04d.ppm", c, i);
            const std::string label = std::to_string(c);
            if (i < n_train) {
                set_batch_image(ds.train.images, it, img);
                ds.train.ids.push_back(name);
                ds.train.labels.push_back(label);
                ds.train_labels.push_back(c);
                ++it;
            } else if (i < n_train + n_gallery) {
                set_batch_image(ds.gallery.images, ig, img);
                ds.gallery.ids.push_back(name);
                ds.gallery.labels.push_back(label);
                ++ig;
            } else {
                set_batch_image(ds.query.images, iq, img);
                ds.query.ids.push_back(name);
                ds.query.labels.push_back(label);
                ++iq;
            }
        }
    return ds;
}

}  // namespace advret
