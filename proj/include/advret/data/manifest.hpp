#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "advret/core/errors.hpp"
#include "advret/data/image_io.hpp"

namespace advret {

inline const char* kSplitTrain = "train";
inline const char* kSplitQuery = "query";
inline const char* kSplitGallery = "gallery";

struct ManifestRow {
    std::string path;   // relative to the manifest's directory
    std::string label;  // may be empty for train rows (unsupervised pool)
    std::string split;  // train | query | gallery
};

// Delimited text table with a header row: path,label,split.
struct DatasetManifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRow> rows;

    static DatasetManifest load(const std::filesystem::path& manifest_path) {
        std::ifstream in(manifest_path);
        if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
        DatasetManifest m;
        m.base_dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : ".";
        std::string line;
        if (!std::getline(in, line)) throw IoError("empty manifest: " + manifest_path.string());
        if (trim(line) != "path,label,split")
            throw IoError("manifest must start with header 'path,label,split': " + manifest_path.string());
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string t = trim(line);
            if (t.empty()) continue;
            const auto c1 = t.find(',');
            const auto c2 = t.find(',', c1 == std::string::npos ? c1 : c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos || t.find(',', c2 + 1) != std::string::npos)
                throw IoError("manifest line " + std::to_string(line_no) + " must have exactly 3 fields");
            ManifestRow row{trim(t.substr(0, c1)), trim(t.substr(c1 + 1, c2 - c1 - 1)), trim(t.substr(c2 + 1))};
            if (row.path.empty()) throw IoError("manifest line " + std::to_string(line_no) + " has an empty path");
            m.rows.push_back(std::move(row));
        }
        return m;
    }

    void validate(bool check_paths = true) const {
        std::set<std::string> gallery_labels;
        for (const auto& r : rows) {
            if (r.split != kSplitTrain && r.split != kSplitQuery && r.split != kSplitGallery)
                throw ConfigError("manifest: unknown split '" + r.split + "' for " + r.path);
            if (r.split != kSplitTrain && r.label.empty())
                throw ConfigError("manifest: " + std::string(r.split) + " row '" + r.path + "' must carry a label");
            if (r.split == kSplitGallery) gallery_labels.insert(r.label);
        }
        for (const auto& r : rows)
            if (r.split == kSplitQuery && !gallery_labels.count(r.label))
                throw ConfigError("manifest: query label '" + r.label + "' has no gallery item");
        if (check_paths)
            for (const auto& r : rows)
                if (!std::filesystem::exists(base_dir / r.path))
                    throw ConfigError("manifest: missing image file '" + (base_dir / r.path).string() + "'");
    }

    std::size_t count(const std::string& split) const {
        return static_cast<std::size_t>(
            std::count_if(rows.begin(), rows.end(), [&](const ManifestRow& r) { return r.split == split; }));
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
};

// One split loaded into memory: an image batch plus aligned ids/labels.
template <class T>
struct LoadedSplit {
    Tensor<T> images;  // [n,3,s,s]
    std::vector<std::string> ids;
    std::vector<std::string> labels;

    int count() const { return images.empty() ? 0 : images.n(); }
};

template <class T>
LoadedSplit<T> load_split(const DatasetManifest& manifest, const std::string& split, int image_size) {
    std::vector<const ManifestRow*> sel;
    for (const auto& r : manifest.rows)
        if (r.split == split) sel.push_back(&r);
    LoadedSplit<T> out;
    if (sel.empty()) return out;
    out.images = Tensor<T>({static_cast<int>(sel.size()), 3, image_size, image_size});
    for (std::size_t i = 0; i < sel.size(); ++i) {
        Tensor<T> img = resize_bilinear(load_ppm<T>(manifest.base_dir / sel[i]->path), image_size);
        set_batch_image(out.images, static_cast<int>(i), img);
        out.ids.push_back(sel[i]->path);
        out.labels.push_back(sel[i]->label);
    }
    return out;
}

}  // namespace advret
