#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advret/core/errors.hpp"
#include "advret/data/image_io.hpp"
#include "advret/eval/harness.hpp"

namespace advret {

inline nlohmann::json eval_report_json(const EvalReport& r) {
    nlohmann::json j;
    j["attack"] = r.attack;
    j["map"] = r.map;
    nlohmann::json cmc_obj = nlohmann::json::object();
    for (const auto& [k, v] : r.cmc_at) cmc_obj[std::to_string(k)] = v;
    j["cmc"] = cmc_obj;
    j["gallery_size"] = r.gallery_size;
    j["query_count"] = r.query_count;
    j["noise"] = {{"rms_mean", r.noise_rms_mean}, {"linf", r.noise_linf}};
    if (r.attack == "gaussian")
        j["gaussian_match"] = {{"target_rms_mean", r.gaussian_target_rms_mean},
                               {"achieved_rms_mean", r.gaussian_achieved_rms_mean}};
    j["fingerprints"] = {{"index", r.index_fingerprint}, {"generator", r.generator_fingerprint}};
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / ("eval_" + r.attack + ".json"), std::ios::trunc);
        if (!out) throw IoError("cannot write report in " + dir.string());
        out << eval_report_json(r).dump(2) << "\n";
    }
    {
        std::ofstream out(dir / ("per_query_" + r.attack + ".csv"), std::ios::trunc);
        if (!out) throw IoError("cannot write per-query table in " + dir.string());
        out << "id,label,ap,first_hit_rank\n";
        char buf[512];
        for (const auto& pq : r.per_query) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%d\n", pq.id.c_str(), pq.label.c_str(), pq.ap,
                          pq.first_hit_rank);
            out << buf;
        }
    }
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.attack = j.at("attack").get<std::string>();
    r.map = j.at("map").get<double>();
    for (const auto& [k, v] : j.at("cmc").items()) r.cmc_at[std::stoi(k)] = v.get<double>();
    r.gallery_size = j.at("gallery_size").get<int>();
    r.query_count = j.at("query_count").get<int>();
    r.noise_rms_mean = j.at("noise").at("rms_mean").get<double>();
    r.noise_linf = j.at("noise").at("linf").get<double>();
    if (j.contains("gaussian_match")) {
        r.gaussian_target_rms_mean = j["gaussian_match"].at("target_rms_mean").get<double>();
        r.gaussian_achieved_rms_mean = j["gaussian_match"].at("achieved_rms_mean").get<double>();
    }
    r.index_fingerprint = j.at("fingerprints").at("index").get<std::string>();
    r.generator_fingerprint = j.at("fingerprints").at("generator").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
}

inline nlohmann::json transfer_matrix_json(const TransferMatrix& m) {
    nlohmann::json j;
    j["rows"] = m.row_ids;
    j["targets"] = m.target_ids;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& row : m.map_cells) {
        nlohmann::json jr = nlohmann::json::array();
        for (double v : row) {
            if (std::isnan(v))
                jr.push_back(nullptr);
            else
                jr.push_back(v);
        }
        cells.push_back(jr);
    }
    j["map"] = cells;
    j["gaps"] = m.gaps;
    return j;
}

inline void write_transfer(const std::filesystem::path& dir, const TransferMatrix& m) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "transfer.json", std::ios::trunc);
        out << transfer_matrix_json(m).dump(2) << "\n";
    }
    std::ofstream out(dir / "transfer.csv", std::ios::trunc);
    out << "perturbations_from";
    for (const auto& t : m.target_ids) out << "," << t;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < m.row_ids.size(); ++i) {
        out << m.row_ids[i];
        for (double v : m.map_cells[i]) {
            if (std::isnan(v)) {
                out << ",-";
            } else {
                std::snprintf(buf, sizeof(buf), ",%.4f", v);
                out << buf;
            }
        }
        out << "\n";
    }
}

inline std::string render_transfer_table(const TransferMatrix& m) {
    std::string s = "perturbations from      ";
    char buf[128];
    for (const auto& t : m.target_ids) {
        std::snprintf(buf, sizeof(buf), "%14s", t.c_str());
        s += buf;
    }
    s += "\n";
    for (std::size_t i = 0; i < m.row_ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%-24s", m.row_ids[i].c_str());
        s += buf;
        for (double v : m.map_cells[i]) {
            if (std::isnan(v))
                std::snprintf(buf, sizeof(buf), "%14s", "-");
            else
                std::snprintf(buf, sizeof(buf), "%14.4f", v);
            s += buf;
        }
        s += "\n";
    }
    if (!m.gaps.empty()) {
        s += "gaps:\n";
        for (const auto& g : m.gaps) s += "  " + g + "\n";
    }
    return s;
}

// Query grid: original | amplified perturbation | adversarial | top-5
// results framed green (correct) or red (incorrect).
template <class T>
void write_query_grid(const std::filesystem::path& path, const Tensor<T>& original, const Tensor<T>& delta,
                      const Tensor<T>& adversarial, const std::vector<Tensor<T>>& results,
                      const std::vector<bool>& correct, double epsilon) {
    const int h = original.dim(1), w = original.dim(2);
    const int margin = 2, border = 2;
    const int tiles = 3 + static_cast<int>(results.size());
    Tensor<T> canvas({3, h + 2 * border, tiles * (w + 2 * border + margin)});
    canvas.fill(T(1));

    auto blit = [&](const Tensor<T>& img, int tile, double br, double bg, double bb) {
        const int x0 = tile * (w + 2 * border + margin);
        for (int yy = 0; yy < h + 2 * border; ++yy)
            for (int xx = 0; xx < w + 2 * border; ++xx) {
                const bool inside = yy >= border && yy < h + border && xx >= border && xx < w + border;
                for (int ci = 0; ci < 3; ++ci) {
                    const double bc = ci == 0 ? br : (ci == 1 ? bg : bb);
                    const double v = inside
                        ? static_cast<double>(img[(static_cast<std::int64_t>(ci) * h + (yy - border)) * w + (xx - border)])
                        : bc;
                    canvas[(static_cast<std::int64_t>(ci) * canvas.dim(1) + yy) * canvas.dim(2) + x0 + xx] =
                        static_cast<T>(v);
                }
            }
    };

    blit(original, 0, 0.6, 0.6, 0.6);
    Tensor<T> amplified(delta.dims());
    for (std::int64_t i = 0; i < delta.size(); ++i)
        amplified[i] = static_cast<T>(std::clamp(0.5 + static_cast<double>(delta[i]) * (0.5 / epsilon), 0.0, 1.0));
    blit(amplified, 1, 0.6, 0.6, 0.6);
    blit(adversarial, 2, 0.6, 0.6, 0.6);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const bool ok = i < correct.size() && correct[i];
        blit(results[i], 3 + static_cast<int>(i), ok ? 0.0 : 0.85, ok ? 0.7 : 0.0, 0.05);
    }
    save_ppm(path, canvas);
}

}  // namespace advret
