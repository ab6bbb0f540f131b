#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "advret/attack/perturbation.hpp"
#include "advret/core/errors.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/data/manifest.hpp"
#include "advret/nn/generator.hpp"
#include "advret/target/target_model.hpp"

namespace advret {

template <class T>
struct GalleryIndex {
    std::vector<std::string> ids;
    std::vector<std::string> labels;
    Tensor<T> features;       // [n, dim]
    std::string fingerprint;  // of the target that produced the rows

    int size() const { return features.empty() ? 0 : features.rows(); }
};

template <class T>
GalleryIndex<T> build_index(const TargetModel<T>& target, const LoadedSplit<T>& gallery, int embed_batch = 64) {
    if (gallery.count() == 0) throw ConfigError("build_index: empty gallery");
    GalleryIndex<T> index;
    index.ids = gallery.ids;
    index.labels = gallery.labels;
    index.fingerprint = target.fingerprint();
    const int N = gallery.count();
    for (int lo = 0; lo < N; lo += embed_batch) {
        const int hi = std::min(N, lo + embed_batch);
        Tensor<T> chunk({hi - lo, 3, gallery.images.h(), gallery.images.w()});
        std::copy_n(gallery.images.data() + gallery.images.offset4(lo, 0, 0, 0), chunk.size(), chunk.data());
        Tensor<T> f = target.embed(chunk);
        if (index.features.empty()) index.features = Tensor<T>({N, f.cols()});
        std::copy_n(f.data(), f.size(), index.features.data() + static_cast<std::int64_t>(lo) * f.cols());
    }
    if (!index.features.all_finite()) throw DomainError("build_index: non-finite gallery features");
    return index;
}

// Gallery row order by ascending distance; ties by ascending id; the query's
// own id (if present) excluded. Fingerprints guard against ranking features
// from one target against an index built by another.
template <class T>
std::vector<int> rank_gallery(const GalleryIndex<T>& index, const T* query_feature, int dim, Metric metric,
                              const std::string& exclude_id, const std::string& query_fingerprint) {
    if (query_fingerprint != index.fingerprint)
        throw ContaminationError("query features fingerprint " + query_fingerprint +
                                 " does not match index fingerprint " + index.fingerprint);
    if (dim != index.features.cols()) throw ShapeError("rank: feature dimension mismatch");
    std::vector<std::pair<double, int>> order;
    order.reserve(static_cast<std::size_t>(index.size()));
    for (int i = 0; i < index.size(); ++i) {
        if (!exclude_id.empty() && index.ids[static_cast<std::size_t>(i)] == exclude_id) continue;
        order.emplace_back(
            distance(query_feature, index.features.data() + static_cast<std::int64_t>(i) * dim, dim, metric), i);
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return index.ids[static_cast<std::size_t>(a.second)] < index.ids[static_cast<std::size_t>(b.second)];
    });
    std::vector<int> out;
    out.reserve(order.size());
    for (const auto& [d, i] : order) out.push_back(i);
    return out;
}

// AP = (1/R) * sum over hit positions k of precision@k.
inline double average_precision(const std::vector<int>& ranked_relevance, int total_relevant) {
    if (total_relevant < 1) throw DomainError("average_precision: need at least one relevant item");
    double ap = 0.0;
    int hits = 0;
    for (std::size_t k = 0; k < ranked_relevance.size(); ++k)
        if (ranked_relevance[k]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    if (hits > total_relevant) throw DomainError("average_precision: more hits than relevant items");
    return ap / static_cast<double>(total_relevant);
}

// Fraction of queries whose first hit lands at rank <= k, for each k.
inline std::map<int, double> cmc(const std::vector<int>& first_hit_ranks, const std::vector<int>& ks) {
    if (first_hit_ranks.empty()) throw DomainError("cmc: empty query set");
    std::map<int, double> out;
    for (int k : ks) {
        if (k < 1) throw DomainError("cmc: ranks are 1-based");
        int c = 0;
        for (int r : first_hit_ranks) c += (r >= 1 && r <= k);
        out[k] = static_cast<double>(c) / static_cast<double>(first_hit_ranks.size());
    }
    return out;
}

struct GaussianMatchStats {
    std::vector<double> target_rms;    // RMS of the generator perturbation, per image
    std::vector<double> achieved_rms;  // RMS of the sampled noise before clipping
};

// Gaussian baseline at the same noise level: zero-mean noise with per-image
// std equal to RMS(delta), clipped to [-eps, eps], then composed like the
// attack. Matching happens before clipping; the achieved level is recorded.
template <class T>
Tensor<T> matched_gaussian(const Tensor<T>& x, const Tensor<T>& delta, double epsilon, Rng& rng,
                           GaussianMatchStats* stats = nullptr) {
    x.require_same_shape(delta);
    const int N = x.n();
    const std::int64_t per = x.size() / N;
    Tensor<T> noise(x.dims());
    const std::vector<double> level = per_image_rms(delta);
    if (stats) {
        stats->target_rms = level;
        stats->achieved_rms.assign(static_cast<std::size_t>(N), 0.0);
    }
    for (int n = 0; n < N; ++n) {
        const double sd = level[static_cast<std::size_t>(n)];
        if (sd <= 0.0) continue;  // zero-level perturbation: x returned unchanged
        double acc = 0.0;
        T* dst = noise.data() + static_cast<std::int64_t>(n) * per;
        for (std::int64_t i = 0; i < per; ++i) {
            const double v = rng.normal(0.0, sd);
            acc += v * v;
            dst[i] = static_cast<T>(std::clamp(v, -epsilon, epsilon));
        }
        if (stats) stats->achieved_rms[static_cast<std::size_t>(n)] = std::sqrt(acc / static_cast<double>(per));
    }
    return compose_adversarial(x, noise);
}

enum class AttackMode { None, Generator, Gaussian };

inline std::string attack_mode_name(AttackMode m) {
    switch (m) {
        case AttackMode::None: return "none";
        case AttackMode::Generator: return "generator";
        case AttackMode::Gaussian: return "gaussian";
    }
    return "?";
}

inline AttackMode attack_mode_from_name(const std::string& s) {
    if (s == "none") return AttackMode::None;
    if (s == "generator") return AttackMode::Generator;
    if (s == "gaussian") return AttackMode::Gaussian;
    throw ConfigError("unknown attack mode '" + s + "' (expected none|generator|gaussian)");
}

struct PerQueryResult {
    std::string id;
    std::string label;
    double ap = 0.0;
    int first_hit_rank = 0;  // 1-based
};

struct EvalReport {
    std::string attack;
    double map = 0.0;
    std::map<int, double> cmc_at;
    std::vector<PerQueryResult> per_query;
    // Noise statistics (attacked modes only).
    double noise_rms_mean = 0.0;
    double noise_linf = 0.0;
    double gaussian_target_rms_mean = 0.0;
    double gaussian_achieved_rms_mean = 0.0;
    std::string index_fingerprint;
    std::string generator_fingerprint;
    int gallery_size = 0;
    int query_count = 0;
    double wall_seconds = 0.0;
};

struct EvalOptions {
    std::vector<int> cmc_ks = {1, 5, 10};
    std::uint64_t gaussian_seed = 1234;
    int embed_batch = 64;
};

template <class T>
std::string generator_fingerprint(const Generator<T>& gen) {
    Fingerprint fp;
    for (const auto& e : gen.params().entries()) {
        fp.update(e.name);
        fp.update(e.value->data(), static_cast<std::size_t>(e.value->size()) * sizeof(T));
    }
    return fp.hex();
}

// Embeds (possibly perturbed) queries, ranks them against the index and
// aggregates mAP / CMC. The Gaussian mode derives its per-image noise level
// from the generator's perturbations for the same queries.
template <class T>
EvalReport evaluate(const TargetModel<T>& target, const LoadedSplit<T>& queries, const GalleryIndex<T>& index,
                    AttackMode mode, const std::type_identity_t<Generator<T>>* gen = nullptr,
                    const EvalOptions& opts = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    if (queries.count() == 0) throw ConfigError("evaluate: empty query set");
    if (target.fingerprint() != index.fingerprint)
        throw ContaminationError("evaluate: target fingerprint does not match the index");
    if (mode != AttackMode::None && !gen)
        throw ConfigError("evaluate: attacked modes need a trained generator");

    EvalReport report;
    report.attack = attack_mode_name(mode);
    report.index_fingerprint = index.fingerprint;
    report.gallery_size = index.size();
    report.query_count = queries.count();
    if (gen && mode != AttackMode::None) report.generator_fingerprint = generator_fingerprint(*gen);

    // Relevant gallery items per label (computed once).
    std::map<std::string, int> label_count;
    for (const auto& l : index.labels) ++label_count[l];

    Rng gaussian_rng = Rng::stream(opts.gaussian_seed, 0x6a55);
    const int N = queries.count();
    const int dim = index.features.cols();
    double noise_sq_acc = 0.0;
    std::int64_t noise_count = 0;
    double noise_linf = 0.0, target_rms_acc = 0.0, achieved_rms_acc = 0.0;
    std::vector<int> first_hits;
    first_hits.reserve(static_cast<std::size_t>(N));

    for (int lo = 0; lo < N; lo += opts.embed_batch) {
        const int hi = std::min(N, lo + opts.embed_batch);
        Tensor<T> x({hi - lo, 3, queries.images.h(), queries.images.w()});
        std::copy_n(queries.images.data() + queries.images.offset4(lo, 0, 0, 0), x.size(), x.data());

        Tensor<T> x_eval = x;
        if (mode != AttackMode::None) {
            Tensor<T> delta = clip_perturbation(gen->eval(x), gen->spec().epsilon);
            if (mode == AttackMode::Generator) {
                x_eval = compose_adversarial(x, delta);
                for (std::int64_t i = 0; i < delta.size(); ++i) {
                    noise_sq_acc += static_cast<double>(delta[i]) * static_cast<double>(delta[i]);
                    noise_linf = std::max(noise_linf, std::abs(static_cast<double>(delta[i])));
                }
                noise_count += delta.size();
            } else {
                GaussianMatchStats stats;
                x_eval = matched_gaussian(x, delta, gen->spec().epsilon, gaussian_rng, &stats);
                for (int i = 0; i < hi - lo; ++i) {
                    target_rms_acc += stats.target_rms[static_cast<std::size_t>(i)];
                    achieved_rms_acc += stats.achieved_rms[static_cast<std::size_t>(i)];
                }
                Tensor<T> applied = x_eval;
                applied -= x;
                for (std::int64_t i = 0; i < applied.size(); ++i) {
                    noise_sq_acc += static_cast<double>(applied[i]) * static_cast<double>(applied[i]);
                    noise_linf = std::max(noise_linf, std::abs(static_cast<double>(applied[i])));
                }
                noise_count += applied.size();
            }
        }

        Tensor<T> f = target.embed(x_eval);
        for (int i = 0; i < hi - lo; ++i) {
            const int qi = lo + i;
            const std::string& qid = queries.ids[static_cast<std::size_t>(qi)];
            const std::string& qlabel = queries.labels[static_cast<std::size_t>(qi)];
            const std::vector<int> ranked =
                rank_gallery(index, f.data() + static_cast<std::int64_t>(i) * dim, dim, target.metric(), qid,
                             target.fingerprint());
            int total_relevant = label_count.count(qlabel) ? label_count.at(qlabel) : 0;
            bool self_in_gallery = false;
            for (std::size_t g = 0; g < index.ids.size(); ++g)
                if (index.ids[g] == qid) {
                    self_in_gallery = true;
                    if (index.labels[g] == qlabel) --total_relevant;
                    break;
                }
            (void)self_in_gallery;
            if (total_relevant < 1)
                throw DomainError("evaluate: query label '" + qlabel + "' has no relevant gallery item after self-exclusion");
            std::vector<int> relevance(ranked.size(), 0);
            int first_hit = 0;
            for (std::size_t k = 0; k < ranked.size(); ++k) {
                relevance[k] = index.labels[static_cast<std::size_t>(ranked[k])] == qlabel;
                if (relevance[k] && first_hit == 0) first_hit = static_cast<int>(k + 1);
            }
            PerQueryResult pq;
            pq.id = qid;
            pq.label = qlabel;
            pq.ap = average_precision(relevance, total_relevant);
            pq.first_hit_rank = first_hit;
            report.per_query.push_back(std::move(pq));
            first_hits.push_back(first_hit);
        }
    }

    double ap_acc = 0.0;
    for (const auto& pq : report.per_query) ap_acc += pq.ap;
    report.map = ap_acc / static_cast<double>(report.per_query.size());
    report.cmc_at = cmc(first_hits, opts.cmc_ks);
    if (mode != AttackMode::None && noise_count > 0) {
        report.noise_rms_mean = std::sqrt(noise_sq_acc / static_cast<double>(noise_count));
        report.noise_linf = noise_linf;
    }
    if (mode == AttackMode::Gaussian) {
        report.gaussian_target_rms_mean = target_rms_acc / static_cast<double>(N);
        report.gaussian_achieved_rms_mean = achieved_rms_acc / static_cast<double>(N);
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

struct TransferMatrix {
    std::vector<std::string> row_ids;  // "no-attack" first, then generator ids
    std::vector<std::string> target_ids;
    std::vector<std::vector<double>> map_cells;  // NaN marks an evaluation gap
    std::vector<std::string> gaps;               // human-readable gap descriptions
};

// Cross-evaluation: cell (g, t) is the attacked mAP of target t under the
// generator trained against g; the first row is the unattacked baseline.
// Failures mark a gap and the run continues.
template <class T>
TransferMatrix transfer_evaluate(const std::vector<std::pair<std::string, const Generator<T>*>>& generators,
                                 const std::vector<std::pair<std::string, const TargetModel<T>*>>& targets,
                                 const LoadedSplit<T>& queries, const LoadedSplit<T>& gallery,
                                 const EvalOptions& opts = {}) {
    TransferMatrix m;
    m.row_ids.push_back("no-attack");
    for (const auto& [gid, g] : generators) m.row_ids.push_back(gid);
    for (const auto& [tid, t] : targets) m.target_ids.push_back(tid);
    m.map_cells.assign(m.row_ids.size(),
                       std::vector<double>(m.target_ids.size(), std::numeric_limits<double>::quiet_NaN()));

    for (std::size_t tj = 0; tj < targets.size(); ++tj) {
        const auto& [tid, target] = targets[tj];
        GalleryIndex<T> index;
        try {
            index = build_index(*target, gallery);
            m.map_cells[0][tj] = evaluate(*target, queries, index, AttackMode::None, nullptr, opts).map;
        } catch (const Error& e) {
            m.gaps.push_back("no-attack/" + tid + ": " + e.what());
            continue;
        }
        for (std::size_t gi = 0; gi < generators.size(); ++gi) {
            const auto& [gid, gen] = generators[gi];
            if (!gen) {
                m.gaps.push_back(gid + "/" + tid + ": generator unavailable");
                continue;
            }
            try {
                m.map_cells[gi + 1][tj] = evaluate(*target, queries, index, AttackMode::Generator, gen, opts).map;
            } catch (const Error& e) {
                m.gaps.push_back(gid + "/" + tid + ": " + e.what());
            }
        }
    }
    return m;
}

}  // namespace advret
