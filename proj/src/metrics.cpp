#include "sta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "sta/errors.hpp"

namespace sta {

std::vector<std::vector<GroundTruth>> truths_of(std::span<const Scene> scenes) {
    std::vector<std::vector<GroundTruth>> out;
    out.reserve(scenes.size());
    for (const Scene& s : scenes) {
        std::vector<GroundTruth> g;
        g.reserve(s.triplets.size());
        for (const Triplet& t : s.triplets) {
            g.push_back(GroundTruth{s.objects[t.subject].box, s.objects[t.object].box, t.relation});
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::vector<GroundTruth>> holdout_truths_of(std::span<const Scene> scenes,
                                                        std::span<const Composition> holdouts) {
    std::vector<std::vector<GroundTruth>> out;
    out.reserve(scenes.size());
    for (const Scene& s : scenes) {
        std::vector<GroundTruth> g;
        for (const Triplet& t : s.triplets) {
            Composition c{s.objects[t.subject].category, t.relation,
                          s.objects[t.object].category};
            if (std::find(holdouts.begin(), holdouts.end(), c) != holdouts.end()) {
                g.push_back(
                    GroundTruth{s.objects[t.subject].box, s.objects[t.object].box, t.relation});
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

namespace {

// Pooled features of the given boxes, optionally through the projection; a
// throwaway graph is used so training and evaluation share one code path.
Tensor pooled_features(const ModelBundle& bundle, bool use_oa, const FeatureMap& map,
                       std::span<const Box> boxes) {
    Graph g;
    ParamContext ctx(g);
    MapVar rows = use_oa ? oa_forward(ctx, bundle.oa, map, bundle.config.leaky_slope)
                         : lift_map(ctx, map);
    return roi_pool(rows, boxes, bundle.config.pool_size).value();
}

Tensor score_pairs(const ModelBundle& bundle, const Tensor& subj, const Tensor& obj) {
    Graph g;
    ParamContext ctx(g);
    Var scores = relation_scores(ctx, bundle.classifier, g.constant_ref(subj),
                                 g.constant_ref(obj), bundle.config.leaky_slope);
    return scores.value();
}

}  // namespace

std::vector<Prediction> predict_scene(const ModelBundle& bundle, bool use_oa, const Scene& scene) {
    size_t n = scene.objects.size();
    if (n < 2) return {};
    std::vector<Box> subjects, objects;
    subjects.reserve(n * (n - 1));
    objects.reserve(n * (n - 1));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            subjects.push_back(scene.objects[i].box);
            objects.push_back(scene.objects[j].box);
        }
    }
    Tensor subj = pooled_features(bundle, use_oa, scene.map, subjects);
    Tensor obj = pooled_features(bundle, use_oa, scene.map, objects);
    Tensor scores = score_pairs(bundle, subj, obj);

    size_t relations = bundle.config.relations;
    std::vector<Prediction> preds;
    preds.reserve(subjects.size() * relations);
    for (size_t p = 0; p < subjects.size(); ++p) {
        for (size_t r = 0; r < relations; ++r) {
            preds.push_back(Prediction{subjects[p], objects[p], r, scores.data[p * relations + r]});
        }
    }
    return preds;
}

double recall_at_k(std::span<const std::vector<Prediction>> predictions,
                   std::span<const std::vector<GroundTruth>> truths, size_t k) {
    if (predictions.size() != truths.size()) {
        throw ContractError("recall_at_k: " + std::to_string(predictions.size()) +
                            " prediction lists for " + std::to_string(truths.size()) +
                            " truth lists");
    }
    if (k == 0) throw ContractError("recall_at_k: k must be positive");

    size_t total_truths = 0;
    size_t total_hits = 0;
    for (size_t s = 0; s < truths.size(); ++s) {
        if (truths[s].empty()) continue;  // scenes without ground truth carry no signal
        total_truths += truths[s].size();

        // Stable sort keeps insertion order among equal confidences.
        std::vector<size_t> order(predictions[s].size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return predictions[s][a].confidence > predictions[s][b].confidence;
        });
        size_t top = std::min(k, order.size());
        for (const GroundTruth& t : truths[s]) {
            for (size_t i = 0; i < top; ++i) {
                const Prediction& p = predictions[s][order[i]];
                if (p.relation == t.relation && p.subject == t.subject && p.object == t.object) {
                    ++total_hits;
                    break;
                }
            }
        }
    }
    if (total_truths == 0) {
        throw MetricError("recall_at_k is undefined: no scene has any ground truth");
    }
    return static_cast<double>(total_hits) / static_cast<double>(total_truths);
}

std::vector<RelationAccuracy> per_relation_accuracy(const ModelBundle& bundle, bool use_oa,
                                                    std::span<const Scene> scenes) {
    size_t relations = bundle.config.relations;
    std::vector<RelationAccuracy> acc(relations);
    for (size_t r = 0; r < relations; ++r) acc[r].relation = r;

    for (const Scene& scene : scenes) {
        if (scene.triplets.empty()) continue;
        std::vector<Box> subjects, objects;
        for (const Triplet& t : scene.triplets) {
            subjects.push_back(scene.objects[t.subject].box);
            objects.push_back(scene.objects[t.object].box);
        }
        Tensor subj = pooled_features(bundle, use_oa, scene.map, subjects);
        Tensor obj = pooled_features(bundle, use_oa, scene.map, objects);
        Tensor scores = score_pairs(bundle, subj, obj);
        for (size_t p = 0; p < scene.triplets.size(); ++p) {
            size_t truth = scene.triplets[p].relation;
            if (truth >= relations) {
                throw MetricError("scene " + std::to_string(scene.id) + ": relation " +
                                  std::to_string(truth) + " out of range");
            }
            size_t best = 0;
            for (size_t r = 1; r < relations; ++r) {
                if (scores.data[p * relations + r] > scores.data[p * relations + best]) best = r;
            }
            ++acc[truth].total;
            if (best == truth) ++acc[truth].correct;
        }
    }
    for (RelationAccuracy& a : acc) {
        a.accuracy = a.total == 0
                         ? 0.0
                         : static_cast<double>(a.correct) / static_cast<double>(a.total);
    }
    return acc;
}

FeatureMap apply_oa(const ModelBundle& bundle, const FeatureMap& map) {
    Graph g;
    ParamContext ctx(g);
    MapVar rows = oa_forward(ctx, bundle.oa, map, bundle.config.leaky_slope);
    FeatureMap out;
    out.height = rows.height;
    out.width = rows.width;
    out.channels = rows.channels;
    out.data = rows.rows.value();
    return out;
}

double overlap_ratio(const Tensor& a, const Tensor& b, size_t bins) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1]) {
        throw ContractError("overlap_ratio expects [n, d] populations over the same d");
    }
    if (a.shape[0] == 0 || b.shape[0] == 0) {
        throw MetricError("overlap ratio is undefined: empty population");
    }
    if (bins == 0) throw ContractError("overlap_ratio: bins must be positive");

    size_t na = a.shape[0], nb = b.shape[0], d = a.shape[1];

    // Project both populations onto the direction separating their means;
    // that is the axis a first-moment-matching aligner collapses.
    std::vector<double> w(d, 0.0);
    for (size_t i = 0; i < na; ++i)
        for (size_t col = 0; col < d; ++col) w[col] += a.data[i * d + col] / na;
    for (size_t i = 0; i < nb; ++i)
        for (size_t col = 0; col < d; ++col) w[col] -= b.data[i * d + col] / nb;
    double norm = 0.0;
    for (double v : w) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 1.0;  // identical means: nothing separates the populations
    for (double& v : w) v /= norm;

    auto project = [&](const Tensor& t, size_t row) {
        double p = 0.0;
        for (size_t col = 0; col < d; ++col) p += t.data[row * d + col] * w[col];
        return p;
    };
    std::vector<double> pa(na), pb(nb);
    for (size_t i = 0; i < na; ++i) pa[i] = project(a, i);
    for (size_t i = 0; i < nb; ++i) pb[i] = project(b, i);

    double lo = std::min(*std::min_element(pa.begin(), pa.end()),
                         *std::min_element(pb.begin(), pb.end()));
    double hi = std::max(*std::max_element(pa.begin(), pa.end()),
                         *std::max_element(pb.begin(), pb.end()));
    if (hi <= lo) return 1.0;  // every projection coincides

    std::vector<double> ha(bins, 0.0), hb(bins, 0.0);
    double scale = static_cast<double>(bins) / (hi - lo);
    auto cell = [&](double v) { return std::min(bins - 1, static_cast<size_t>((v - lo) * scale)); };
    for (double v : pa) ha[cell(v)] += 1.0 / na;
    for (double v : pb) hb[cell(v)] += 1.0 / nb;
    double total = 0.0;
    for (size_t k = 0; k < bins; ++k) total += std::min(ha[k], hb[k]);
    return total;
}

namespace {

// Applies the A->B transform to a feature batch outside any training graph.
Tensor transform_plain(const ModelBundle& bundle, const Tensor& batch) {
    Graph g;
    ParamContext ctx(g);
    Var out = transform_forward(ctx, bundle.f_ab, g.constant_ref(batch),
                                bundle.config.leaky_slope);
    return out.value();
}

// Stacks two [n_i, d] batches row-wise.
Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
    Tensor out = Tensor::zeros({top.shape[0] + bottom.shape[0], top.shape[1]});
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
    return out;
}

}  // namespace

double mean_overlap_ratio(const ModelBundle& bundle, std::span<const Scene> scenes,
                          bool projected) {
    Tensor subj_all, obj_all;
    bool any = false;
    for (const Scene& scene : scenes) {
        if (scene.triplets.empty()) continue;
        std::vector<Box> subjects, objects;
        for (const Triplet& t : scene.triplets) {
            subjects.push_back(scene.objects[t.subject].box);
            objects.push_back(scene.objects[t.object].box);
        }
        Tensor subj = pooled_features(bundle, projected, scene.map, subjects);
        Tensor obj = pooled_features(bundle, projected, scene.map, objects);
        if (projected) subj = transform_plain(bundle, subj);
        if (!any) {
            subj_all = std::move(subj);
            obj_all = std::move(obj);
            any = true;
        } else {
            subj_all = stack_rows(subj_all, subj);
            obj_all = stack_rows(obj_all, obj);
        }
    }
    if (!any) throw MetricError("mean overlap ratio is undefined: no ground-truth pairs");
    return overlap_ratio(subj_all, obj_all, kOverlapBins);
}

namespace {

struct AlignmentCase {
    size_t scene_index;
    size_t subject;                // object index within the scene
    std::vector<size_t> partners;  // ground-truth object indices
};

std::vector<AlignmentCase> alignment_cases(std::span<const Scene> scenes) {
    std::vector<AlignmentCase> cases;
    for (size_t si = 0; si < scenes.size(); ++si) {
        const Scene& scene = scenes[si];
        if (scene.objects.size() < 3) continue;  // fewer than two candidates
        std::map<size_t, std::set<size_t>> partners;
        for (const Triplet& t : scene.triplets) partners[t.subject].insert(t.object);
        for (auto& [subject, objs] : partners) {
            AlignmentCase c;
            c.scene_index = si;
            c.subject = subject;
            c.partners.assign(objs.begin(), objs.end());
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

}  // namespace

double alignment_recovery(const ModelBundle& bundle, bool use_oa, std::span<const Scene> scenes) {
    std::vector<AlignmentCase> cases = alignment_cases(scenes);
    if (cases.empty()) {
        throw MetricError("alignment recovery is undefined: no scene offers two candidates");
    }

    size_t hits = 0;
    size_t last_scene = static_cast<size_t>(-1);
    Tensor features;  // pooled features of every object in the current scene
    Tensor mapped;    // transformed features, aligned by row
    for (const AlignmentCase& c : cases) {
        const Scene& scene = scenes[c.scene_index];
        if (c.scene_index != last_scene) {
            std::vector<Box> boxes;
            boxes.reserve(scene.objects.size());
            for (const SceneObject& o : scene.objects) boxes.push_back(o.box);
            features = pooled_features(bundle, use_oa, scene.map, boxes);
            mapped = transform_plain(bundle, features);
            last_scene = c.scene_index;
        }
        size_t d = features.shape[1];
        const double* query = &mapped.data[c.subject * d];
        double best = std::numeric_limits<double>::infinity();
        size_t best_j = 0;
        for (size_t j = 0; j < scene.objects.size(); ++j) {
            if (j == c.subject) continue;
            const double* cand = &features.data[j * d];
            double dist = 0.0;
            for (size_t l = 0; l < d; ++l) {
                double diff = query[l] - cand[l];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        if (std::find(c.partners.begin(), c.partners.end(), best_j) != c.partners.end()) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(cases.size());
}

double alignment_recovery_baseline(std::span<const Scene> scenes) {
    std::vector<AlignmentCase> cases = alignment_cases(scenes);
    if (cases.empty()) {
        throw MetricError("alignment recovery is undefined: no scene offers two candidates");
    }
    double expected = 0.0;
    for (const AlignmentCase& c : cases) {
        double candidates = static_cast<double>(scenes[c.scene_index].objects.size() - 1);
        expected += static_cast<double>(c.partners.size()) / candidates;
    }
    return expected / static_cast<double>(cases.size());
}

std::vector<BiasPoint> relation_bias(std::span<const Scene> scenes, size_t relations) {
    std::vector<size_t> counts(relations, 0);
    std::vector<std::set<std::pair<size_t, size_t>>> pairs(relations);
    for (const Scene& scene : scenes) {
        for (const Triplet& t : scene.triplets) {
            if (t.relation >= relations) {
                throw MetricError("relation " + std::to_string(t.relation) + " out of range");
            }
            ++counts[t.relation];
            pairs[t.relation].insert(
                {scene.objects[t.subject].category, scene.objects[t.object].category});
        }
    }
    std::vector<BiasPoint> out;
    out.reserve(relations);
    for (size_t r = 0; r < relations; ++r) {
        BiasPoint p;
        p.relation = r;
        p.count = counts[r];
        p.bias = pairs[r].empty()
                     ? 0.0
                     : static_cast<double>(counts[r]) / static_cast<double>(pairs[r].size());
        out.push_back(p);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const BiasPoint& a, const BiasPoint& b) { return a.bias < b.bias; });
    return out;
}

}  // namespace sta
