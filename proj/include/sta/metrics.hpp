#pragma once

#include <span>
#include <vector>

#include "sta/dataworld.hpp"
#include "sta/nets.hpp"

namespace sta {

// One scored candidate: an ordered pair of boxes plus a relation.
struct Prediction {
    Box subject;
    Box object;
    size_t relation = 0;
    double confidence = 0.0;
};

struct GroundTruth {
    Box subject;
    Box object;
    size_t relation = 0;
};

// Ground-truth triplets per scene; the zero-shot variant keeps only triplets
// whose (subject category, relation, object category) composition is held out.
std::vector<std::vector<GroundTruth>> truths_of(std::span<const Scene> scenes);
std::vector<std::vector<GroundTruth>> holdout_truths_of(std::span<const Scene> scenes,
                                                        std::span<const Composition> holdouts);

// Scores every ordered object pair against every relation with the bundle's
// classifier; `use_oa` selects projected or raw pooled features. Scenes with
// fewer than two objects yield no predictions.
std::vector<Prediction> predict_scene(const ModelBundle& bundle, bool use_oa, const Scene& scene);

// Microaveraged Recall@K: fraction of ground-truth triplets that appear among
// each scene's K most confident predictions (ties broken by insertion order;
// boxes must match exactly). Scenes without ground truth are excluded; if no
// scene has any, the metric is undefined.
double recall_at_k(std::span<const std::vector<Prediction>> predictions,
                   std::span<const std::vector<GroundTruth>> truths, size_t k);

struct RelationAccuracy {
    size_t relation = 0;
    size_t correct = 0;
    size_t total = 0;
    double accuracy = 0.0;  // zero when the relation never occurs
};

// Top-1 accuracy on ground-truth pairs, split by true relation. Returns one
// entry per relation id of the bundle's classifier.
std::vector<RelationAccuracy> per_relation_accuracy(const ModelBundle& bundle, bool use_oa,
                                                    std::span<const Scene> scenes);

// Applies the bundle's projection to a raw map outside any training graph.
FeatureMap apply_oa(const ModelBundle& bundle, const FeatureMap& map);

// Overlap coefficient between two feature populations: rows of `a` and `b`
// are samples, columns are feature dimensions. Both populations are projected
// onto the direction separating their means — the axis along which the two
// distributions differ most to first order — then binned over the shared
// value range into `bins` equal cells, and the overlap of the two normalized
// histograms (sum of per-cell minima) is returned. 1 means indistinguishable
// along that axis, 0 disjoint supports. Populations with identical means
// count as fully overlapping. Undefined (MetricError) on empty populations.
double overlap_ratio(const Tensor& a, const Tensor& b, size_t bins);

// Distribution overlap between subject features and object features over all
// ground-truth pairs of all scenes. Projected: subject features are passed
// through the projection and the subject->object transform, objects through
// the projection alone — the populations the domain discriminator compares.
// Raw: pooled backbone features of both sides, untransformed.
double mean_overlap_ratio(const ModelBundle& bundle, std::span<const Scene> scenes,
                          bool projected);

// Histogram resolution used by mean_overlap_ratio.
inline constexpr size_t kOverlapBins = 16;

// How often the domain transform recovers a subject's true partner: for every
// subject of every scene with at least two candidate objects, transform the
// subject's pooled feature and find its nearest neighbor (L2) among all other
// objects; count it a success when that neighbor is one of the subject's
// ground-truth partners.
double alignment_recovery(const ModelBundle& bundle, bool use_oa, std::span<const Scene> scenes);

// Expected success rate of uniform random matching on the same evaluation set.
double alignment_recovery_baseline(std::span<const Scene> scenes);

struct BiasPoint {
    size_t relation = 0;
    double bias = 0.0;  // instances per distinct category pair
    size_t count = 0;   // ground-truth instances
};

// Dataset bias per relation (instance count over the number of distinct
// subject/object category pairs it appears with), ascending by bias.
std::vector<BiasPoint> relation_bias(std::span<const Scene> scenes, size_t relations);

}  // namespace sta
