#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "sta/dataworld.hpp"
#include "sta/errors.hpp"
#include "sta/metrics.hpp"
#include "sta/nets.hpp"
#include "sta/rng.hpp"

using namespace sta;

namespace {

// Independent top-k recall oracle: repeatedly extract the highest-confidence
// remaining prediction (first occurrence wins ties), then scan for matches.
double recall_oracle(const std::vector<std::vector<Prediction>>& preds,
                     const std::vector<std::vector<GroundTruth>>& truths, size_t k) {
    size_t total = 0, hits = 0;
    for (size_t s = 0; s < truths.size(); ++s) {
        if (truths[s].empty()) continue;
        total += truths[s].size();

        std::vector<Prediction> pool = preds[s];
        std::vector<Prediction> top;
        for (size_t round = 0; round < k && !pool.empty(); ++round) {
            size_t best = 0;
            for (size_t i = 1; i < pool.size(); ++i) {
                if (pool[i].confidence > pool[best].confidence) best = i;
            }
            top.push_back(pool[best]);
            pool.erase(pool.begin() + static_cast<long>(best));
        }
        for (const GroundTruth& t : truths[s]) {
            for (const Prediction& p : top) {
                if (p.relation == t.relation && p.subject == t.subject && p.object == t.object) {
                    ++hits;
                    break;
                }
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

NetConfig probe_net() {
    NetConfig n;
    n.channels = 8;
    n.hidden = 16;
    n.transform_hidden = 8;
    n.pool_size = 2;
    n.relations = 4;
    return n;
}

// A scene whose map is pure iid noise, with `count` same-sized boxes on
// disjoint cells, so every object's pooled feature is an independent draw
// from one distribution (candidates are exchangeable).
Scene noise_scene(uint64_t id, size_t count, size_t channels, std::mt19937_64& rng) {
    Scene s;
    s.id = id;
    s.map = FeatureMap::zeros(24, 24, channels);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : s.map.data.data) v = gauss(rng);
    const Box slots[4] = {Box{0, 0, 6, 6}, Box{12, 0, 18, 6}, Box{0, 12, 6, 18},
                          Box{12, 12, 18, 18}};
    for (size_t i = 0; i < count; ++i) s.objects.push_back(SceneObject{slots[i], i % 2});
    return s;
}

}  // namespace

TEST_CASE("recall_at_k matches a brute-force oracle on randomized instances") {
    // [DERIVED] 100 random instances with deliberate confidence ties and a
    // shared box pool so exact matches occur; the closed-form oracle and the
    // implementation must agree to the last bit (both are ratios of the same
    // integer counts).
    auto rng = make_rng(2024, {1});
    std::uniform_int_distribution<size_t> nscenes(1, 4), npreds(0, 10), ntruths(0, 3);
    std::uniform_int_distribution<size_t> box_id(0, 3), rel(0, 3), kdist(1, 5);
    std::uniform_int_distribution<int> conf(1, 5);
    const Box pool[4] = {Box{0, 0, 2, 2}, Box{1, 1, 3, 3}, Box{2, 0, 4, 2}, Box{0, 2, 2, 4}};

    for (int instance = 0; instance < 100; ++instance) {
        size_t scenes = nscenes(rng);
        std::vector<std::vector<Prediction>> preds(scenes);
        std::vector<std::vector<GroundTruth>> truths(scenes);
        size_t total_truths = 0;
        for (size_t s = 0; s < scenes; ++s) {
            size_t np = npreds(rng), nt = ntruths(rng);
            for (size_t i = 0; i < np; ++i) {
                preds[s].push_back(Prediction{pool[box_id(rng)], pool[box_id(rng)], rel(rng),
                                              conf(rng) / 5.0});
            }
            for (size_t i = 0; i < nt; ++i) {
                truths[s].push_back(GroundTruth{pool[box_id(rng)], pool[box_id(rng)], rel(rng)});
            }
            total_truths += nt;
        }
        if (total_truths == 0) {
            truths[0].push_back(GroundTruth{pool[0], pool[1], 0});
        }
        size_t k = kdist(rng);
        CHECK(recall_at_k(preds, truths, k) == recall_oracle(preds, truths, k));
    }
}

TEST_CASE("recall_at_k edge semantics") {
    // [DERIVED] hand-worked case: two scenes, one with no truth (excluded).
    // Scene 0 truths: T1 hit at rank 1, T2's only match sits at rank 3.
    Box a{0, 0, 2, 2}, b{2, 2, 4, 4}, c{4, 4, 6, 6};
    std::vector<std::vector<Prediction>> preds(2);
    std::vector<std::vector<GroundTruth>> truths(2);
    preds[0] = {Prediction{a, b, 0, 0.9}, Prediction{a, c, 1, 0.8}, Prediction{b, c, 2, 0.7}};
    truths[0] = {GroundTruth{a, b, 0}, GroundTruth{b, c, 2}};
    preds[1] = {Prediction{a, b, 0, 1.0}};  // no truth: contributes nothing
    CHECK(recall_at_k(preds, truths, 1) == 0.5);
    CHECK(recall_at_k(preds, truths, 2) == 0.5);
    CHECK(recall_at_k(preds, truths, 3) == 1.0);
    CHECK(recall_at_k(preds, truths, 100) == 1.0);  // k beyond the list is fine

    // Ties break by insertion order: the earlier of two equal-confidence
    // predictions occupies the single k=1 slot.
    std::vector<std::vector<Prediction>> tied(1);
    std::vector<std::vector<GroundTruth>> tt(1);
    tied[0] = {Prediction{a, b, 0, 0.5}, Prediction{a, c, 1, 0.5}};
    tt[0] = {GroundTruth{a, c, 1}};
    CHECK(recall_at_k(tied, tt, 1) == 0.0);
    tied[0] = {Prediction{a, c, 1, 0.5}, Prediction{a, b, 0, 0.5}};
    CHECK(recall_at_k(tied, tt, 1) == 1.0);

    // A box or relation mismatch is not a hit.
    std::vector<std::vector<Prediction>> wrong(1);
    std::vector<std::vector<GroundTruth>> wt(1);
    wrong[0] = {Prediction{a, b, 1, 0.9}};
    wt[0] = {GroundTruth{a, b, 0}};
    CHECK(recall_at_k(wrong, wt, 5) == 0.0);

    // [TRIVIAL] contract and undefined cases.
    std::vector<std::vector<GroundTruth>> none(2);
    CHECK_THROWS_AS(recall_at_k(preds, none, 1), MetricError);
    CHECK_THROWS_AS(recall_at_k(preds, truths, 0), ContractError);
    std::vector<std::vector<GroundTruth>> mismatched(1);
    CHECK_THROWS_AS(recall_at_k(preds, mismatched, 1), ContractError);
}

TEST_CASE("ground-truth extraction and the holdout filter") {
    // [TRIVIAL] truths copy boxes and relations; the zero-shot filter keeps
    // exactly the held-out compositions.
    Scene s;
    s.id = 0;
    s.map = FeatureMap::zeros(8, 8, 8);
    s.objects = {SceneObject{Box{0, 0, 2, 2}, 1}, SceneObject{Box{2, 2, 4, 4}, 5},
                 SceneObject{Box{4, 4, 6, 6}, 4}};
    s.triplets = {Triplet{0, 1, 2}, Triplet{0, 2, 3}};
    std::vector<Scene> scenes = {s};

    auto t = truths_of(scenes);
    REQUIRE(t.size() == 1);
    REQUIRE(t[0].size() == 2);
    CHECK(t[0][0].subject == s.objects[0].box);
    CHECK(t[0][0].object == s.objects[1].box);
    CHECK(t[0][0].relation == 2);

    std::vector<Composition> holdouts = {Composition{1, 3, 4}};
    auto h = holdout_truths_of(scenes, holdouts);
    REQUIRE(h.size() == 1);
    REQUIRE(h[0].size() == 1);
    CHECK(h[0][0].relation == 3);
    CHECK(h[0][0].object == s.objects[2].box);
}

TEST_CASE("predict_scene scores every ordered pair against every relation") {
    // [DERIVED] n objects yield n*(n-1)*R predictions; per ordered pair the
    // relation confidences are a softmax row summing to one.
    NetConfig net = probe_net();
    ModelBundle bundle = make_bundle(net, 3);
    auto rng = make_rng(9, {0});
    Scene s = noise_scene(0, 3, net.channels, rng);
    s.triplets = {Triplet{0, 1, 0}};

    std::vector<Prediction> preds = predict_scene(bundle, true, s);
    REQUIRE(preds.size() == 3 * 2 * net.relations);
    std::map<std::pair<std::array<size_t, 4>, std::array<size_t, 4>>, double> sums;
    for (const Prediction& p : preds) {
        CHECK(p.relation < net.relations);
        CHECK(p.confidence > 0.0);
        std::array<size_t, 4> sb{p.subject.x0, p.subject.y0, p.subject.x1, p.subject.y1};
        std::array<size_t, 4> ob{p.object.x0, p.object.y0, p.object.x1, p.object.y1};
        sums[{sb, ob}] += p.confidence;
    }
    REQUIRE(sums.size() == 6);
    for (const auto& [pair, total] : sums) CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // No ordered pair pairs an object with itself.
    for (const Prediction& p : preds) CHECK(!(p.subject == p.object));

    // A scene with fewer than two objects yields nothing.
    Scene lonely = noise_scene(1, 1, net.channels, rng);
    CHECK(predict_scene(bundle, true, lonely).empty());
}

TEST_CASE("per-relation accuracy agrees with argmax over predicted scores") {
    // [DERIVED] consistency: for every ground-truth pair, look up its
    // relation scores in predict_scene's output; the relation with the
    // highest confidence is the top-1 answer per_relation_accuracy counts.
    NetConfig net = probe_net();
    ModelBundle bundle = make_bundle(net, 11);
    auto rng = make_rng(21, {0});
    std::vector<Scene> scenes;
    for (uint64_t i = 0; i < 4; ++i) {
        Scene s = noise_scene(i, 4, net.channels, rng);
        s.triplets = {Triplet{0, 1, i % net.relations}, Triplet{2, 3, (i + 1) % net.relations}};
        scenes.push_back(std::move(s));
    }

    std::vector<size_t> correct(net.relations, 0), total(net.relations, 0);
    for (const Scene& s : scenes) {
        std::vector<Prediction> preds = predict_scene(bundle, true, s);
        for (const Triplet& t : s.triplets) {
            const Box& sb = s.objects[t.subject].box;
            const Box& ob = s.objects[t.object].box;
            size_t argmax = 0;
            double best = -1.0;
            for (const Prediction& p : preds) {
                if (p.subject == sb && p.object == ob && p.confidence > best) {
                    best = p.confidence;
                    argmax = p.relation;
                }
            }
            total[t.relation] += 1;
            if (argmax == t.relation) correct[t.relation] += 1;
        }
    }

    std::vector<RelationAccuracy> acc = per_relation_accuracy(bundle, true, scenes);
    REQUIRE(acc.size() == net.relations);
    for (size_t r = 0; r < net.relations; ++r) {
        CHECK(acc[r].relation == r);
        CHECK(acc[r].total == total[r]);
        CHECK(acc[r].correct == correct[r]);
        double expect = total[r] == 0 ? 0.0
                                      : static_cast<double>(correct[r]) /
                                            static_cast<double>(total[r]);
        CHECK(acc[r].accuracy == expect);
    }
}

TEST_CASE("apply_oa equals the projection the training graph computes") {
    // [DERIVED] the plain helper and the graph forward must agree bitwise.
    NetConfig net = probe_net();
    ModelBundle bundle = make_bundle(net, 5);
    auto rng = make_rng(5, {5});
    Scene s = noise_scene(0, 2, net.channels, rng);

    FeatureMap plain = apply_oa(bundle, s.map);
    Graph g;
    ParamContext ctx(g);
    MapVar mv = oa_forward(ctx, bundle.oa, s.map, net.leaky_slope);
    CHECK(plain.height == s.map.height);
    CHECK(plain.width == s.map.width);
    CHECK(plain.channels == net.channels);
    CHECK(plain.data.data == mv.rows.value().data);
}

TEST_CASE("overlap_ratio closed forms") {
    // [DERIVED] 1-D populations, 2 bins. a = {0, 1}, b = {1}: the shared
    // range [0, 1] splits in half, a's mass is (1/2, 1/2), b's is (0, 1), so
    // the histogram intersection is exactly 1/2.
    Tensor a = Tensor::from({2, 1}, {0.0, 1.0});
    Tensor b = Tensor::from({1, 1}, {1.0});
    CHECK(overlap_ratio(a, b, 2) == doctest::Approx(0.5).epsilon(1e-9));

    // Identical populations overlap fully.
    CHECK(overlap_ratio(a, a, 4) == doctest::Approx(1.0).epsilon(1e-9));

    // Identical means count as indistinguishable even when samples differ.
    Tensor spread = Tensor::from({2, 1}, {0.0, 2.0});
    Tensor point = Tensor::from({2, 1}, {1.0, 1.0});
    CHECK(overlap_ratio(spread, point, 4) == doctest::Approx(1.0).epsilon(1e-9));

    // Disjoint supports along the mean-difference axis overlap not at all;
    // a second dimension with equal means must not disturb the projection.
    Tensor left = Tensor::from({2, 2}, {0.0, 0.0, 0.0, 2.0});
    Tensor right = Tensor::from({2, 2}, {3.0, 0.0, 3.0, 2.0});
    CHECK(overlap_ratio(left, right, 4) == doctest::Approx(0.0).epsilon(1e-9));

    // Three-quarter overlap: a = {0,1,2,3}, b = {1,2,3,4} with 5 bins over
    // [0,4] puts one sample per cell; intersection = 3 cells * 1/4.
    Tensor a4 = Tensor::from({4, 1}, {0.0, 1.0, 2.0, 3.0});
    Tensor b4 = Tensor::from({4, 1}, {1.0, 2.0, 3.0, 4.0});
    CHECK(overlap_ratio(a4, b4, 5) == doctest::Approx(0.75).epsilon(1e-9));

    // [TRIVIAL] contract and undefined cases.
    CHECK_THROWS_AS(overlap_ratio(Tensor::zeros({2}), b, 2), ContractError);
    CHECK_THROWS_AS(overlap_ratio(a, Tensor::zeros({1, 2}), 2), ContractError);
    CHECK_THROWS_AS(overlap_ratio(a, b, 0), ContractError);
    Tensor empty = Tensor::zeros({1, 1});
    empty.shape = {0, 1};
    empty.data.clear();
    CHECK_THROWS_AS(overlap_ratio(empty, b, 2), MetricError);
}

TEST_CASE("mean_overlap_ratio is a bounded population statistic") {
    // [TRIVIAL] bounds, determinism, and the no-pairs error.
    NetConfig net = probe_net();
    ModelBundle bundle = make_bundle(net, 2);
    auto rng = make_rng(31, {0});
    std::vector<Scene> scenes;
    for (uint64_t i = 0; i < 3; ++i) {
        Scene s = noise_scene(i, 4, net.channels, rng);
        s.triplets = {Triplet{0, 1, 1}, Triplet{2, 3, 2}};
        scenes.push_back(std::move(s));
    }
    double projected = mean_overlap_ratio(bundle, scenes, true);
    double raw = mean_overlap_ratio(bundle, scenes, false);
    CHECK(projected >= 0.0);
    CHECK(projected <= 1.0);
    CHECK(raw >= 0.0);
    CHECK(raw <= 1.0);
    CHECK(mean_overlap_ratio(bundle, scenes, true) == projected);

    std::vector<Scene> bare = {scenes[0]};
    bare[0].triplets.clear();
    CHECK_THROWS_AS(mean_overlap_ratio(bundle, bare, true), MetricError);
}

TEST_CASE("alignment recovery of a random bundle sits at the chance rate") {
    // [DERIVED] Monte-Carlo: on scenes whose four objects are iid noise
    // crops, candidates are exchangeable, so an untrained transform picks
    // each of the three candidates with equal probability. Over 150 scenes
    // (300 cases) the hit rate concentrates near 1/3; the band is ~3.5 sigma
    // (sigma = sqrt(p(1-p)/300) ~ 0.027).
    NetConfig net = probe_net();
    ModelBundle bundle = make_bundle(net, 77);
    auto rng = make_rng(88, {0});
    std::vector<Scene> scenes;
    for (uint64_t i = 0; i < 150; ++i) {
        Scene s = noise_scene(i, 4, net.channels, rng);
        s.triplets = {Triplet{0, 1, 0}, Triplet{2, 3, 1}};
        scenes.push_back(std::move(s));
    }
    double rate = alignment_recovery(bundle, true, scenes);
    CHECK(rate > 1.0 / 3.0 - 0.095);
    CHECK(rate < 1.0 / 3.0 + 0.095);

    // The chance baseline on this set is exactly 1/3 per case.
    CHECK(alignment_recovery_baseline(scenes) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // [DERIVED] baseline arithmetic with mixed candidate counts and partner
    // multiplicity: one case with 2 partners among 3 candidates, one scene
    // contributing two 1-of-3 cases -> mean of (2/3, 1/3, 1/3).
    auto rng2 = make_rng(88, {1});
    std::vector<Scene> mixed;
    Scene s1 = noise_scene(0, 4, net.channels, rng2);
    s1.triplets = {Triplet{0, 1, 0}, Triplet{0, 2, 1}};  // one subject, two partners
    mixed.push_back(std::move(s1));
    Scene s2 = noise_scene(1, 4, net.channels, rng2);
    s2.triplets = {Triplet{0, 1, 0}, Triplet{2, 3, 1}};
    mixed.push_back(std::move(s2));
    CHECK(alignment_recovery_baseline(mixed) ==
          doctest::Approx((2.0 / 3.0 + 1.0 / 3.0 + 1.0 / 3.0) / 3.0).epsilon(1e-12));

    // [TRIVIAL] scenes with fewer than three objects offer no cases.
    auto rng3 = make_rng(88, {2});
    std::vector<Scene> tiny = {noise_scene(0, 2, net.channels, rng3)};
    tiny[0].triplets = {Triplet{0, 1, 0}};
    CHECK_THROWS_AS(alignment_recovery(bundle, true, tiny), MetricError);
    CHECK_THROWS_AS(alignment_recovery_baseline(tiny), MetricError);
}

TEST_CASE("relation bias orders relations by instances per category pair") {
    // [DERIVED] relation 0: 4 instances over 2 distinct category pairs ->
    // bias 2; relation 1: 1 instance over 1 pair -> bias 1; relation 2:
    // absent -> bias 0. Ascending order: 2, 1, 0.
    Scene s;
    s.id = 0;
    s.map = FeatureMap::zeros(8, 8, 8);
    s.objects = {SceneObject{Box{0, 0, 2, 2}, 0}, SceneObject{Box{2, 2, 4, 4}, 4},
                 SceneObject{Box{4, 4, 6, 6}, 1}, SceneObject{Box{0, 4, 2, 6}, 5}};
    s.triplets = {Triplet{0, 1, 0}, Triplet{0, 1, 0}, Triplet{0, 1, 0}, Triplet{2, 3, 0},
                  Triplet{2, 3, 1}};
    std::vector<Scene> scenes = {s};

    std::vector<BiasPoint> bias = relation_bias(scenes, 3);
    REQUIRE(bias.size() == 3);
    CHECK(bias[0].relation == 2);
    CHECK(bias[0].count == 0);
    CHECK(bias[0].bias == 0.0);
    CHECK(bias[1].relation == 1);
    CHECK(bias[1].count == 1);
    CHECK(bias[1].bias == 1.0);
    CHECK(bias[2].relation == 0);
    CHECK(bias[2].count == 4);
    CHECK(bias[2].bias == 2.0);
}
