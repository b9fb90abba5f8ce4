#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sta/io.hpp"
#include "sta/nets.hpp"

namespace sta {

// Parameters of the synthetic relationship world. Scenes are feature grids
// with objects rendered as boxed category signatures. Categories split into a
// subject half and an object half, each owning its own channel, so the two
// RoI domains are distributionally distinct. Each related pair overlaps
// (IoU >= pair_iou_min) and carries a relation signature in the interaction
// region: a positive marker on a channel shared by all relations, plus a
// cell-wise co-dip code on the relation channels (see dataworld.cpp). Every
// relation dips every relation channel on half the region's cells, so raw
// per-channel max pooling is blind to relation identity; only a per-cell
// channel mix applied before pooling can expose it.
struct WorldSpec {
    size_t height = 32;
    size_t width = 32;
    size_t channels = 20;  // categories + marker + 2 role + 5 relation-code channels
    size_t categories = 12;
    size_t relations = 8;
    size_t min_objects = 4;
    size_t max_objects = 7;
    size_t train_scenes = 200;
    size_t test_scenes = 50;
    size_t holdout_compositions = 4;
    size_t min_box = 6;
    size_t max_box = 12;
    double noise = 0.25;
    double category_amp = 2.0;
    double relation_amp = 2.5;
    double pair_iou_min = 0.25;  // related boxes overlap at least this much

    void validate() const;
    json to_json() const;
    static WorldSpec from_json(const json& j);
};

struct SceneObject {
    Box box;
    size_t category = 0;
};

// Indices into Scene::objects plus a relation id.
struct Triplet {
    size_t subject = 0;
    size_t object = 0;
    size_t relation = 0;
};

struct Scene {
    uint64_t id = 0;
    FeatureMap map;
    std::vector<SceneObject> objects;
    std::vector<Triplet> triplets;
};

// A held-out composition (subject category, relation, object category):
// excluded from train scenes, injected round-robin into test scenes.
using Composition = std::array<size_t, 3>;

struct World {
    WorldSpec spec;
    uint64_t seed = 0;
    std::vector<Composition> holdouts;
    std::vector<Scene> train;
    std::vector<Scene> test;
};

// Deterministic generation: the result is a pure function of (spec, seed).
World generate_world(const WorldSpec& spec, uint64_t seed);

// Binary scene-file round trip. Fails with VersionError on an unknown format
// version and IntegrityError on any checksum mismatch, leaving no partial
// state behind.
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

// Jittered copies of a box: `count` boxes whose first entry is the original
// and whose rest keep IoU with it of at least `iou_min`, clipped to the map.
// iou_min of exactly 1 yields identical copies; bounded rejection sampling
// that cannot satisfy the threshold raises DataError.
std::vector<Box> augment_rois(const Box& box, size_t count, double iou_min, size_t map_width,
                              size_t map_height, uint64_t seed);

// Reassigns which object each triplet points at (a seeded permutation of the
// object slots within every scene), preserving the subject and object box
// multisets. Used to verify that unpaired pre-training never reads the links.
void scramble_links(World& world, uint64_t seed);

// Relations present in a scene, deduplicated and sorted (image-level labels
// for weakly supervised training).
std::vector<size_t> scene_relations(const Scene& scene);

}  // namespace sta
