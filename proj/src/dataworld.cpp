#include "sta/dataworld.hpp"

#include <algorithm>
#include <cstring>
#include <random>
#include <set>
#include <string>

#include "sta/errors.hpp"
#include "sta/rng.hpp"

namespace sta {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'W', 'O', 'R', 'L', 'D'};
constexpr uint32_t kVersion = 1;

}  // namespace

void WorldSpec::validate() const {
    if (height == 0 || width == 0 || channels == 0) {
        throw ConfigError("world dimensions must be positive");
    }
    if (categories < 4 || categories % 2 != 0) {
        throw ConfigError("category count must be even and at least 4 (the categories split "
                          "into a subject half and an object half)");
    }
    if (relations < 2) throw ConfigError("world needs at least two relations");
    size_t rel_channels = 2;
    while (rel_channels * (rel_channels - 1) / 2 < relations) ++rel_channels;
    if (channels < categories + 3 + rel_channels) {
        throw ConfigError("channel layout needs categories + marker + 2 role + " +
                          std::to_string(rel_channels) + " relation channels (" +
                          std::to_string(categories + 3 + rel_channels) + "), got " +
                          std::to_string(channels));
    }
    if (min_objects < 2 || max_objects < min_objects) {
        throw ConfigError("object count range must satisfy 2 <= min <= max");
    }
    if (train_scenes == 0 || test_scenes == 0) {
        throw ConfigError("scene counts must be positive");
    }
    if (min_box == 0 || max_box < min_box || max_box > width || max_box > height) {
        throw ConfigError("box size range must satisfy 1 <= min <= max <= map side");
    }
    if (noise < 0.0) throw ConfigError("noise level must be non-negative");
    if (category_amp < 0.0 || relation_amp < 0.0) {
        throw ConfigError("signature amplitudes must be non-negative");
    }
    if (pair_iou_min < 0.0 || pair_iou_min >= 1.0) {
        throw ConfigError("pair IoU floor must lie in [0, 1)");
    }
    size_t side = categories / 2;
    size_t space = side * relations * side;
    if (holdout_compositions > 0 &&
        (holdout_compositions >= space || holdout_compositions > relations * (side * side - 2))) {
        // Every relation must keep at least two live compositions so the
        // zero-shot split stays meaningful.
        throw ConfigError("too many held-out compositions for the composition space");
    }
}

json WorldSpec::to_json() const {
    json j;
    j["height"] = height;
    j["width"] = width;
    j["channels"] = channels;
    j["categories"] = categories;
    j["relations"] = relations;
    j["min_objects"] = min_objects;
    j["max_objects"] = max_objects;
    j["train_scenes"] = train_scenes;
    j["test_scenes"] = test_scenes;
    j["holdout_compositions"] = holdout_compositions;
    j["min_box"] = min_box;
    j["max_box"] = max_box;
    j["noise"] = noise;
    j["category_amp"] = category_amp;
    j["relation_amp"] = relation_amp;
    j["pair_iou_min"] = pair_iou_min;
    return j;
}

WorldSpec WorldSpec::from_json(const json& j) {
    WorldSpec s;
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("world spec field '" + std::string(key) + "': " + e.what());
        }
    };
    get("height", s.height);
    get("width", s.width);
    get("channels", s.channels);
    get("categories", s.categories);
    get("relations", s.relations);
    get("min_objects", s.min_objects);
    get("max_objects", s.max_objects);
    get("train_scenes", s.train_scenes);
    get("test_scenes", s.test_scenes);
    get("holdout_compositions", s.holdout_compositions);
    get("min_box", s.min_box);
    get("max_box", s.max_box);
    get("noise", s.noise);
    get("category_amp", s.category_amp);
    get("relation_amp", s.relation_amp);
    get("pair_iou_min", s.pair_iou_min);
    s.validate();
    return s;
}

namespace {

// Cells where a related pair interacts: the box intersection when it exists,
// per axis the gap between the boxes otherwise, widened to the union span for
// touching boxes.
void interaction_range(size_t a0, size_t a1, size_t b0, size_t b1, size_t& lo, size_t& hi) {
    size_t o0 = std::max(a0, b0), o1 = std::min(a1, b1);
    if (o0 < o1) {
        lo = o0;
        hi = o1;
    } else if (o1 < o0) {
        lo = o1;
        hi = o0;
    } else {
        lo = std::min(a0, b0);
        hi = std::max(a1, b1);
    }
}

// Channel layout: each category k owns channel k (subject categories fill the
// first half of the category range, object categories the second half, so the
// two pooled-feature domains differ by which channel block carries their
// identity spikes). Channel `categories` is a positive interaction marker
// shared by every relation. The remaining channels carry relation identity as
// a cell-wise co-dip code: relation r dips a PAIR of relation channels on
// even-parity interaction cells and the complementary relation channels on
// odd-parity cells, at equal depth. Every relation channel is dipped on half
// of the region's cells, so per-channel max pooling of the raw map sees the
// same profile for every relation — identity lives only in which channels dip
// TOGETHER at a cell, which survives pooling only after a per-cell channel
// mix (a learned 1x1 projection) converts the co-dip pattern into a positive
// spike.
constexpr double kMarkerScale = 0.8;

// Smallest channel count whose unordered pairs cover `relations` codes.
size_t relation_channel_count(size_t relations) {
    size_t k = 2;
    while (k * (k - 1) / 2 < relations) ++k;
    return k;
}

// Lexicographic enumeration of channel pairs: 0 -> (0,1), 1 -> (0,2), ...
void relation_pair(size_t relation, size_t k, size_t& a, size_t& b) {
    size_t idx = 0;
    for (a = 0; a + 1 < k; ++a) {
        for (b = a + 1; b < k; ++b) {
            if (idx == relation) return;
            ++idx;
        }
    }
    throw ContractError("relation code out of range");
}

void add_category_signature(FeatureMap& map, const SceneObject& obj, const WorldSpec& spec) {
    size_t ch = obj.category % spec.channels;
    // Appearance statistics differ systematically between the two category
    // halves: every box also paints its half's role channel, a zero-variance
    // domain coordinate (the analog of subjects and objects simply looking
    // like different kinds of things).
    size_t role = spec.categories + 1 + (obj.category % spec.categories < spec.categories / 2
                                             ? 0
                                             : 1);
    for (size_t y = obj.box.y0; y < obj.box.y1; ++y) {
        for (size_t x = obj.box.x0; x < obj.box.x1; ++x) {
            map.at(y, x, ch) += spec.category_amp;
            map.at(y, x, role) += spec.category_amp;
        }
    }
}

void add_relation_signature(FeatureMap& map, const Box& s, const Box& o, size_t relation,
                            const WorldSpec& spec) {
    size_t x_lo, x_hi, y_lo, y_hi;
    interaction_range(s.x0, s.x1, o.x0, o.x1, x_lo, x_hi);
    interaction_range(s.y0, s.y1, o.y0, o.y1, y_lo, y_hi);
    size_t marker = spec.categories;
    size_t base = spec.categories + 3;  // skip the marker and both role channels
    size_t k = relation_channel_count(spec.relations);
    size_t a, b;
    relation_pair(relation % spec.relations, k, a, b);
    for (size_t y = y_lo; y < y_hi; ++y) {
        for (size_t x = x_lo; x < x_hi; ++x) {
            map.at(y, x, marker) += spec.relation_amp * kMarkerScale;
            // Parity relative to the region origin, so congruent regions
            // render identically regardless of where they sit on the map.
            bool even = ((x - x_lo) + (y - y_lo)) % 2 == 0;
            for (size_t j = 0; j < k; ++j) {
                bool in_pair = j == a || j == b;
                if (in_pair == even) map.at(y, x, base + j) -= spec.relation_amp;
            }
        }
    }
}

Box sample_box(std::mt19937_64& rng, const WorldSpec& spec) {
    std::uniform_int_distribution<size_t> side(spec.min_box, spec.max_box);
    size_t w = side(rng), h = side(rng);
    std::uniform_int_distribution<size_t> px(0, spec.width - w);
    std::uniform_int_distribution<size_t> py(0, spec.height - h);
    size_t x0 = px(rng), y0 = py(rng);
    return Box{x0, y0, x0 + w, y0 + h};
}

// Places a partner box overlapping `anchor` with IoU in [pair_iou_min, 1).
// The floor keeps the interaction region a substantial chunk of both boxes,
// so the shared signature lands in comparable pooled-bin positions for the
// two partners.
Box sample_overlapping_box(std::mt19937_64& rng, const WorldSpec& spec, const Box& anchor,
                           uint64_t scene_id) {
    std::uniform_int_distribution<size_t> side(spec.min_box, spec.max_box);
    for (int attempt = 0; attempt < 500; ++attempt) {
        size_t w = side(rng), h = side(rng);
        // Top-left anywhere that keeps the boxes intersecting and in bounds.
        long x_min = static_cast<long>(anchor.x0) - static_cast<long>(w) + 1;
        long x_max = static_cast<long>(anchor.x1) - 1;
        long y_min = static_cast<long>(anchor.y0) - static_cast<long>(h) + 1;
        long y_max = static_cast<long>(anchor.y1) - 1;
        x_min = std::max(x_min, 0L);
        y_min = std::max(y_min, 0L);
        x_max = std::min(x_max, static_cast<long>(spec.width - w));
        y_max = std::min(y_max, static_cast<long>(spec.height - h));
        if (x_min > x_max || y_min > y_max) continue;
        std::uniform_int_distribution<long> px(x_min, x_max);
        std::uniform_int_distribution<long> py(y_min, y_max);
        size_t x0 = static_cast<size_t>(px(rng));
        size_t y0 = static_cast<size_t>(py(rng));
        Box b{x0, y0, x0 + w, y0 + h};
        double overlap = iou(anchor, b);
        if (overlap >= spec.pair_iou_min && overlap < 0.999) return b;
    }
    throw DataError("scene " + std::to_string(scene_id) +
                    ": could not place an overlapping partner box");
}

bool is_holdout(const std::vector<Composition>& holdouts, size_t cs, size_t r, size_t co) {
    return std::find(holdouts.begin(), holdouts.end(), Composition{cs, r, co}) != holdouts.end();
}

Scene generate_scene(const WorldSpec& spec, uint64_t seed, uint64_t scene_id, bool is_test,
                     const std::vector<Composition>& holdouts, const Composition* forced) {
    auto rng = make_rng(seed, {tag_hash("scene"), scene_id});
    Scene scene;
    scene.id = scene_id;
    scene.map = FeatureMap::zeros(spec.height, spec.width, spec.channels);

    std::normal_distribution<double> gauss(0.0, 1.0);
    if (spec.noise > 0.0) {
        for (double& d : scene.map.data.data) d = gauss(rng) * spec.noise;
    }

    size_t side = spec.categories / 2;
    std::uniform_int_distribution<size_t> obj_count(spec.min_objects, spec.max_objects);
    std::uniform_int_distribution<size_t> subj_cat(0, side - 1);
    std::uniform_int_distribution<size_t> obj_cat(side, spec.categories - 1);
    std::uniform_int_distribution<size_t> rel(0, spec.relations - 1);
    size_t n = obj_count(rng);

    size_t pairs = n / 2;
    for (size_t p = 0; p < pairs; ++p) {
        size_t cs, co, r;
        Box sb = sample_box(rng, spec);
        if (forced != nullptr && p == 0) {
            cs = (*forced)[0];
            r = (*forced)[1];
            co = (*forced)[2];
        } else {
            cs = subj_cat(rng);
            co = obj_cat(rng);
            if (is_test) {
                r = rel(rng);
            } else {
                std::vector<size_t> allowed;
                for (size_t cand = 0; cand < spec.relations; ++cand) {
                    if (!is_holdout(holdouts, cs, cand, co)) allowed.push_back(cand);
                }
                if (allowed.empty()) {
                    throw DataError("scene " + std::to_string(scene_id) +
                                    ": every relation is held out for a category pair");
                }
                std::uniform_int_distribution<size_t> pick(0, allowed.size() - 1);
                r = allowed[pick(rng)];
            }
        }
        Box ob = sample_overlapping_box(rng, spec, sb, scene_id);
        size_t si = scene.objects.size();
        scene.objects.push_back(SceneObject{sb, cs});
        scene.objects.push_back(SceneObject{ob, co});
        scene.triplets.push_back(Triplet{si, si + 1, r});
    }
    if (n % 2 == 1) {
        // Unrelated distractor: drawn from the subject half so it never
        // mimics a relation partner's category block.
        scene.objects.push_back(SceneObject{sample_box(rng, spec), subj_cat(rng)});
    }

    for (const SceneObject& obj : scene.objects) add_category_signature(scene.map, obj, spec);
    for (const Triplet& t : scene.triplets) {
        add_relation_signature(scene.map, scene.objects[t.subject].box,
                               scene.objects[t.object].box, t.relation, spec);
    }
    return scene;
}

}  // namespace

World generate_world(const WorldSpec& spec, uint64_t seed) {
    spec.validate();
    World w;
    w.spec = spec;
    w.seed = seed;

    auto rng = make_rng(seed, {tag_hash("holdouts")});
    size_t side = spec.categories / 2;
    std::uniform_int_distribution<size_t> subj_cat(0, side - 1);
    std::uniform_int_distribution<size_t> obj_cat(side, spec.categories - 1);
    std::uniform_int_distribution<size_t> rel(0, spec.relations - 1);
    std::set<Composition> chosen;
    std::vector<size_t> held_per_relation(spec.relations, 0);
    while (chosen.size() < spec.holdout_compositions) {
        Composition c{subj_cat(rng), rel(rng), obj_cat(rng)};
        if (chosen.count(c) != 0) continue;
        // Keep at least two live compositions per relation so zero-shot stays
        // meaningful (see WorldSpec::validate).
        if (held_per_relation[c[1]] + 2 >= side * side) continue;
        held_per_relation[c[1]] += 1;
        chosen.insert(c);
    }
    w.holdouts.assign(chosen.begin(), chosen.end());

    w.train.reserve(spec.train_scenes);
    for (size_t i = 0; i < spec.train_scenes; ++i) {
        w.train.push_back(generate_scene(spec, seed, i, /*is_test=*/false, w.holdouts, nullptr));
    }
    w.test.reserve(spec.test_scenes);
    for (size_t i = 0; i < spec.test_scenes; ++i) {
        const Composition* forced =
            w.holdouts.empty() ? nullptr : &w.holdouts[i % w.holdouts.size()];
        w.test.push_back(generate_scene(spec, seed, spec.train_scenes + i, /*is_test=*/true,
                                        w.holdouts, forced));
    }
    return w;
}

namespace {

void write_scene(ByteWriter& out, const Scene& scene) {
    size_t start = out.size();
    out.u64(scene.id);
    out.u64(scene.map.height);
    out.u64(scene.map.width);
    out.u64(scene.map.channels);
    out.f64_array(scene.map.data.data);
    out.u64(scene.objects.size());
    for (const SceneObject& o : scene.objects) {
        out.u64(o.box.x0);
        out.u64(o.box.y0);
        out.u64(o.box.x1);
        out.u64(o.box.y1);
        out.u64(o.category);
    }
    out.u64(scene.triplets.size());
    for (const Triplet& t : scene.triplets) {
        out.u64(t.subject);
        out.u64(t.object);
        out.u64(t.relation);
    }
    uint32_t crc = crc32_bytes({out.bytes().data() + start, out.size() - start});
    out.u32(crc);
}

Scene read_scene(ByteReader& in) {
    size_t start = in.pos();
    Scene scene;
    scene.id = in.u64();
    size_t h = in.u64(), w = in.u64(), c = in.u64();
    if (h == 0 || w == 0 || c == 0) {
        throw FormatError("scene " + std::to_string(scene.id) + ": zero map dimension");
    }
    std::vector<double> data = in.f64_array();
    if (data.size() != h * w * c) {
        throw FormatError("scene " + std::to_string(scene.id) + ": map payload has " +
                          std::to_string(data.size()) + " values, expected " +
                          std::to_string(h * w * c));
    }
    scene.map.height = h;
    scene.map.width = w;
    scene.map.channels = c;
    scene.map.data = Tensor::from({h * w, c}, std::move(data));
    size_t objects = in.u64();
    scene.objects.reserve(objects);
    for (size_t i = 0; i < objects; ++i) {
        SceneObject o;
        o.box.x0 = in.u64();
        o.box.y0 = in.u64();
        o.box.x1 = in.u64();
        o.box.y1 = in.u64();
        o.category = in.u64();
        scene.map.check_box(o.box);
        scene.objects.push_back(o);
    }
    size_t triplets = in.u64();
    scene.triplets.reserve(triplets);
    for (size_t i = 0; i < triplets; ++i) {
        Triplet t;
        t.subject = in.u64();
        t.object = in.u64();
        t.relation = in.u64();
        if (t.subject >= objects || t.object >= objects) {
            throw FormatError("scene " + std::to_string(scene.id) +
                              ": triplet references a missing object");
        }
        scene.triplets.push_back(t);
    }
    size_t end = in.pos();
    uint32_t expected = in.u32();
    uint32_t actual = crc32_bytes(in.slice(start, end));
    if (expected != actual) {
        throw IntegrityError("scene " + std::to_string(scene.id) + " failed its checksum");
    }
    return scene;
}

}  // namespace

void save_world(const World& world, const std::filesystem::path& path) {
    ByteWriter out;
    out.raw(kMagic, sizeof(kMagic));
    out.u32(kVersion);
    out.str(canonical_json(world.spec.to_json()));
    out.u64(world.seed);
    out.u64(world.holdouts.size());
    for (const Composition& c : world.holdouts) {
        out.u64(c[0]);
        out.u64(c[1]);
        out.u64(c[2]);
    }
    out.u64(world.train.size());
    out.u64(world.test.size());
    for (const Scene& s : world.train) write_scene(out, s);
    for (const Scene& s : world.test) write_scene(out, s);
    uint32_t file_crc = crc32_bytes({out.bytes().data(), out.size()});
    out.u32(file_crc);
    write_file(path, {out.bytes().data(), out.size()});
}

World load_world(const std::filesystem::path& path) {
    std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() < sizeof(kMagic) + 8) {
        throw FormatError("scene file too short: " + path.string());
    }
    ByteReader in({bytes.data(), bytes.size()});

    char magic[sizeof(kMagic)];
    in.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a scene file: " + path.string());
    }
    uint32_t version = in.u32();
    if (version != kVersion) {
        throw VersionError("scene file version " + std::to_string(version) +
                           " is not supported (expected " + std::to_string(kVersion) + ")");
    }

    // The trailing CRC covers everything before it.
    uint32_t stored_crc = 0;
    {
        ByteReader tail({bytes.data() + bytes.size() - 4, 4});
        stored_crc = tail.u32();
    }
    uint32_t actual_crc = crc32_bytes({bytes.data(), bytes.size() - 4});
    if (stored_crc != actual_crc) {
        throw IntegrityError("scene file failed its checksum: " + path.string());
    }

    World w;
    w.spec = WorldSpec::from_json(json::parse(in.str(), nullptr, true));
    w.seed = in.u64();
    size_t holdouts = in.u64();
    for (size_t i = 0; i < holdouts; ++i) {
        Composition c{in.u64(), in.u64(), in.u64()};
        w.holdouts.push_back(c);
    }
    size_t train = in.u64();
    size_t test = in.u64();
    w.train.reserve(train);
    for (size_t i = 0; i < train; ++i) w.train.push_back(read_scene(in));
    w.test.reserve(test);
    for (size_t i = 0; i < test; ++i) w.test.push_back(read_scene(in));
    in.u32();  // file CRC, already verified
    in.expect_end();
    return w;
}

std::vector<Box> augment_rois(const Box& box, size_t count, double iou_min, size_t map_width,
                              size_t map_height, uint64_t seed) {
    if (count == 0) throw ContractError("augment_rois: count must be at least 1");
    if (!(iou_min > 0.0 && iou_min <= 1.0)) {
        throw ContractError("augment_rois: iou threshold must lie in (0, 1]");
    }
    if (box.x0 >= box.x1 || box.y0 >= box.y1 || box.x1 > map_width || box.y1 > map_height) {
        throw ContractError("augment_rois: box is empty or outside the map");
    }

    std::vector<Box> out;
    out.reserve(count);
    out.push_back(box);
    if (count == 1) return out;
    if (iou_min == 1.0) {
        // Only exact copies can satisfy the threshold.
        out.assign(count, box);
        return out;
    }

    auto rng = std::mt19937_64(seed);
    std::uniform_int_distribution<int> delta(-1, 1);
    auto clamp_coord = [](long v, long lo, long hi) { return std::max(lo, std::min(v, hi)); };
    constexpr int kAttempts = 100;
    while (out.size() < count) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttempts; ++attempt) {
            long x0 = clamp_coord(static_cast<long>(box.x0) + delta(rng), 0,
                                  static_cast<long>(map_width) - 1);
            long y0 = clamp_coord(static_cast<long>(box.y0) + delta(rng), 0,
                                  static_cast<long>(map_height) - 1);
            long x1 = clamp_coord(static_cast<long>(box.x1) + delta(rng), x0 + 1,
                                  static_cast<long>(map_width));
            long y1 = clamp_coord(static_cast<long>(box.y1) + delta(rng), y0 + 1,
                                  static_cast<long>(map_height));
            Box cand{static_cast<size_t>(x0), static_cast<size_t>(y0), static_cast<size_t>(x1),
                     static_cast<size_t>(y1)};
            if (iou(box, cand) >= iou_min) {
                out.push_back(cand);
                placed = true;
                break;
            }
        }
        if (!placed) {
            throw DataError("augment_rois: exhausted " + std::to_string(kAttempts) +
                            " attempts without reaching the IoU threshold");
        }
    }
    return out;
}

void scramble_links(World& world, uint64_t seed) {
    auto scramble = [&](std::vector<Scene>& scenes, uint64_t salt) {
        for (Scene& scene : scenes) {
            if (scene.triplets.size() < 2) continue;
            std::vector<size_t> object_slots;
            object_slots.reserve(scene.triplets.size());
            for (const Triplet& t : scene.triplets) object_slots.push_back(t.object);
            auto rng = make_rng(seed, {tag_hash("scramble"), salt, scene.id});
            std::shuffle(object_slots.begin(), object_slots.end(), rng);
            for (size_t i = 0; i < scene.triplets.size(); ++i) {
                scene.triplets[i].object = object_slots[i];
            }
        }
    };
    scramble(world.train, 0);
    scramble(world.test, 1);
}

std::vector<size_t> scene_relations(const Scene& scene) {
    std::set<size_t> rels;
    for (const Triplet& t : scene.triplets) rels.insert(t.relation);
    return {rels.begin(), rels.end()};
}

}  // namespace sta
