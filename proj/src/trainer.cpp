#include "sta/trainer.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>
#include <utility>

#include "sta/errors.hpp"
#include "sta/rng.hpp"

namespace sta {

void PretrainConfig::validate() const {
    if (!(d_lr > 0.0) || !(g_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (d_steps_per_g == 0) throw ConfigError("d_steps_per_g must be at least 1");
    if (lambda_cycle < 0.0) throw ConfigError("cycle weight must be non-negative");
    if (pairs_per_image == 0) throw ConfigError("pairs_per_image must be at least 1");
    if (rois_per_box == 0) throw ConfigError("rois_per_box must be at least 1");
    if (!(iou_min > 0.0 && iou_min <= 1.0)) throw ConfigError("iou_min must lie in (0, 1]");
}

json PretrainConfig::to_json() const {
    json j;
    j["epochs"] = epochs;
    j["d_lr"] = d_lr;
    j["g_lr"] = g_lr;
    j["d_steps_per_g"] = d_steps_per_g;
    j["lambda_cycle"] = lambda_cycle;
    j["variant"] = to_string(variant);
    j["pairs_per_image"] = pairs_per_image;
    j["rois_per_box"] = rois_per_box;
    j["iou_min"] = iou_min;
    return j;
}

PretrainConfig PretrainConfig::from_json(const json& j) {
    PretrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("pretrain config field '" + std::string(key) + "': " + e.what());
        }
    };
    get("epochs", c.epochs);
    get("d_lr", c.d_lr);
    get("g_lr", c.g_lr);
    get("d_steps_per_g", c.d_steps_per_g);
    get("lambda_cycle", c.lambda_cycle);
    if (j.contains("variant")) c.variant = gan_variant_from_string(j.at("variant").get<std::string>());
    get("pairs_per_image", c.pairs_per_image);
    get("rois_per_box", c.rois_per_box);
    get("iou_min", c.iou_min);
    c.validate();
    return c;
}

namespace {

FinetuneMode finetune_mode_from_string(const std::string& s) {
    if (s == "supervised") return FinetuneMode::supervised;
    if (s == "weak") return FinetuneMode::weak;
    throw ConfigError("unknown finetune mode '" + s + "' (expected 'supervised' or 'weak')");
}

std::string to_string(FinetuneMode m) {
    return m == FinetuneMode::supervised ? "supervised" : "weak";
}

}  // namespace

void FinetuneConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("finetune learning rate must be positive");
    if (max_pairs == 0) throw ConfigError("max_pairs must be at least 1");
    if (freeze_oa && !use_oa) {
        throw ConfigError("freeze_oa without use_oa is contradictory");
    }
}

json FinetuneConfig::to_json() const {
    json j;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["mode"] = to_string(mode);
    j["use_oa"] = use_oa;
    j["freeze_oa"] = freeze_oa;
    j["max_pairs"] = max_pairs;
    j["max_scenes"] = max_scenes;
    return j;
}

FinetuneConfig FinetuneConfig::from_json(const json& j) {
    FinetuneConfig c;
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("finetune config field '" + std::string(key) + "': " + e.what());
        }
    };
    get("epochs", c.epochs);
    get("lr", c.lr);
    if (j.contains("mode")) c.mode = finetune_mode_from_string(j.at("mode").get<std::string>());
    get("use_oa", c.use_oa);
    get("freeze_oa", c.freeze_oa);
    get("max_pairs", c.max_pairs);
    get("max_scenes", c.max_scenes);
    c.validate();
    return c;
}

namespace {

bool box_less(const Box& a, const Box& b) {
    return std::tie(a.x0, a.y0, a.x1, a.y1) < std::tie(b.x0, b.y0, b.x1, b.y1);
}

}  // namespace

DomainBatch build_domains(const Scene& scene, const PretrainConfig& cfg, uint64_t seed,
                          size_t epoch) {
    // Collect the two box multisets. Deliberately link-free: after the
    // canonical sort, nothing downstream can depend on which subject was
    // paired with which object, or on the order triplets were stored in.
    std::vector<Box> subjects, objects;
    subjects.reserve(scene.triplets.size());
    objects.reserve(scene.triplets.size());
    for (const Triplet& t : scene.triplets) {
        subjects.push_back(scene.objects[t.subject].box);
        objects.push_back(scene.objects[t.object].box);
    }
    std::sort(subjects.begin(), subjects.end(), box_less);
    std::sort(objects.begin(), objects.end(), box_less);

    auto expand = [&](std::vector<Box> boxes, const char* domain) {
        if (boxes.size() > cfg.pairs_per_image) {
            auto rng = make_rng(seed, {tag_hash("cap"), tag_hash(domain), scene.id, epoch});
            std::shuffle(boxes.begin(), boxes.end(), rng);
            boxes.resize(cfg.pairs_per_image);
        }
        std::vector<Box> out;
        out.reserve(boxes.size() * cfg.rois_per_box);
        for (size_t i = 0; i < boxes.size(); ++i) {
            uint64_t aug_seed =
                derive_seed(seed, {tag_hash("aug"), tag_hash(domain), scene.id, epoch, i});
            std::vector<Box> rois = augment_rois(boxes[i], cfg.rois_per_box, cfg.iou_min,
                                                 scene.map.width, scene.map.height, aug_seed);
            out.insert(out.end(), rois.begin(), rois.end());
        }
        return out;
    };

    DomainBatch batch;
    batch.a = expand(std::move(subjects), "a");
    batch.b = expand(std::move(objects), "b");
    return batch;
}

PretrainSession::PretrainSession(const NetConfig& net, const PretrainConfig& cfg, uint64_t seed)
    : bundle(make_bundle(net, seed)),
      config(cfg),
      g_opt(AdamConfig{.lr = cfg.g_lr}),
      d_opt(SgdConfig{.lr = cfg.d_lr}),
      seed(seed) {
    cfg.validate();
}

PretrainResult pretrain(PretrainSession& s, std::span<const Scene> train, std::ostream* log) {
    s.config.validate();
    s.bundle.config.validate();
    if (train.empty()) throw DataError("pretraining needs at least one scene");

    std::vector<Tensor*> d_params = discriminator_a_params(s.bundle);
    {
        std::vector<Tensor*> db = discriminator_b_params(s.bundle);
        d_params.insert(d_params.end(), db.begin(), db.end());
    }
    std::vector<Tensor*> g_params = generator_params(s.bundle);
    double slope = s.bundle.config.leaky_slope;
    size_t pool = s.bundle.config.pool_size;

    PretrainResult result;
    for (size_t epoch = s.next_epoch; epoch < s.config.epochs; ++epoch) {
        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), size_t{0});
        {
            auto rng = make_rng(s.seed, {tag_hash("order"), epoch});
            std::shuffle(order.begin(), order.end(), rng);
        }

        PretrainEpochStats stats;
        stats.epoch = epoch;
        double d_a_sum = 0.0, d_b_sum = 0.0, gen_sum = 0.0, cycle_sum = 0.0;

        for (size_t idx : order) {
            const Scene& scene = train[idx];
            DomainBatch dom = build_domains(scene, s.config, s.seed, epoch);
            if (dom.a.empty() || dom.b.empty()) {
                ++stats.scenes_skipped;
                continue;
            }

            // One forward pass of the current generator side produces the
            // pooled real batches and the transformed fakes; the
            // discriminator steps treat all four as constants.
            Tensor real_a_t, real_b_t, fake_a_t, fake_b_t;
            {
                Graph g;
                ParamContext ctx(g);
                MapVar map = oa_forward(ctx, s.bundle.oa, scene.map, slope);
                Var real_a = roi_pool(map, dom.a, pool);
                Var real_b = roi_pool(map, dom.b, pool);
                real_a_t = real_a.value();
                real_b_t = real_b.value();
                fake_b_t = transform_forward(ctx, s.bundle.f_ab, real_a, slope).value();
                fake_a_t = transform_forward(ctx, s.bundle.g_ba, real_b, slope).value();
                stats.clamp_events += g.clamp_events();
            }

            for (size_t k = 0; k < s.config.d_steps_per_g; ++k) {
                Graph g;
                ParamContext ctx(g);
                ctx.train_all(d_params);
                Var real_a = g.constant_ref(real_a_t);
                Var real_b = g.constant_ref(real_b_t);
                Var fake_a = g.constant_ref(fake_a_t);
                Var fake_b = g.constant_ref(fake_b_t);
                AdvTerms adv = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, s.bundle.d_a,
                                                 s.bundle.d_b, s.config.variant, slope);
                Var d_loss = add(adv.d_a, adv.d_b);
                g.backward(d_loss);
                s.d_opt.step(d_params);
                d_a_sum += adv.d_a.value().data[0];
                d_b_sum += adv.d_b.value().data[0];
                ++stats.d_updates;
                stats.clamp_events += g.clamp_events();
            }

            {
                Graph g;
                ParamContext ctx(g);
                ctx.train_all(g_params);
                MapVar map = oa_forward(ctx, s.bundle.oa, scene.map, slope);
                Var real_a = roi_pool(map, dom.a, pool);
                Var real_b = roi_pool(map, dom.b, pool);
                Var fake_b = transform_forward(ctx, s.bundle.f_ab, real_a, slope);
                Var fake_a = transform_forward(ctx, s.bundle.g_ba, real_b, slope);
                AdvTerms adv = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, s.bundle.d_a,
                                                 s.bundle.d_b, s.config.variant, slope);
                Var cyc =
                    cycle_loss(ctx, real_a, fake_b, real_b, fake_a, s.bundle.f_ab, s.bundle.g_ba, slope);
                Var g_loss = generator_objective(adv, cyc, s.config.lambda_cycle);
                g.backward(g_loss);
                s.g_opt.step(g_params);
                gen_sum += adv.gen.value().data[0];
                cycle_sum += cyc.value().data[0];
                ++stats.g_updates;
                stats.clamp_events += g.clamp_events();
            }
            ++stats.scenes_used;
        }

        if (stats.scenes_used == 0) {
            throw DataError("pretrain epoch " + std::to_string(epoch) +
                            ": every scene was skipped (no related pairs)");
        }

        stats.adv_d_a = d_a_sum / static_cast<double>(stats.d_updates);
        stats.adv_d_b = d_b_sum / static_cast<double>(stats.d_updates);
        stats.adv_gen = gen_sum / static_cast<double>(stats.g_updates);
        stats.cycle = cycle_sum / static_cast<double>(stats.g_updates);
        LossBreakdown bd = make_breakdown(stats.adv_d_a, stats.adv_d_b, stats.adv_gen, stats.cycle,
                                          s.config.lambda_cycle, s.config.variant);
        stats.total = bd.total;
        result.history.push_back(stats);
        s.next_epoch = epoch + 1;

        if (log != nullptr) {
            (*log) << "[pretrain] epoch " << (epoch + 1) << "/" << s.config.epochs
                   << " d_a=" << stats.adv_d_a << " d_b=" << stats.adv_d_b
                   << " gen=" << stats.adv_gen << " cycle=" << stats.cycle
                   << " total=" << stats.total << " d_updates=" << stats.d_updates
                   << " g_updates=" << stats.g_updates;
            if (stats.clamp_events > 0) (*log) << " clamped=" << stats.clamp_events;
            (*log) << "\n";
        }
    }
    return result;
}

FinetuneSession::FinetuneSession(ModelBundle b, const FinetuneConfig& cfg, uint64_t seed)
    : bundle(std::move(b)), config(cfg), opt(AdamConfig{.lr = cfg.lr}), seed(seed) {
    cfg.validate();
}

FinetuneResult finetune(FinetuneSession& s, std::span<const Scene> train, std::ostream* log) {
    s.config.validate();
    s.bundle.config.validate();
    if (train.empty()) throw DataError("finetuning needs at least one scene");
    if (s.config.max_scenes > 0 && train.size() > s.config.max_scenes) {
        // Annotated relationships are the scarce resource; pre-training is
        // free to use every scene but fine-tuning sees a labeled subset.
        train = train.subspan(0, s.config.max_scenes);
    }

    std::vector<Tensor*> params;
    if (s.config.use_oa && !s.config.freeze_oa) {
        params = oa_params(s.bundle);
    }
    {
        std::vector<Tensor*> cls = classifier_params(s.bundle);
        params.insert(params.end(), cls.begin(), cls.end());
    }
    double slope = s.bundle.config.leaky_slope;
    size_t pool = s.bundle.config.pool_size;
    size_t relations = s.bundle.config.relations;

    FinetuneResult result;
    for (size_t epoch = s.next_epoch; epoch < s.config.epochs; ++epoch) {
        std::vector<size_t> order(train.size());
        std::iota(order.begin(), order.end(), size_t{0});
        {
            auto rng = make_rng(s.seed, {tag_hash("ft-order"), epoch});
            std::shuffle(order.begin(), order.end(), rng);
        }

        FinetuneEpochStats stats;
        stats.epoch = epoch;
        double loss_sum = 0.0;

        for (size_t idx : order) {
            const Scene& scene = train[idx];
            std::vector<Box> subjects, objects;
            std::vector<size_t> labels;
            if (s.config.mode == FinetuneMode::supervised) {
                for (const Triplet& t : scene.triplets) {
                    if (t.relation >= relations) {
                        throw DataError("scene " + std::to_string(scene.id) + ": relation " +
                                        std::to_string(t.relation) + " out of range");
                    }
                    subjects.push_back(scene.objects[t.subject].box);
                    objects.push_back(scene.objects[t.object].box);
                    labels.push_back(t.relation);
                }
            } else {
                std::vector<std::pair<size_t, size_t>> pairs;
                for (size_t i = 0; i < scene.objects.size(); ++i) {
                    for (size_t j = 0; j < scene.objects.size(); ++j) {
                        if (i != j) pairs.emplace_back(i, j);
                    }
                }
                if (pairs.size() > s.config.max_pairs) {
                    auto rng = make_rng(s.seed, {tag_hash("ft-pairs"), scene.id, epoch});
                    std::shuffle(pairs.begin(), pairs.end(), rng);
                    pairs.resize(s.config.max_pairs);
                }
                for (auto [i, j] : pairs) {
                    subjects.push_back(scene.objects[i].box);
                    objects.push_back(scene.objects[j].box);
                }
                labels = scene_relations(scene);
            }
            if (subjects.empty()) {
                ++stats.scenes_skipped;
                continue;
            }

            Graph g;
            ParamContext ctx(g);
            ctx.train_all(params);
            MapVar map = s.config.use_oa ? oa_forward(ctx, s.bundle.oa, scene.map, slope)
                                         : lift_map(ctx, scene.map);
            Var subj = roi_pool(map, subjects, pool);
            Var obj = roi_pool(map, objects, pool);
            Var scores = relation_scores(ctx, s.bundle.classifier, subj, obj, slope);
            Var loss = s.config.mode == FinetuneMode::supervised
                           ? cross_entropy_loss(g, scores, labels)
                           : weak_image_loss(g, scores, labels, relations);
            g.backward(loss);
            s.opt.step(params);
            loss_sum += loss.value().data[0];
            ++stats.updates;
            ++stats.scenes_used;
        }

        if (stats.scenes_used == 0) {
            throw DataError("finetune epoch " + std::to_string(epoch) +
                            ": every scene was skipped (no usable pairs)");
        }
        stats.loss = loss_sum / static_cast<double>(stats.updates);
        result.history.push_back(stats);
        s.next_epoch = epoch + 1;

        if (log != nullptr) {
            (*log) << "[finetune] epoch " << (epoch + 1) << "/" << s.config.epochs
                   << " loss=" << stats.loss << " scenes=" << stats.scenes_used << "\n";
        }
    }
    return result;
}

// --- Checkpoints -------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'S', 'T', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kCkptVersion = 1;

struct RawCheckpoint {
    json meta;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> slots;
};

void write_checkpoint(const std::filesystem::path& path, const json& meta, ModelBundle& bundle,
                      const Adam* adam, const std::vector<std::string>& slot_names) {
    ByteWriter out;
    out.raw(kCkptMagic, sizeof(kCkptMagic));
    out.u32(kCkptVersion);
    out.str(canonical_json(meta));

    auto named = named_params(bundle);
    out.u64(named.size());
    for (auto& [name, tensor] : named) {
        out.str(name);
        out.f64_array(tensor->data);
    }

    size_t nslots = (adam != nullptr) ? adam->slots.size() : 0;
    if (nslots != slot_names.size()) {
        throw ContractError("checkpoint: optimizer slot count does not match its parameter list");
    }
    out.u64(nslots);
    for (size_t i = 0; i < nslots; ++i) {
        out.str(slot_names[i]);
        out.f64_array(adam->slots[i].m);
        out.f64_array(adam->slots[i].v);
    }

    out.u32(crc32_bytes({out.bytes().data(), out.size()}));
    write_file(path, {out.bytes().data(), out.size()});
}

// expected_kind may be null to accept any kind.
RawCheckpoint read_checkpoint(const std::filesystem::path& path, const char* expected_kind) {
    std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() < sizeof(kCkptMagic) + 8) {
        throw FormatError("checkpoint too short: " + path.string());
    }
    ByteReader in({bytes.data(), bytes.size()});
    char magic[sizeof(kCkptMagic)];
    in.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw FormatError("not a checkpoint file: " + path.string());
    }
    uint32_t version = in.u32();
    if (version != kCkptVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) +
                           " is not supported (expected " + std::to_string(kCkptVersion) + ")");
    }
    uint32_t stored_crc;
    {
        ByteReader tail({bytes.data() + bytes.size() - 4, 4});
        stored_crc = tail.u32();
    }
    if (stored_crc != crc32_bytes({bytes.data(), bytes.size() - 4})) {
        throw IntegrityError("checkpoint failed its checksum: " + path.string());
    }

    RawCheckpoint raw;
    try {
        raw.meta = json::parse(in.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    size_t nparams = in.u64();
    for (size_t i = 0; i < nparams; ++i) {
        std::string name = in.str();
        raw.params[name] = in.f64_array();
    }
    size_t nslots = in.u64();
    for (size_t i = 0; i < nslots; ++i) {
        std::string name = in.str();
        auto m = in.f64_array();
        auto v = in.f64_array();
        raw.slots[name] = {std::move(m), std::move(v)};
    }
    in.u32();  // trailing CRC, already verified
    in.expect_end();

    std::string kind;
    try {
        kind = raw.meta.at("kind").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError("checkpoint metadata is missing its kind");
    }
    if (expected_kind != nullptr && kind != expected_kind) {
        throw FormatError("checkpoint holds a '" + kind + "' state, expected '" +
                          expected_kind + "'");
    }
    return raw;
}

void restore_params(ModelBundle& bundle, const RawCheckpoint& raw) {
    auto named = named_params(bundle);
    if (named.size() != raw.params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(raw.params.size()) +
                          " parameters, model needs " + std::to_string(named.size()));
    }
    for (auto& [name, tensor] : named) {
        auto it = raw.params.find(name);
        if (it == raw.params.end()) {
            throw FormatError("checkpoint is missing parameter '" + name + "'");
        }
        if (it->second.size() != tensor->data.size()) {
            throw FormatError("checkpoint parameter '" + name + "' has " +
                              std::to_string(it->second.size()) + " values, expected " +
                              std::to_string(tensor->data.size()));
        }
        tensor->data = it->second;
        tensor->grad.clear();
    }
}

void restore_adam(Adam& opt, const RawCheckpoint& raw, ModelBundle& bundle,
                  std::span<Tensor* const> opt_params) {
    int64_t step = 0;
    try {
        step = raw.meta.at("adam_step").get<int64_t>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError("checkpoint metadata is missing adam_step");
    }
    opt.step_count = step;
    if (raw.slots.empty()) {
        if (step != 0) {
            throw FormatError("checkpoint has optimizer steps but no moment slots");
        }
        return;
    }

    auto named = named_params(bundle);
    opt.slots.clear();
    opt.slots.reserve(opt_params.size());
    for (Tensor* p : opt_params) {
        auto named_it = std::find_if(named.begin(), named.end(),
                                     [&](const auto& kv) { return kv.second == p; });
        if (named_it == named.end()) {
            throw ContractError("optimizer parameter is not part of the model");
        }
        auto it = raw.slots.find(named_it->first);
        if (it == raw.slots.end()) {
            throw FormatError("checkpoint is missing optimizer state for '" + named_it->first +
                              "'");
        }
        if (it->second.first.size() != p->data.size() ||
            it->second.second.size() != p->data.size()) {
            throw FormatError("checkpoint optimizer state for '" + named_it->first +
                              "' has the wrong size");
        }
        opt.slots.push_back(Adam::Slot{it->second.first, it->second.second});
    }
}

std::vector<std::string> names_of(ModelBundle& bundle, std::span<Tensor* const> params) {
    auto named = named_params(bundle);
    std::vector<std::string> out;
    out.reserve(params.size());
    for (Tensor* p : params) {
        auto it = std::find_if(named.begin(), named.end(),
                               [&](const auto& kv) { return kv.second == p; });
        if (it == named.end()) {
            throw ContractError("optimizer parameter is not part of the model");
        }
        out.push_back(it->first);
    }
    return out;
}

uint64_t meta_u64(const json& meta, const char* key) {
    try {
        return meta.at(key).get<uint64_t>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(std::string("checkpoint metadata is missing '") + key + "'");
    }
}

}  // namespace

void save_pretrain_checkpoint(const PretrainSession& session, const std::filesystem::path& path) {
    auto& s = const_cast<PretrainSession&>(session);  // read-only access to parameters
    json meta;
    meta["kind"] = "pretrain";
    meta["net"] = s.bundle.config.to_json();
    meta["train"] = s.config.to_json();
    meta["epoch"] = s.next_epoch;
    meta["seed"] = s.seed;
    meta["adam_step"] = s.g_opt.step_count;
    std::vector<Tensor*> g_params = generator_params(s.bundle);
    std::vector<std::string> slot_names;
    if (!s.g_opt.slots.empty()) slot_names = names_of(s.bundle, g_params);
    write_checkpoint(path, meta, s.bundle, s.g_opt.slots.empty() ? nullptr : &s.g_opt, slot_names);
}

PretrainSession load_pretrain_checkpoint(const std::filesystem::path& path) {
    RawCheckpoint raw = read_checkpoint(path, "pretrain");
    NetConfig net = NetConfig::from_json(raw.meta.at("net"));
    PretrainConfig cfg = PretrainConfig::from_json(raw.meta.at("train"));
    uint64_t seed = meta_u64(raw.meta, "seed");
    PretrainSession session(net, cfg, seed);
    restore_params(session.bundle, raw);
    session.next_epoch = static_cast<size_t>(meta_u64(raw.meta, "epoch"));
    std::vector<Tensor*> g_params = generator_params(session.bundle);
    restore_adam(session.g_opt, raw, session.bundle, g_params);
    return session;
}

void save_finetune_checkpoint(const FinetuneSession& session, const std::filesystem::path& path) {
    auto& s = const_cast<FinetuneSession&>(session);
    json meta;
    meta["kind"] = "finetune";
    meta["net"] = s.bundle.config.to_json();
    meta["train"] = s.config.to_json();
    meta["epoch"] = s.next_epoch;
    meta["seed"] = s.seed;
    meta["adam_step"] = s.opt.step_count;
    std::vector<Tensor*> params;
    if (s.config.use_oa && !s.config.freeze_oa) params = oa_params(s.bundle);
    {
        std::vector<Tensor*> cls = classifier_params(s.bundle);
        params.insert(params.end(), cls.begin(), cls.end());
    }
    std::vector<std::string> slot_names;
    if (!s.opt.slots.empty()) slot_names = names_of(s.bundle, params);
    write_checkpoint(path, meta, s.bundle, s.opt.slots.empty() ? nullptr : &s.opt, slot_names);
}

FinetuneSession load_finetune_checkpoint(const std::filesystem::path& path) {
    RawCheckpoint raw = read_checkpoint(path, "finetune");
    NetConfig net = NetConfig::from_json(raw.meta.at("net"));
    FinetuneConfig cfg = FinetuneConfig::from_json(raw.meta.at("train"));
    uint64_t seed = meta_u64(raw.meta, "seed");
    FinetuneSession session(make_bundle(net, seed), cfg, seed);
    restore_params(session.bundle, raw);
    session.next_epoch = static_cast<size_t>(meta_u64(raw.meta, "epoch"));
    std::vector<Tensor*> params;
    if (cfg.use_oa && !cfg.freeze_oa) params = oa_params(session.bundle);
    {
        std::vector<Tensor*> cls = classifier_params(session.bundle);
        params.insert(params.end(), cls.begin(), cls.end());
    }
    restore_adam(session.opt, raw, session.bundle, params);
    return session;
}

void save_bundle(const ModelBundle& bundle, uint64_t seed, const std::filesystem::path& path) {
    auto& b = const_cast<ModelBundle&>(bundle);
    json meta;
    meta["kind"] = "bundle";
    meta["net"] = b.config.to_json();
    meta["epoch"] = 0;
    meta["seed"] = seed;
    meta["adam_step"] = 0;
    write_checkpoint(path, meta, b, nullptr, {});
}

ModelBundle load_bundle(const std::filesystem::path& path, uint64_t* seed_out) {
    RawCheckpoint raw = read_checkpoint(path, "bundle");
    NetConfig net = NetConfig::from_json(raw.meta.at("net"));
    uint64_t seed = meta_u64(raw.meta, "seed");
    ModelBundle bundle = make_bundle(net, seed);
    restore_params(bundle, raw);
    if (seed_out != nullptr) *seed_out = seed;
    return bundle;
}

std::string checkpoint_kind(const std::filesystem::path& path) {
    RawCheckpoint raw = read_checkpoint(path, nullptr);
    return raw.meta.at("kind").get<std::string>();
}

}  // namespace sta
