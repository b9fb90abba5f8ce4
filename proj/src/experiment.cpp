#include "sta/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "sta/errors.hpp"
#include "sta/rng.hpp"

namespace sta {

Setting setting_from_string(const std::string& name) {
    if (name == "supervised") return Setting::supervised;
    if (name == "detected") return Setting::detected;
    if (name == "weak") return Setting::weak;
    if (name == "zero_shot") return Setting::zero_shot;
    throw ConfigError("unknown setting '" + name +
                      "' (expected supervised, detected, weak or zero_shot)");
}

std::string to_string(Setting s) {
    switch (s) {
        case Setting::supervised: return "supervised";
        case Setting::detected: return "detected";
        case Setting::weak: return "weak";
        case Setting::zero_shot: return "zero_shot";
    }
    throw ContractError("invalid setting value");
}

Variant variant_from_string(const std::string& name) {
    if (name == "base") return Variant::base;
    if (name == "base_oa") return Variant::base_oa;
    if (name == "sta_noft") return Variant::sta_noft;
    if (name == "sta_nores") return Variant::sta_nores;
    if (name == "sta") return Variant::sta;
    throw ConfigError("unknown variant '" + name +
                      "' (expected base, base_oa, sta_noft, sta_nores or sta)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::base: return "base";
        case Variant::base_oa: return "base_oa";
        case Variant::sta_noft: return "sta_noft";
        case Variant::sta_nores: return "sta_nores";
        case Variant::sta: return "sta";
    }
    throw ContractError("invalid variant value");
}

std::vector<Variant> all_variants() {
    return {Variant::base, Variant::base_oa, Variant::sta_noft, Variant::sta_nores, Variant::sta};
}

json ExperimentConfig::to_json() const {
    json j;
    j["world"] = world.to_json();
    j["net"] = net.to_json();
    j["pretrain"] = pretrain.to_json();
    j["finetune"] = finetune.to_json();
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("world")) c.world = WorldSpec::from_json(j.at("world"));
    if (j.contains("net")) c.net = NetConfig::from_json(j.at("net"));
    if (j.contains("pretrain")) c.pretrain = PretrainConfig::from_json(j.at("pretrain"));
    if (j.contains("finetune")) c.finetune = FinetuneConfig::from_json(j.at("finetune"));
    if (c.net.relations != c.world.relations) {
        throw ConfigError("net and world disagree on the number of relations");
    }
    if (c.net.channels != c.world.channels) {
        throw ConfigError("net and world disagree on the number of channels");
    }
    return c;
}

json MetricsReport::to_json() const {
    json j;
    j["setting"] = setting;
    j["variant"] = variant;
    j["recall_50"] = recall_50;
    j["recall_100"] = recall_100;
    json rel = json::array();
    for (const RelationAccuracy& a : per_relation) {
        json row;
        row["relation"] = a.relation;
        row["correct"] = a.correct;
        row["total"] = a.total;
        row["accuracy"] = a.accuracy;
        rel.push_back(row);
    }
    j["per_relation"] = rel;
    j["overlap_ratio_projected"] = overlap_ratio_projected;
    j["overlap_ratio_raw"] = overlap_ratio_raw;
    j["alignment"] = alignment;
    j["alignment_baseline"] = alignment_baseline;
    json curve_rows = json::array();
    for (const CurvePoint& p : curve) {
        json row;
        row["relation"] = p.relation;
        row["bias"] = p.bias;
        row["count"] = p.count;
        row["accuracy"] = p.accuracy;
        curve_rows.push_back(row);
    }
    j["bias_curve"] = curve_rows;
    json meta;
    meta["seed"] = seed;
    meta["config_hash"] = config_hash;
    meta["wall_seconds"] = wall_seconds;
    j["run"] = meta;
    return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    try {
        r.setting = j.at("setting").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.recall_50 = j.at("recall_50").get<double>();
        r.recall_100 = j.at("recall_100").get<double>();
        for (const json& row : j.at("per_relation")) {
            RelationAccuracy a;
            a.relation = row.at("relation").get<size_t>();
            a.correct = row.at("correct").get<size_t>();
            a.total = row.at("total").get<size_t>();
            a.accuracy = row.at("accuracy").get<double>();
            r.per_relation.push_back(a);
        }
        r.overlap_ratio_projected = j.at("overlap_ratio_projected").get<double>();
        r.overlap_ratio_raw = j.at("overlap_ratio_raw").get<double>();
        r.alignment = j.at("alignment").get<double>();
        r.alignment_baseline = j.at("alignment_baseline").get<double>();
        for (const json& row : j.at("bias_curve")) {
            CurvePoint p;
            p.relation = row.at("relation").get<size_t>();
            p.bias = row.at("bias").get<double>();
            p.count = row.at("count").get<size_t>();
            p.accuracy = row.at("accuracy").get<double>();
            r.curve.push_back(p);
        }
        r.seed = j.at("run").at("seed").get<uint64_t>();
        r.config_hash = j.at("run").at("config_hash").get<std::string>();
        r.wall_seconds = j.at("run").at("wall_seconds").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report is malformed: ") + e.what());
    }
    return r;
}

size_t eval_threads() {
    const char* env = std::getenv("STA_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
        throw ConfigError("STA_THREADS must be a positive integer, got '" + std::string(env) +
                          "'");
    }
    size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return std::min(static_cast<size_t>(v), hw);
}

std::vector<std::vector<Prediction>> predict_scenes(const ModelBundle& bundle, bool use_oa,
                                                    std::span<const Scene> scenes) {
    std::vector<std::vector<Prediction>> out(scenes.size());
    size_t workers = std::min(eval_threads(), scenes.empty() ? size_t{1} : scenes.size());
    if (workers <= 1) {
        for (size_t i = 0; i < scenes.size(); ++i) {
            out[i] = predict_scene(bundle, use_oa, scenes[i]);
        }
        return out;
    }
    // Scenes are independent; stride-partition them across the workers.
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (size_t i = w; i < scenes.size(); i += workers) {
                    out[i] = predict_scene(bundle, use_oa, scenes[i]);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

World world_for_setting(const World& world, Setting setting, uint64_t seed) {
    if (setting != Setting::detected) return world;
    // Mimic detector output: every box is replaced by a jittered copy that
    // keeps at least half its overlap with the annotated box.
    constexpr double kDetectedIouMin = 0.5;
    World noisy = world;
    auto jitter = [&](std::vector<Scene>& scenes, uint64_t salt) {
        for (Scene& scene : scenes) {
            for (size_t i = 0; i < scene.objects.size(); ++i) {
                uint64_t s = derive_seed(seed, {tag_hash("detected"), salt, scene.id, i});
                std::vector<Box> jittered = augment_rois(scene.objects[i].box, 2, kDetectedIouMin,
                                                         scene.map.width, scene.map.height, s);
                scene.objects[i].box = jittered[1];
            }
        }
    };
    jitter(noisy.train, 0);
    jitter(noisy.test, 1);
    return noisy;
}

MetricsReport evaluate_bundle(const ModelBundle& bundle, bool use_oa, const World& world,
                              Setting setting, uint64_t seed, const std::string& cfg_hash) {
    MetricsReport r;
    r.setting = to_string(setting);
    r.seed = seed;
    r.config_hash = cfg_hash;

    std::vector<std::vector<Prediction>> preds = predict_scenes(bundle, use_oa, world.test);
    std::vector<std::vector<GroundTruth>> truths =
        setting == Setting::zero_shot ? holdout_truths_of(world.test, world.holdouts)
                                      : truths_of(world.test);
    r.recall_50 = recall_at_k(preds, truths, 50);
    r.recall_100 = recall_at_k(preds, truths, 100);
    r.per_relation = per_relation_accuracy(bundle, use_oa, world.test);
    r.overlap_ratio_projected = mean_overlap_ratio(bundle, world.test, /*projected=*/true);
    r.overlap_ratio_raw = mean_overlap_ratio(bundle, world.test, /*projected=*/false);
    r.alignment = alignment_recovery(bundle, use_oa, world.test);
    r.alignment_baseline = alignment_recovery_baseline(world.test);

    std::vector<BiasPoint> bias = relation_bias(world.train, bundle.config.relations);
    for (const BiasPoint& b : bias) {
        CurvePoint p;
        p.relation = b.relation;
        p.bias = b.bias;
        p.count = b.count;
        p.accuracy = r.per_relation[b.relation].accuracy;
        r.curve.push_back(p);
    }
    return r;
}

VariantRun run_variant(Variant variant, const World& world, const ExperimentConfig& cfg,
                       Setting setting, uint64_t seed, std::ostream* log,
                       const ModelBundle* shared_pretrain) {
    auto started = std::chrono::steady_clock::now();
    World active = world_for_setting(world, setting, seed);

    NetConfig net = cfg.net;
    if (variant == Variant::sta_nores) net.residual_transforms = false;

    VariantRun run{make_bundle(net, seed), true, {}, {}, 0.0};

    bool wants_pretrain =
        variant == Variant::sta || variant == Variant::sta_noft || variant == Variant::sta_nores;
    if (wants_pretrain) {
        if (shared_pretrain != nullptr) {
            run.bundle = *shared_pretrain;
        } else {
            PretrainSession session(net, cfg.pretrain, seed);
            run.pretrain_history = pretrain(session, active.train, log);
            run.bundle = std::move(session.bundle);
        }
    }

    FinetuneConfig ft = cfg.finetune;
    if (setting == Setting::weak) ft.mode = FinetuneMode::weak;
    switch (variant) {
        case Variant::base:
            ft.use_oa = false;
            ft.freeze_oa = false;
            break;
        case Variant::sta_noft:
            ft.use_oa = true;
            ft.freeze_oa = true;
            break;
        default:
            ft.use_oa = true;
            ft.freeze_oa = false;
            break;
    }
    run.use_oa = ft.use_oa;

    FinetuneSession ft_session(std::move(run.bundle), ft, seed);
    run.finetune_history = finetune(ft_session, active.train, log);
    run.bundle = std::move(ft_session.bundle);

    run.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return run;
}

AblationOutcome run_ablation(const World& world, const ExperimentConfig& cfg, Setting setting,
                             uint64_t seed, std::ostream* log) {
    std::string cfg_hash = config_hash(cfg.to_json());
    World active = world_for_setting(world, setting, seed);

    // The full method's pre-training is shared with the frozen variant.
    ModelBundle sta_pretrained = make_bundle(cfg.net, seed);
    {
        if (log != nullptr) (*log) << "== pretraining (shared by sta and sta_noft) ==\n";
        PretrainSession session(cfg.net, cfg.pretrain, seed);
        pretrain(session, active.train, log);
        sta_pretrained = std::move(session.bundle);
    }

    AblationOutcome outcome;
    for (Variant v : all_variants()) {
        if (log != nullptr) (*log) << "== variant " << to_string(v) << " ==\n";
        auto started = std::chrono::steady_clock::now();
        const ModelBundle* shared =
            (v == Variant::sta || v == Variant::sta_noft) ? &sta_pretrained : nullptr;
        VariantRun run = run_variant(v, world, cfg, setting, seed, log, shared);
        MetricsReport report =
            evaluate_bundle(run.bundle, run.use_oa, active, setting, seed, cfg_hash);
        report.variant = to_string(v);
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        outcome.reports.emplace_back(v, std::move(report));
    }
    return outcome;
}

// --- Output files ------------------------------------------------------------

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report) {
    write_text_file(path, report.to_json().dump(2) + "\n");
}

void write_per_relation_csv(const std::filesystem::path& path, const MetricsReport& report) {
    std::ostringstream out;
    out << "relation,correct,total,accuracy\n";
    for (const RelationAccuracy& a : report.per_relation) {
        out << a.relation << "," << a.correct << "," << a.total << "," << a.accuracy << "\n";
    }
    write_text_file(path, out.str());
}

void write_bias_curve_csv(const std::filesystem::path& path, const MetricsReport& report) {
    std::ostringstream out;
    out << "rank,relation,bias,count,accuracy\n";
    for (size_t i = 0; i < report.curve.size(); ++i) {
        const CurvePoint& p = report.curve[i];
        out << i << "," << p.relation << "," << p.bias << "," << p.count << "," << p.accuracy
            << "\n";
    }
    write_text_file(path, out.str());
}

void write_summary_csv(const std::filesystem::path& path,
                       std::span<const MetricsReport> reports) {
    std::ostringstream out;
    out << "variant,setting,seed,recall_50,recall_100,overlap_projected,overlap_raw,alignment,"
           "alignment_baseline,wall_seconds\n";
    for (const MetricsReport& r : reports) {
        out << r.variant << "," << r.setting << "," << r.seed << "," << r.recall_50 << ","
            << r.recall_100 << "," << r.overlap_ratio_projected << "," << r.overlap_ratio_raw
            << "," << r.alignment << "," << r.alignment_baseline << "," << r.wall_seconds << "\n";
    }
    write_text_file(path, out.str());
}

namespace {

std::string svg_header(size_t width, size_t height, const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"16\">" << title << "</text>\n";
    return out.str();
}

}  // namespace

void write_recall_bar_svg(const std::filesystem::path& path,
                          std::span<const MetricsReport> reports) {
    const size_t width = 640, height = 400;
    const double left = 60, right = 20, top = 50, bottom = 60;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    std::ostringstream out;
    out << svg_header(width, height, "Recall@50 by variant");
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double frac = tick / 4.0;
        double y = top + plot_h * (1.0 - frac);
        out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << frac
            << "</text>\n";
        out << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\""
            << y << "\" stroke=\"black\"/>\n";
    }
    if (!reports.empty()) {
        double slot = plot_w / static_cast<double>(reports.size());
        for (size_t i = 0; i < reports.size(); ++i) {
            double value = std::clamp(reports[i].recall_50, 0.0, 1.0);
            double bar_w = slot * 0.6;
            double x = left + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
            double h = plot_h * value;
            out << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w
                << "\" height=\"" << h << "\" fill=\"#4878a8\"/>\n";
            out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + plot_h - h - 6
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
                << reports[i].recall_50 << "</text>\n";
            out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << top + plot_h + 18
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
                << reports[i].variant << "</text>\n";
        }
    }
    out << "</svg>\n";
    write_text_file(path, out.str());
}

void write_bias_curve_svg(const std::filesystem::path& path, const MetricsReport& report) {
    const size_t width = 640, height = 400;
    const double left = 60, right = 20, top = 50, bottom = 60;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    std::ostringstream out;
    out << svg_header(width, height, "Accuracy by relation bias (ascending)");
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    if (!report.curve.empty()) {
        size_t n = report.curve.size();
        auto px = [&](size_t i) {
            return n == 1 ? left + plot_w / 2
                          : left + plot_w * static_cast<double>(i) / static_cast<double>(n - 1);
        };
        auto py = [&](double acc) { return top + plot_h * (1.0 - std::clamp(acc, 0.0, 1.0)); };
        out << "<polyline fill=\"none\" stroke=\"#a84848\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < n; ++i) {
            out << px(i) << "," << py(report.curve[i].accuracy) << " ";
        }
        out << "\"/>\n";
        for (size_t i = 0; i < n; ++i) {
            out << "<circle cx=\"" << px(i) << "\" cy=\"" << py(report.curve[i].accuracy)
                << "\" r=\"3\" fill=\"#a84848\"/>\n";
            out << "<text x=\"" << px(i) << "\" y=\"" << top + plot_h + 18
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">r"
                << report.curve[i].relation << "</text>\n";
        }
    }
    out << "</svg>\n";
    write_text_file(path, out.str());
}

}  // namespace sta
