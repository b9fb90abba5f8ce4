#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "sta/errors.hpp"
#include "sta/experiment.hpp"
#include "sta/metrics.hpp"

using namespace sta;

namespace {

// Compact world + matching net so end-to-end wiring tests stay fast.
ExperimentConfig micro_config() {
    ExperimentConfig cfg;
    cfg.world.categories = 4;
    cfg.world.relations = 4;
    cfg.world.channels = 11;  // 4 categories + marker + 2 roles + 4 code channels
    cfg.world.train_scenes = 4;
    cfg.world.test_scenes = 2;
    cfg.world.holdout_compositions = 2;
    cfg.net.channels = 11;
    cfg.net.relations = 4;
    cfg.net.hidden = 12;
    cfg.net.transform_hidden = 6;
    cfg.net.pool_size = 2;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.rois_per_box = 2;
    cfg.finetune.epochs = 1;
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("setting and variant names round trip") {
    // [TRIVIAL]
    for (Setting s : {Setting::supervised, Setting::detected, Setting::weak, Setting::zero_shot}) {
        CHECK(setting_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(setting_from_string("unsupervised"), ConfigError);

    std::vector<Variant> vs = all_variants();
    CHECK(vs.size() == 5);
    for (Variant v : vs) CHECK(variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(variant_from_string("resnet"), ConfigError);
}

TEST_CASE("experiment config JSON wiring and cross-checks") {
    // [TRIVIAL] round trip; [DERIVED] net/world disagreements are rejected at
    // parse time so a bad file cannot start a doomed run.
    ExperimentConfig cfg = micro_config();
    ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(canonical_json(back.to_json()) == canonical_json(cfg.to_json()));

    json bad_rel = cfg.to_json();
    bad_rel["net"]["relations"] = 7;
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad_rel), ConfigError);

    json bad_ch = cfg.to_json();
    bad_ch["net"]["channels"] = 20;
    CHECK_THROWS_AS(ExperimentConfig::from_json(bad_ch), ConfigError);
}

TEST_CASE("metrics report JSON round trip and malformed input") {
    MetricsReport r;
    r.setting = "supervised";
    r.variant = "sta";
    r.recall_50 = 0.75;
    r.recall_100 = 0.875;
    r.per_relation = {RelationAccuracy{0, 3, 4, 0.75}, RelationAccuracy{1, 0, 0, 0.0}};
    r.overlap_ratio_projected = 0.62;
    r.overlap_ratio_raw = 0.41;
    r.alignment = 0.7;
    r.alignment_baseline = 0.23;
    r.curve = {CurvePoint{1, 0.0, 0, 0.0}, CurvePoint{0, 2.0, 4, 0.75}};
    r.seed = 42;
    r.config_hash = "deadbeefdeadbeef";
    r.wall_seconds = 1.5;

    MetricsReport back = MetricsReport::from_json(r.to_json());
    CHECK(canonical_json(back.to_json()) == canonical_json(r.to_json()));

    // [TRIVIAL] malformed documents surface as format errors, not libraries'.
    json wrong_type = r.to_json();
    wrong_type["recall_50"] = "high";
    CHECK_THROWS_AS(MetricsReport::from_json(wrong_type), FormatError);
    CHECK_THROWS_AS(MetricsReport::from_json(json::object()), FormatError);
}

TEST_CASE("evaluation thread count comes from the environment") {
    // [TRIVIAL] default 1; explicit counts clamp to the hardware; garbage is
    // a config error rather than a silent fallback.
    unsetenv("STA_THREADS");
    CHECK(eval_threads() == 1);
    setenv("STA_THREADS", "", 1);
    CHECK(eval_threads() == 1);
    setenv("STA_THREADS", "1", 1);
    CHECK(eval_threads() == 1);

    size_t hw = std::max<size_t>(1, std::thread::hardware_concurrency());
    setenv("STA_THREADS", "3", 1);
    CHECK(eval_threads() == std::min<size_t>(3, hw));

    for (const char* bad : {"0", "-2", "abc", "2x", "1.5"}) {
        setenv("STA_THREADS", bad, 1);
        CHECK_THROWS_AS(eval_threads(), ConfigError);
    }
    unsetenv("STA_THREADS");
}

TEST_CASE("world_for_setting jitters boxes only for the detected protocol") {
    // [DERIVED] non-detected settings pass the world through unchanged;
    // detected keeps maps, labels and links but replaces every box with a
    // jitter of at least 0.5 IoU, deterministically in the seed.
    ExperimentConfig cfg = micro_config();
    World w = generate_world(cfg.world, 13);

    for (Setting s : {Setting::supervised, Setting::weak, Setting::zero_shot}) {
        World same = world_for_setting(w, s, 13);
        REQUIRE(same.train.size() == w.train.size());
        for (size_t i = 0; i < w.train.size(); ++i) {
            CHECK(same.train[i].map.data.data == w.train[i].map.data.data);
            for (size_t j = 0; j < w.train[i].objects.size(); ++j) {
                CHECK(same.train[i].objects[j].box == w.train[i].objects[j].box);
            }
        }
    }

    World det = world_for_setting(w, Setting::detected, 13);
    size_t moved = 0;
    auto check_split = [&](const std::vector<Scene>& orig, const std::vector<Scene>& jit) {
        REQUIRE(orig.size() == jit.size());
        for (size_t i = 0; i < orig.size(); ++i) {
            CHECK(jit[i].map.data.data == orig[i].map.data.data);
            REQUIRE(jit[i].objects.size() == orig[i].objects.size());
            for (size_t j = 0; j < orig[i].objects.size(); ++j) {
                const Box& a = orig[i].objects[j].box;
                const Box& b = jit[i].objects[j].box;
                CHECK(jit[i].objects[j].category == orig[i].objects[j].category);
                CHECK(iou(a, b) >= 0.5);
                if (!(a == b)) ++moved;
            }
            for (size_t j = 0; j < orig[i].triplets.size(); ++j) {
                CHECK(jit[i].triplets[j].subject == orig[i].triplets[j].subject);
                CHECK(jit[i].triplets[j].object == orig[i].triplets[j].object);
                CHECK(jit[i].triplets[j].relation == orig[i].triplets[j].relation);
            }
        }
    };
    check_split(w.train, det.train);
    check_split(w.test, det.test);
    CHECK(moved > 0);

    World det2 = world_for_setting(w, Setting::detected, 13);
    for (size_t i = 0; i < det.test.size(); ++i) {
        for (size_t j = 0; j < det.test[i].objects.size(); ++j) {
            CHECK(det2.test[i].objects[j].box == det.test[i].objects[j].box);
        }
    }
}

TEST_CASE("parallel scene prediction equals the sequential loop") {
    // [DERIVED] thread partitioning must not change results or order.
    ExperimentConfig cfg = micro_config();
    World w = generate_world(cfg.world, 17);
    ModelBundle bundle = make_bundle(cfg.net, 17);

    unsetenv("STA_THREADS");
    std::vector<std::vector<Prediction>> seq = predict_scenes(bundle, true, w.test);
    REQUIRE(seq.size() == w.test.size());
    for (size_t i = 0; i < w.test.size(); ++i) {
        std::vector<Prediction> one = predict_scene(bundle, true, w.test[i]);
        REQUIRE(seq[i].size() == one.size());
        for (size_t j = 0; j < one.size(); ++j) {
            CHECK(seq[i][j].confidence == one[j].confidence);
            CHECK(seq[i][j].relation == one[j].relation);
            CHECK(seq[i][j].subject == one[j].subject);
            CHECK(seq[i][j].object == one[j].object);
        }
    }

    setenv("STA_THREADS", "2", 1);
    std::vector<std::vector<Prediction>> par = predict_scenes(bundle, true, w.test);
    unsetenv("STA_THREADS");
    REQUIRE(par.size() == seq.size());
    for (size_t i = 0; i < seq.size(); ++i) {
        REQUIRE(par[i].size() == seq[i].size());
        for (size_t j = 0; j < seq[i].size(); ++j) {
            CHECK(par[i][j].confidence == seq[i][j].confidence);
        }
    }
}

TEST_CASE("evaluate_bundle assembles exactly the module metrics") {
    // [DERIVED] the report is a deterministic assembly of the metric
    // functions on the test split (bias from the train split); zero-shot
    // swaps in the holdout-filtered truths.
    ExperimentConfig cfg = micro_config();
    World w = generate_world(cfg.world, 23);
    ModelBundle bundle = make_bundle(cfg.net, 23);

    MetricsReport r = evaluate_bundle(bundle, true, w, Setting::supervised, 23, "cafe");
    CHECK(r.setting == "supervised");
    CHECK(r.seed == 23);
    CHECK(r.config_hash == "cafe");

    std::vector<std::vector<Prediction>> preds = predict_scenes(bundle, true, w.test);
    auto truths = truths_of(w.test);
    CHECK(r.recall_50 == recall_at_k(preds, truths, 50));
    CHECK(r.recall_100 == recall_at_k(preds, truths, 100));
    CHECK(r.overlap_ratio_projected == mean_overlap_ratio(bundle, w.test, true));
    CHECK(r.overlap_ratio_raw == mean_overlap_ratio(bundle, w.test, false));
    CHECK(r.alignment == alignment_recovery(bundle, true, w.test));
    CHECK(r.alignment_baseline == alignment_recovery_baseline(w.test));
    REQUIRE(r.per_relation.size() == cfg.net.relations);
    REQUIRE(r.curve.size() == cfg.net.relations);
    for (size_t i = 1; i < r.curve.size(); ++i) CHECK(r.curve[i - 1].bias <= r.curve[i].bias);
    for (const CurvePoint& p : r.curve) {
        CHECK(p.accuracy == r.per_relation[p.relation].accuracy);
    }

    MetricsReport z = evaluate_bundle(bundle, true, w, Setting::zero_shot, 23, "cafe");
    auto holdout_truths = holdout_truths_of(w.test, w.holdouts);
    CHECK(z.recall_50 == recall_at_k(preds, holdout_truths, 50));
    CHECK(z.setting == "zero_shot");

    // Determinism: running the same evaluation twice gives the same report.
    MetricsReport again = evaluate_bundle(bundle, true, w, Setting::supervised, 23, "cafe");
    CHECK(canonical_json(again.to_json()) == canonical_json(r.to_json()));
}

TEST_CASE("run_variant wires pretraining and projection per variant") {
    // [DERIVED] base skips both the projection and pre-training; base_oa
    // trains the projection from scratch; sta pre-trains it (or adopts a
    // shared pre-trained bundle); sta_nores switches the transforms to the
    // plain parameterization.
    ExperimentConfig cfg = micro_config();
    World w = generate_world(cfg.world, 29);

    VariantRun base = run_variant(Variant::base, w, cfg, Setting::supervised, 29);
    CHECK_FALSE(base.use_oa);
    CHECK(base.pretrain_history.history.empty());
    CHECK(base.finetune_history.history.size() == cfg.finetune.epochs);
    CHECK(base.wall_seconds > 0.0);

    VariantRun base_oa = run_variant(Variant::base_oa, w, cfg, Setting::supervised, 29);
    CHECK(base_oa.use_oa);
    CHECK(base_oa.pretrain_history.history.empty());

    VariantRun sta = run_variant(Variant::sta, w, cfg, Setting::supervised, 29);
    CHECK(sta.use_oa);
    CHECK(sta.pretrain_history.history.size() == cfg.pretrain.epochs);

    VariantRun nores = run_variant(Variant::sta_nores, w, cfg, Setting::supervised, 29);
    CHECK_FALSE(nores.bundle.config.residual_transforms);
    CHECK(sta.bundle.config.residual_transforms);

    // A shared pre-trained bundle is adopted verbatim: no new pre-training,
    // and the projection weights enter fine-tuning from the shared state.
    PretrainSession shared(cfg.net, cfg.pretrain, 29);
    pretrain(shared, w.train);
    VariantRun adopted =
        run_variant(Variant::sta, w, cfg, Setting::supervised, 29, nullptr, &shared.bundle);
    CHECK(adopted.pretrain_history.history.empty());

    // sta_noft freezes the projection: it must leave fine-tuning with the
    // shared bundle's projection bit-intact.
    VariantRun frozen =
        run_variant(Variant::sta_noft, w, cfg, Setting::supervised, 29, nullptr, &shared.bundle);
    CHECK(frozen.bundle.oa.proj.w.data == shared.bundle.oa.proj.w.data);
    CHECK(frozen.bundle.oa.proj.b.data == shared.bundle.oa.proj.b.data);
    CHECK(adopted.bundle.oa.proj.w.data != shared.bundle.oa.proj.w.data);
}

TEST_CASE("report writers emit the documented formats") {
    // [TRIVIAL] headers and basic shape; content forms are covered by the
    // metric tests.
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "sta_report_test";
    fs::create_directories(dir);

    MetricsReport r;
    r.setting = "supervised";
    r.variant = "sta";
    r.recall_50 = 0.5;
    r.per_relation = {RelationAccuracy{0, 1, 2, 0.5}};
    r.curve = {CurvePoint{0, 1.0, 2, 0.5}};
    r.config_hash = "beef";

    write_metrics_json(dir / "m.json", r);
    json parsed = json::parse(slurp(dir / "m.json"));
    CHECK(parsed.at("recall_50").get<double>() == 0.5);

    write_per_relation_csv(dir / "pr.csv", r);
    std::string pr = slurp(dir / "pr.csv");
    CHECK(pr.rfind("relation,correct,total,accuracy\n", 0) == 0);
    CHECK(pr.find("0,1,2,0.5") != std::string::npos);

    write_bias_curve_csv(dir / "bc.csv", r);
    CHECK(slurp(dir / "bc.csv").rfind("rank,relation,bias,count,accuracy\n", 0) == 0);

    std::vector<MetricsReport> reports = {r};
    write_summary_csv(dir / "s.csv", reports);
    std::string summary = slurp(dir / "s.csv");
    CHECK(summary.rfind("variant,setting,seed,recall_50,recall_100,overlap_projected,"
                        "overlap_raw,alignment,alignment_baseline,wall_seconds\n",
                        0) == 0);
    CHECK(summary.find("sta,supervised") != std::string::npos);

    write_recall_bar_svg(dir / "r.svg", reports);
    std::string svg = slurp(dir / "r.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);

    write_bias_curve_svg(dir / "b.svg", r);
    std::string bsvg = slurp(dir / "b.svg");
    CHECK(bsvg.find("<svg") != std::string::npos);

    fs::remove_all(dir);
}
