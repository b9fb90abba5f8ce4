#include "sta/cli.hpp"

#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sta/errors.hpp"
#include "sta/experiment.hpp"

namespace sta::cli {

namespace {

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(j);
}

void check_world_compat(const World& world, const NetConfig& net) {
    if (world.spec.relations != net.relations) {
        throw ConfigError("world has " + std::to_string(world.spec.relations) +
                          " relations but the model expects " + std::to_string(net.relations));
    }
    if (world.spec.channels != net.channels) {
        throw ConfigError("world has " + std::to_string(world.spec.channels) +
                          " channels but the model expects " + std::to_string(net.channels));
    }
}

void write_report_files(const std::filesystem::path& dir, const MetricsReport& report,
                        const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_metrics_json(dir / (stem + "metrics.json"), report);
    write_per_relation_csv(dir / (stem + "per_relation.csv"), report);
    write_bias_curve_csv(dir / (stem + "bias_curve.csv"), report);
    write_bias_curve_svg(dir / (stem + "bias_curve.svg"), report);
}

void print_report_line(std::ostream& out, const MetricsReport& r) {
    out << r.variant << " [" << r.setting << "] recall@50=" << r.recall_50
        << " recall@100=" << r.recall_100 << " overlap=" << r.overlap_ratio_projected
        << " alignment=" << r.alignment << " (baseline " << r.alignment_baseline << ")\n";
}

struct GenArgs {
    std::string config, out;
    uint64_t seed = 0;
};

struct PretrainArgs {
    std::string config, data, out, resume;
    uint64_t seed = 0;
    size_t epochs = 0;  // 0: keep the configured count
};

struct FinetuneArgs {
    std::string config, data, out, resume, checkpoint;
    std::string variant = "sta";
    std::string setting = "supervised";
    uint64_t seed = 0;
    size_t epochs = 0;
};

struct EvalArgs {
    std::string config, data, checkpoint, out;
    std::string setting = "supervised";
    std::string variant = "model";
};

struct AblateArgs {
    std::string config, data, out;
    std::string setting = "supervised";
    std::string variant;  // empty: all
    uint64_t seed = 0;
};

struct ReportArgs {
    std::string out;
    std::vector<std::string> inputs;
};

int run_gen(const GenArgs& a, std::ostream& out) {
    ExperimentConfig cfg = load_config(a.config);
    World world = generate_world(cfg.world, a.seed);
    save_world(world, a.out);
    size_t train_triplets = 0, test_triplets = 0;
    for (const Scene& s : world.train) train_triplets += s.triplets.size();
    for (const Scene& s : world.test) test_triplets += s.triplets.size();
    out << "wrote " << a.out << ": " << world.train.size() << " train scenes ("
        << train_triplets << " triplets), " << world.test.size() << " test scenes ("
        << test_triplets << " triplets), " << world.holdouts.size()
        << " held-out compositions\n";
    return 0;
}

int run_pretrain(const PretrainArgs& a, std::ostream& out) {
    World world = load_world(a.data);
    if (!a.resume.empty() && !a.config.empty()) {
        throw ConfigError("--resume uses the configuration stored in the checkpoint; "
                          "drop --config");
    }
    PretrainSession session = [&]() {
        if (!a.resume.empty()) return load_pretrain_checkpoint(a.resume);
        ExperimentConfig cfg = load_config(a.config);
        return PretrainSession(cfg.net, cfg.pretrain, a.seed);
    }();
    check_world_compat(world, session.bundle.config);
    if (a.epochs > 0) session.config.epochs = a.epochs;

    PretrainResult result = pretrain(session, world.train, &out);
    save_pretrain_checkpoint(session, a.out);
    out << "wrote " << a.out << " after epoch " << session.next_epoch;
    if (!result.history.empty()) out << " (total=" << result.history.back().total << ")";
    out << "\n";
    return 0;
}

int run_finetune(const FinetuneArgs& a, std::ostream& out) {
    World world = load_world(a.data);
    Setting setting = setting_from_string(a.setting);

    FinetuneSession session = [&]() {
        if (!a.resume.empty()) {
            if (!a.config.empty()) {
                throw ConfigError("--resume uses the configuration stored in the checkpoint; "
                                  "drop --config");
            }
            return load_finetune_checkpoint(a.resume);
        }
        ExperimentConfig cfg = load_config(a.config);
        Variant variant = variant_from_string(a.variant);
        bool wants_ckpt = variant == Variant::sta || variant == Variant::sta_noft ||
                          variant == Variant::sta_nores;
        if (wants_ckpt && a.checkpoint.empty()) {
            throw ConfigError("variant '" + a.variant + "' needs --checkpoint with a "
                              "pre-training checkpoint");
        }
        if (!wants_ckpt && !a.checkpoint.empty()) {
            throw ConfigError("variant '" + a.variant + "' trains from scratch and takes no "
                              "pre-training checkpoint");
        }

        NetConfig net = cfg.net;
        if (variant == Variant::sta_nores) net.residual_transforms = false;
        ModelBundle bundle = make_bundle(net, a.seed);
        if (wants_ckpt) {
            PretrainSession pre = load_pretrain_checkpoint(a.checkpoint);
            if (variant == Variant::sta_nores && pre.bundle.config.residual_transforms) {
                throw ConfigError("variant sta_nores needs a checkpoint pre-trained with "
                                  "non-residual transforms");
            }
            bundle = std::move(pre.bundle);
        }

        FinetuneConfig ft = cfg.finetune;
        ft.mode = setting == Setting::weak ? FinetuneMode::weak : FinetuneMode::supervised;
        ft.use_oa = variant != Variant::base;
        ft.freeze_oa = variant == Variant::sta_noft;
        return FinetuneSession(std::move(bundle), ft, a.seed);
    }();
    check_world_compat(world, session.bundle.config);
    if (a.epochs > 0) session.config.epochs = a.epochs;

    World active = world_for_setting(world, setting, session.seed);
    FinetuneResult result = finetune(session, active.train, &out);
    save_finetune_checkpoint(session, a.out);
    out << "wrote " << a.out << " after epoch " << session.next_epoch;
    if (!result.history.empty()) out << " (loss=" << result.history.back().loss << ")";
    out << "\n";
    return 0;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
    World world = load_world(a.data);
    Setting setting = setting_from_string(a.setting);

    std::string kind = checkpoint_kind(a.checkpoint);
    ModelBundle bundle = make_bundle(NetConfig{}, 0);
    bool use_oa = true;
    uint64_t seed = 0;
    json hashed;
    if (kind == "finetune") {
        FinetuneSession session = load_finetune_checkpoint(a.checkpoint);
        use_oa = session.config.use_oa;
        seed = session.seed;
        hashed["net"] = session.bundle.config.to_json();
        hashed["finetune"] = session.config.to_json();
        bundle = std::move(session.bundle);
    } else if (kind == "pretrain") {
        PretrainSession session = load_pretrain_checkpoint(a.checkpoint);
        seed = session.seed;
        hashed["net"] = session.bundle.config.to_json();
        hashed["pretrain"] = session.config.to_json();
        bundle = std::move(session.bundle);
    } else {
        bundle = load_bundle(a.checkpoint, &seed);
        hashed["net"] = bundle.config.to_json();
    }
    if (!a.config.empty()) hashed = load_config(a.config).to_json();
    check_world_compat(world, bundle.config);

    World active = world_for_setting(world, setting, seed);
    MetricsReport report =
        evaluate_bundle(bundle, use_oa, active, setting, seed, config_hash(hashed));
    report.variant = a.variant;
    write_report_files(a.out, report, "");
    print_report_line(out, report);
    out << "wrote metrics.json, per_relation.csv, bias_curve.csv, bias_curve.svg to " << a.out
        << "\n";
    return 0;
}

int run_ablate_cmd(const AblateArgs& a, std::ostream& out) {
    ExperimentConfig cfg = load_config(a.config);
    World world = a.data.empty() ? generate_world(cfg.world, a.seed) : load_world(a.data);
    check_world_compat(world, cfg.net);
    Setting setting = setting_from_string(a.setting);
    std::filesystem::create_directories(a.out);

    std::vector<MetricsReport> reports;
    if (!a.variant.empty()) {
        Variant v = variant_from_string(a.variant);
        VariantRun run = run_variant(v, world, cfg, setting, a.seed, &out);
        World active = world_for_setting(world, setting, a.seed);
        MetricsReport report = evaluate_bundle(run.bundle, run.use_oa, active, setting, a.seed,
                                               config_hash(cfg.to_json()));
        report.variant = to_string(v);
        report.wall_seconds = run.wall_seconds;
        reports.push_back(std::move(report));
    } else {
        AblationOutcome outcome = run_ablation(world, cfg, setting, a.seed, &out);
        for (auto& [v, report] : outcome.reports) reports.push_back(std::move(report));
    }

    for (const MetricsReport& r : reports) {
        write_report_files(a.out, r, r.variant + ".");
        print_report_line(out, r);
    }
    write_summary_csv(std::filesystem::path(a.out) / "summary.csv", reports);
    write_recall_bar_svg(std::filesystem::path(a.out) / "recall_bar.svg", reports);
    out << "wrote summary.csv and recall_bar.svg to " << a.out << "\n";
    return 0;
}

int run_report(const ReportArgs& a, std::ostream& out) {
    std::vector<MetricsReport> reports;
    for (const std::string& path : a.inputs) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open metrics file: " + path);
        json j;
        try {
            j = json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("metrics file " + path + " is not valid JSON: " + e.what());
        }
        reports.push_back(MetricsReport::from_json(j));
    }
    std::filesystem::create_directories(a.out);
    write_summary_csv(std::filesystem::path(a.out) / "summary.csv", reports);
    write_recall_bar_svg(std::filesystem::path(a.out) / "recall_bar.svg", reports);
    for (const MetricsReport& r : reports) print_report_line(out, r);
    out << "wrote summary.csv and recall_bar.svg to " << a.out << "\n";
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"synthetic visual-relationship pipeline: unpaired adversarial pre-training, "
                 "relation fine-tuning and evaluation"};
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene world");
    gen->add_option("--config", gen_args.config, "experiment config JSON file");
    gen->add_option("--seed", gen_args.seed, "root seed");
    gen->add_option("--out", gen_args.out, "output scene file")->required();

    PretrainArgs pre_args;
    auto* pre = app.add_subcommand("pretrain", "adversarially pre-train the feature projection");
    pre->add_option("--config", pre_args.config, "experiment config JSON file");
    pre->add_option("--seed", pre_args.seed, "root seed");
    pre->add_option("--data", pre_args.data, "scene file")->required();
    pre->add_option("--out", pre_args.out, "output checkpoint")->required();
    pre->add_option("--resume", pre_args.resume, "continue from a pre-training checkpoint");
    pre->add_option("--epochs", pre_args.epochs, "override the epoch budget");

    FinetuneArgs ft_args;
    auto* ft = app.add_subcommand("finetune", "train the relation classifier");
    ft->add_option("--config", ft_args.config, "experiment config JSON file");
    ft->add_option("--seed", ft_args.seed, "root seed");
    ft->add_option("--data", ft_args.data, "scene file")->required();
    ft->add_option("--out", ft_args.out, "output checkpoint")->required();
    ft->add_option("--variant", ft_args.variant,
                   "model variant (base, base_oa, sta_noft, sta_nores, sta)");
    ft->add_option("--checkpoint", ft_args.checkpoint, "pre-training checkpoint to start from");
    ft->add_option("--setting", ft_args.setting,
                   "training protocol (supervised, detected, weak, zero_shot)");
    ft->add_option("--resume", ft_args.resume, "continue from a fine-tuning checkpoint");
    ft->add_option("--epochs", ft_args.epochs, "override the epoch budget");

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a world's test scenes");
    ev->add_option("--config", eval_args.config, "experiment config JSON file (for the hash)");
    ev->add_option("--data", eval_args.data, "scene file")->required();
    ev->add_option("--checkpoint", eval_args.checkpoint, "checkpoint to evaluate")->required();
    ev->add_option("--setting", eval_args.setting,
                   "evaluation protocol (supervised, detected, weak, zero_shot)");
    ev->add_option("--variant", eval_args.variant, "label for the report");
    ev->add_option("--out", eval_args.out, "output directory")->required();

    AblateArgs ab_args;
    auto* ab = app.add_subcommand("ablate", "train and evaluate the model variants");
    ab->add_option("--config", ab_args.config, "experiment config JSON file");
    ab->add_option("--seed", ab_args.seed, "root seed");
    ab->add_option("--data", ab_args.data, "scene file (generated from the config when absent)");
    ab->add_option("--setting", ab_args.setting,
                   "protocol (supervised, detected, weak, zero_shot)");
    ab->add_option("--variant", ab_args.variant, "run a single variant instead of all");
    ab->add_option("--out", ab_args.out, "output directory")->required();

    ReportArgs rep_args;
    auto* rep = app.add_subcommand("report", "combine metrics files into a summary");
    rep->add_option("--out", rep_args.out, "output directory")->required();
    rep->add_option("inputs", rep_args.inputs, "metrics.json files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (gen->parsed()) return run_gen(gen_args, out);
        if (pre->parsed()) return run_pretrain(pre_args, out);
        if (ft->parsed()) return run_finetune(ft_args, out);
        if (ev->parsed()) return run_eval(eval_args, out);
        if (ab->parsed()) return run_ablate_cmd(ab_args, out);
        if (rep->parsed()) return run_report(rep_args, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    err << "error: no subcommand selected\n";
    return 1;
}

}  // namespace sta::cli
