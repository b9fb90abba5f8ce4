#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sta/dataworld.hpp"
#include "sta/metrics.hpp"
#include "sta/trainer.hpp"

namespace sta {

// Evaluation protocol. `supervised` trains and evaluates on ground-truth
// boxes and labels; `detected` jitters every box to mimic detector output;
// `weak` trains from image-level relation labels only; `zero_shot` trains
// supervised but scores only the held-out compositions at test time.
enum class Setting { supervised, detected, weak, zero_shot };

Setting setting_from_string(const std::string& name);
std::string to_string(Setting s);

// Model variants of the ablation study:
//   base       raw pooled features, classifier only
//   base_oa    projection + classifier trained from scratch
//   sta_noft   adversarially pre-trained projection, frozen during finetune
//   sta_nores  pre-training with plain (non-residual) transforms
//   sta        full method: pre-trained projection, finetuned end to end
enum class Variant { base, base_oa, sta_noft, sta_nores, sta };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);
std::vector<Variant> all_variants();

struct ExperimentConfig {
    WorldSpec world;
    NetConfig net;
    PretrainConfig pretrain;
    FinetuneConfig finetune;

    json to_json() const;
    static ExperimentConfig from_json(const json& j);
};

// One row of the bias/accuracy curve: relations ordered by dataset bias.
struct CurvePoint {
    size_t relation = 0;
    double bias = 0.0;
    size_t count = 0;
    double accuracy = 0.0;
};

struct MetricsReport {
    std::string setting;
    std::string variant;
    double recall_50 = 0.0;
    double recall_100 = 0.0;
    std::vector<RelationAccuracy> per_relation;
    double overlap_ratio_projected = 0.0;
    double overlap_ratio_raw = 0.0;
    double alignment = 0.0;
    double alignment_baseline = 0.0;
    std::vector<CurvePoint> curve;
    uint64_t seed = 0;
    std::string config_hash;
    double wall_seconds = 0.0;

    json to_json() const;
    static MetricsReport from_json(const json& j);
};

// Number of worker threads for evaluation, from the STA_THREADS environment
// variable (default 1; clamped to the hardware concurrency; garbage values
// are a ConfigError).
size_t eval_threads();

// Predictions for every scene, computed with eval_threads() workers.
std::vector<std::vector<Prediction>> predict_scenes(const ModelBundle& bundle, bool use_oa,
                                                    std::span<const Scene> scenes);

// Full evaluation of a trained bundle on a world under the given setting.
MetricsReport evaluate_bundle(const ModelBundle& bundle, bool use_oa, const World& world,
                              Setting setting, uint64_t seed, const std::string& cfg_hash);

struct VariantRun {
    ModelBundle bundle;
    bool use_oa = true;
    PretrainResult pretrain_history;
    FinetuneResult finetune_history;
    double wall_seconds = 0.0;
};

// Trains one variant end to end (pre-training where the variant calls for it,
// then fine-tuning per the setting). `shared_pretrain`, when given, supplies
// an already pre-trained bundle so variants can share one pre-training run.
VariantRun run_variant(Variant variant, const World& world, const ExperimentConfig& cfg,
                       Setting setting, uint64_t seed, std::ostream* log = nullptr,
                       const ModelBundle* shared_pretrain = nullptr);

struct AblationOutcome {
    std::vector<std::pair<Variant, MetricsReport>> reports;
};

// Runs every variant on one world and seed; the sta pre-training is shared
// with sta_noft.
AblationOutcome run_ablation(const World& world, const ExperimentConfig& cfg, Setting setting,
                             uint64_t seed, std::ostream* log = nullptr);

// The world used for training/evaluation under a setting (detected jitters
// every box; other settings use the world unchanged).
World world_for_setting(const World& world, Setting setting, uint64_t seed);

// --- Output files ------------------------------------------------------------

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& report);
void write_per_relation_csv(const std::filesystem::path& path, const MetricsReport& report);
void write_bias_curve_csv(const std::filesystem::path& path, const MetricsReport& report);
void write_summary_csv(const std::filesystem::path& path,
                       std::span<const MetricsReport> reports);
void write_recall_bar_svg(const std::filesystem::path& path,
                          std::span<const MetricsReport> reports);
void write_bias_curve_svg(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace sta
