#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include "sta/dataworld.hpp"
#include "sta/nets.hpp"
#include "sta/objectives.hpp"
#include "sta/optim.hpp"

namespace sta {

// Adversarial pre-training hyperparameters. Mini-batches are single scenes;
// within a scene, every discriminator round runs `d_steps_per_g` SGD updates
// before one Adam update of the generator side (projection + transforms).
struct PretrainConfig {
    size_t epochs = 20;
    double d_lr = 1e-3;
    double g_lr = 3e-4;
    size_t d_steps_per_g = 3;
    double lambda_cycle = 10.0;
    GanVariant variant = GanVariant::least_squares;
    size_t pairs_per_image = 128;  // per-domain cap on boxes before augmentation
    size_t rois_per_box = 10;      // jittered copies per box, original included
    double iou_min = 0.7;          // jitter IoU threshold

    void validate() const;
    json to_json() const;
    static PretrainConfig from_json(const json& j);
};

enum class FinetuneMode { supervised, weak };

struct FinetuneConfig {
    size_t epochs = 50;
    double lr = 2e-4;
    FinetuneMode mode = FinetuneMode::supervised;
    bool use_oa = true;      // false: classifier reads raw pooled features
    bool freeze_oa = false;  // keep the projection fixed while fitting the classifier
    size_t max_pairs = 128;  // cap on candidate pairs per scene in weak mode
    size_t max_scenes = 32;  // labeled-scene budget (0: use every scene)

    void validate() const;
    json to_json() const;
    static FinetuneConfig from_json(const json& j);
};

// The two unpaired RoI domains extracted from one scene: subject boxes and
// object boxes, each treated as an unordered multiset (sorted canonically,
// capped, shuffled and augmented without ever consulting which subject was
// linked to which object).
struct DomainBatch {
    std::vector<Box> a;
    std::vector<Box> b;
};

DomainBatch build_domains(const Scene& scene, const PretrainConfig& cfg, uint64_t seed,
                          size_t epoch);

struct PretrainEpochStats {
    size_t epoch = 0;
    double adv_d_a = 0.0;
    double adv_d_b = 0.0;
    double adv_gen = 0.0;
    double cycle = 0.0;
    double total = 0.0;
    size_t d_updates = 0;
    size_t g_updates = 0;
    size_t scenes_used = 0;
    size_t scenes_skipped = 0;
    long clamp_events = 0;
};

struct PretrainResult {
    std::vector<PretrainEpochStats> history;
};

// Everything needed to run or resume pre-training deterministically: model,
// optimizer state, the epoch counter, and the root seed. All per-step
// randomness is derived from (seed, epoch, scene id), so a resumed session
// continues bit-identically.
struct PretrainSession {
    ModelBundle bundle;
    PretrainConfig config;
    Adam g_opt;
    Sgd d_opt;
    size_t next_epoch = 0;
    uint64_t seed = 0;

    PretrainSession(const NetConfig& net, const PretrainConfig& cfg, uint64_t seed);
};

// Runs epochs [session.next_epoch, config.epochs). Returns per-epoch loss
// statistics; DataError if an epoch finds no usable scene.
PretrainResult pretrain(PretrainSession& session, std::span<const Scene> train,
                        std::ostream* log = nullptr);

struct FinetuneEpochStats {
    size_t epoch = 0;
    double loss = 0.0;
    size_t updates = 0;
    size_t scenes_used = 0;
    size_t scenes_skipped = 0;
};

struct FinetuneResult {
    std::vector<FinetuneEpochStats> history;
};

struct FinetuneSession {
    ModelBundle bundle;
    FinetuneConfig config;
    Adam opt;
    size_t next_epoch = 0;
    uint64_t seed = 0;

    FinetuneSession(ModelBundle bundle, const FinetuneConfig& cfg, uint64_t seed);
};

FinetuneResult finetune(FinetuneSession& session, std::span<const Scene> train,
                        std::ostream* log = nullptr);

// --- Checkpoints -------------------------------------------------------------
// One binary container for pre-training sessions, fine-tuning sessions and
// bare model bundles. Loading verifies magic, version and a trailing CRC-32
// before touching any state; kind mismatches and unknown parameter sets are
// format errors.

void save_pretrain_checkpoint(const PretrainSession& session, const std::filesystem::path& path);
PretrainSession load_pretrain_checkpoint(const std::filesystem::path& path);

void save_finetune_checkpoint(const FinetuneSession& session, const std::filesystem::path& path);
FinetuneSession load_finetune_checkpoint(const std::filesystem::path& path);

void save_bundle(const ModelBundle& bundle, uint64_t seed, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path, uint64_t* seed_out = nullptr);

// Kind label of a checkpoint ("pretrain", "finetune" or "bundle"), after the
// usual magic/version/checksum validation.
std::string checkpoint_kind(const std::filesystem::path& path);

}  // namespace sta
