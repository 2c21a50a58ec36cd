#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvlm/checkpoint.hpp"
#include "dvlm/data.hpp"
#include "dvlm/model.hpp"
#include "dvlm/optim.hpp"

namespace dvlm {

// "paper" keeps the published hyperparameters verbatim (lr 1e-5, tuned for
// 7B-scale models); "toy" multiplies the learning rate so the desk-scale model
// actually moves. Everything else matches across profiles.
enum class TrainProfile { paper, toy };

constexpr double kPaperLearningRate = 1e-5;
constexpr double kToyLearningRate = 1e-3;

enum class DatasetRole { captioning, instruction_qa };

struct TrainingStageConfig {
    int stage = 1;
    std::vector<std::string> freeze_prefixes;
    int epochs = 3;
    int batch_size = 8;
    OptimizerConfig optimizer;
    DatasetRole role = DatasetRole::captioning;
    uint64_t seed = 1;
    double grad_clip = 0.0;  // 0 = off

    void validate() const;
};

// Stage presets: stage 1 trains only the three projection layers (vision
// encoder, Q-Former incl. queries, and LM frozen) on captioning pairs for
// 3 epochs at batch 8; stage 2 unfreezes the Q-Former and queries (LM and
// vision stay frozen) on instruction QA for 2 epochs at batch 10. Both use
// AdamW with weight decay 0.05.
TrainingStageConfig configure_stage(int stage, TrainProfile profile = TrainProfile::paper);

// True when `name` falls under any freeze prefix.
bool in_freeze_set(const std::string& name, const std::vector<std::string>& freeze_prefixes);

// Sets every parameter's frozen flag to match the config's freeze set. The
// vision encoder can never be unfrozen.
void apply_freeze(VlmModel& model, const TrainingStageConfig& config);

struct LossCurve {
    struct Step {
        long step;
        int stage;
        double loss;
    };
    std::vector<Step> steps;
    std::vector<double> epoch_means;
};

void write_loss_csv(const std::string& path, const LossCurve& curve);
void write_epoch_means_csv(const std::string& path, const LossCurve& curve);
// Presentation-only SVG of the per-step losses.
void write_loss_svg(const std::string& path, const LossCurve& curve);

struct TrainResult {
    LossCurve curve;
    long steps_run = 0;
};

// Epochs x shuffled minibatches of masked-LM training. Refuses to run when the
// model's frozen flags disagree with config.freeze_prefixes or when the
// dataset role does not match the stage. A non-finite loss aborts with the
// step and batch ids. Deterministic in (model state, dataset, config.seed).
TrainResult train_stage(VlmModel& model, const std::vector<QAExample>& dataset,
                        const TrainingStageConfig& config);

struct FreezeReport {
    std::vector<std::string> frozen_changed;       // must be empty
    std::vector<std::string> trainable_unchanged;  // warning: dead gradients

    bool ok() const { return frozen_changed.empty(); }
};

// Byte-exact comparison of two checkpoints sharing a parameter namespace.
FreezeReport verify_freeze(const LoadedCheckpoint& before, const LoadedCheckpoint& after,
                           const std::vector<std::string>& freeze_prefixes);

// Fixture-building step run once before the two-stage schedule: trains the
// decoder on text-only sequences (expanded answers, optionally with the short
// answer embedded into the prefix as a content hint), then freezes it. This
// stands in for starting from a pretrained LM.
struct PretrainConfig {
    int epochs = 6;
    int batch_size = 8;
    double learning_rate = 3e-3;
    double weight_decay = 0.01;
    // Fraction of sequences whose prefix carries token embeddings of the short
    // answer at a random offset; the rest use an all-zero prefix.
    double hint_fraction = 0.5;
    size_t max_prefix = 44;
    uint64_t seed = 1;

    void validate() const;
};

TrainResult pretrain_lm(VlmModel& model, const std::vector<QAExample>& dataset,
                        const PretrainConfig& config);

}  // namespace dvlm
