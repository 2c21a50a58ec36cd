#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dvlm/model.hpp"

namespace dvlm {

// Binary checkpoint: magic "VGLM", format version, JSON metadata block,
// ordered named f64 tensors, trailing whole-file FNV-1a checksum. The byte
// layout is documented in docs/formats.md.
constexpr char kCheckpointMagic[4] = {'V', 'G', 'L', 'M'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    nlohmann::json model_config;
    std::string stage = "init";  // init | pretrain_lm | stage1 | stage2
    std::string parent_stage;    // provenance of the checkpoint this run started from
    uint64_t model_seed = 0;
    uint64_t train_seed = 0;
    std::string fusion_order = "qformer_first";
    std::string created_at;        // stamped at first save, carried through reloads
    std::string content_checksum;  // hex; excludes created_at, stable across reruns
    bool optimizer_reset_per_stage = true;
};

struct LoadedTensor {
    std::string name;
    Shape shape;
    bool frozen = false;
    std::vector<double> data;
};

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::vector<LoadedTensor> tensors;

    const LoadedTensor* find(const std::string& name) const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Hex content hash over (config, stage, fusion order, seeds, parameters);
// identical (seed, config, data) runs produce identical values.
std::string checkpoint_content_checksum(const VlmModel& model, const CheckpointMeta& meta);

void save_checkpoint(const std::string& path, const VlmModel& model, CheckpointMeta meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Rebuilds the model from the embedded config and overwrites parameters and
// frozen flags from the file. Every model parameter must be present exactly
// once; stray or missing tensors raise CheckpointError.
std::unique_ptr<VlmModel> model_from_checkpoint(const LoadedCheckpoint& ckpt);

std::string hex64(uint64_t v);

}  // namespace dvlm
