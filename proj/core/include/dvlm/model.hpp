#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dvlm/abstractor.hpp"
#include "dvlm/lm.hpp"
#include "dvlm/optim.hpp"
#include "dvlm/vision.hpp"

namespace dvlm {

struct ModelConfig {
    VisionConfig vision;
    AbstractorConfig abstractor;
    LMConfig lm;
    size_t image_height = 48;
    size_t image_width = 48;
    uint64_t seed = 1;

    void validate() const;
    // Re-derives per-module seeds and cross-module dims (d_v, d_lm, vocab).
    void finalize();
};

// Frozen vision encoder, dual-path visual abstractor, decoder LM, and the
// shared parameter registry. Construction is deterministic in config.seed.
class VlmModel {
public:
    explicit VlmModel(ModelConfig config);

    VlmModel(const VlmModel&) = delete;
    VlmModel& operator=(const VlmModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    VisionEncoder& vision() { return *vision_; }
    VisualAbstractor& abstractor() { return *abstractor_; }
    DecoderLM& lm() { return *lm_; }
    const VisionEncoder& vision() const { return *vision_; }
    const VisualAbstractor& abstractor() const { return *abstractor_; }
    const DecoderLM& lm() const { return *lm_; }

    SoftPromptSequence soft_prompt(const ImageTensor& image, const std::vector<int>& instruction_ids) const;

    // Masked LM loss for one (image, instruction, answer) triple.
    Tensor example_loss(const ImageTensor& image, const std::string& instruction,
                        const std::string& answer) const;

    std::string generate(const ImageTensor& image, const std::string& instruction, size_t max_new) const;

    // Deterministic content hash over parameter names, shapes, frozen flags and
    // payload bytes (optimizer state excluded).
    uint64_t content_checksum() const;

private:
    ModelConfig cfg_;
    ParamStore params_;
    std::unique_ptr<VisionEncoder> vision_;
    std::unique_ptr<VisualAbstractor> abstractor_;
    std::unique_ptr<DecoderLM> lm_;
};

}  // namespace dvlm
