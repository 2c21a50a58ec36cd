#include "dvlm/model.hpp"

#include <cstring>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

void ModelConfig::validate() const {
    vision.validate();
    abstractor.validate();
    lm.validate();
    if (abstractor.d_v != vision.d_v) {
        throw ConfigError("model: abstractor.d_v " + std::to_string(abstractor.d_v) +
                          " != vision.d_v " + std::to_string(vision.d_v));
    }
    if (abstractor.d_lm != lm.d_lm) {
        throw ConfigError("model: abstractor.d_lm " + std::to_string(abstractor.d_lm) + " != lm.d_lm " +
                          std::to_string(lm.d_lm));
    }
    if (image_height % vision.patch_size != 0 || image_width % vision.patch_size != 0) {
        throw ConfigError("model: image size not divisible by patch size");
    }
}

void ModelConfig::finalize() {
    abstractor.d_v = vision.d_v;
    abstractor.d_lm = lm.d_lm;
    abstractor.instr_vocab = lm.vocab.size();
    vision.seed = mix_seed(seed, 1);
    abstractor.seed = mix_seed(seed, 2);
    lm.seed = mix_seed(seed, 3);
    validate();
}

VlmModel::VlmModel(ModelConfig config) : cfg_(std::move(config)) {
    cfg_.finalize();
    vision_ = std::make_unique<VisionEncoder>(cfg_.vision, params_, cfg_.image_height, cfg_.image_width);
    abstractor_ = std::make_unique<VisualAbstractor>(cfg_.abstractor, params_);
    lm_ = std::make_unique<DecoderLM>(cfg_.lm, params_);
}

SoftPromptSequence VlmModel::soft_prompt(const ImageTensor& image,
                                         const std::vector<int>& instruction_ids) const {
    PatchEmbeddings patches = vision_->encode(image);
    return abstractor_->forward(patches, instruction_ids);
}

Tensor VlmModel::example_loss(const ImageTensor& image, const std::string& instruction,
                              const std::string& answer) const {
    std::vector<int> instr_ids = tokenize(instruction, cfg_.lm.vocab);
    std::vector<int> answer_ids = tokenize(answer, cfg_.lm.vocab);
    SoftPromptSequence sp = soft_prompt(image, instr_ids);
    AssembledSequence seq = lm_->assemble(&sp, instr_ids, answer_ids);
    return lm_->loss(seq);
}

std::string VlmModel::generate(const ImageTensor& image, const std::string& instruction,
                               size_t max_new) const {
    NoGradGuard ng;
    std::vector<int> instr_ids = tokenize(instruction, cfg_.lm.vocab);
    SoftPromptSequence sp = soft_prompt(image, instr_ids);
    std::vector<int> ids = lm_->generate_ids(sp.values, instr_ids, max_new);
    return detokenize(ids, cfg_.lm.vocab);
}

uint64_t VlmModel::content_checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_.all()) {
        h = fnv1a64(p->name(), h);
        for (size_t d : p->tensor().shape()) {
            uint64_t v = d;
            h = fnv1a64(&v, sizeof(v), h);
        }
        uint8_t fr = p->frozen() ? 1 : 0;
        h = fnv1a64(&fr, 1, h);
        const auto& data = p->tensor().data();
        h = fnv1a64(data.data(), data.size() * sizeof(double), h);
    }
    return h;
}

}  // namespace dvlm
