#include "dvlm/vision.hpp"

#include <cmath>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

void ImageTensor::validate() const {
    if (pixels.size() != height * width * 3) {
        throw ShapeError("image: pixel buffer size " + std::to_string(pixels.size()) +
                         " does not match " + std::to_string(height) + "x" + std::to_string(width) + "x3");
    }
    for (double p : pixels) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ContractError("image: pixel value " + std::to_string(p) + " outside [0, 1]");
        }
    }
}

void VisionConfig::validate() const {
    if (patch_size == 0) throw ConfigError("vision: patch_size must be positive");
    if (d_v == 0 || n_heads == 0 || d_v % n_heads != 0) {
        throw ConfigError("vision: d_v " + std::to_string(d_v) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (mlp_ratio == 0) throw ConfigError("vision: mlp_ratio must be positive");
}

Tensor patchify(const ImageTensor& image, size_t patch_size) {
    if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0) {
        throw ShapeError("patchify: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " not divisible by patch size " +
                         std::to_string(patch_size));
    }
    size_t rows = image.height / patch_size;
    size_t cols = image.width / patch_size;
    size_t patch_len = patch_size * patch_size * 3;
    std::vector<double> out(rows * cols * patch_len);
    size_t idx = 0;
    for (size_t pr = 0; pr < rows; ++pr) {
        for (size_t pc = 0; pc < cols; ++pc) {
            for (size_t y = 0; y < patch_size; ++y) {
                for (size_t x = 0; x < patch_size; ++x) {
                    for (size_t c = 0; c < 3; ++c) {
                        out[idx++] = image.at(pr * patch_size + y, pc * patch_size + x, c);
                    }
                }
            }
        }
    }
    return Tensor::from_data({rows * cols, patch_len}, std::move(out));
}

VisionEncoder::VisionEncoder(const VisionConfig& config, ParamStore& store, size_t image_height,
                             size_t image_width)
    : cfg_(config) {
    cfg_.validate();
    if (image_height % cfg_.patch_size != 0 || image_width % cfg_.patch_size != 0) {
        throw ConfigError("vision: image " + std::to_string(image_height) + "x" +
                          std::to_string(image_width) + " not divisible by patch size " +
                          std::to_string(cfg_.patch_size));
    }
    grid_rows_ = image_height / cfg_.patch_size;
    grid_cols_ = image_width / cfg_.patch_size;
    size_t patch_len = cfg_.patch_size * cfg_.patch_size * 3;

    Rng rng(mix_seed(cfg_.seed, 0x7669736eULL));
    patch_proj_ = make_linear(store, "vision.patch_proj", patch_len, cfg_.d_v, true, rng);
    pos_emb_ = &store.add("vision.pos_emb",
                          Tensor::from_data({num_patches(), cfg_.d_v},
                                            rng.gaussian_vector(num_patches() * cfg_.d_v, 0.02)));
    for (size_t i = 0; i < cfg_.n_blocks; ++i) {
        blocks_.push_back(make_encoder_block(store, "vision.block" + std::to_string(i), cfg_.d_v,
                                             cfg_.n_heads, cfg_.n_heads, cfg_.d_v * cfg_.mlp_ratio, rng));
    }
    ln_f_ = make_layer_norm(store, "vision.ln_f", cfg_.d_v);

    for (auto& p : store.all()) {
        if (p->name().rfind("vision.", 0) == 0) p->set_frozen(true);
    }
}

PatchEmbeddings VisionEncoder::encode(const ImageTensor& image) const {
    image.validate();
    Tensor patches = patchify(image, cfg_.patch_size);
    if (patches.rows() != num_patches()) {
        throw ShapeError("vision: image yields " + std::to_string(patches.rows()) +
                         " patches, encoder built for " + std::to_string(num_patches()));
    }
    Tensor x = add(patch_proj_(patches), pos_emb_->tensor());
    for (const auto& block : blocks_) {
        x = block(x, AttentionMask::none());
    }
    x = ln_f_(x);

    PatchEmbeddings out;
    out.num_patches = num_patches();
    out.dim = cfg_.d_v;
    out.grid_rows = grid_rows_;
    out.grid_cols = grid_cols_;
    out.values = x;
    return out;
}

}  // namespace dvlm
