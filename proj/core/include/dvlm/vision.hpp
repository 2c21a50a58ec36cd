#pragma once

#include <cstdint>
#include <vector>

#include "dvlm/nn.hpp"
#include "dvlm/optim.hpp"
#include "dvlm/tensor.hpp"

namespace dvlm {

// RGB image with pixel values in [0, 1], row-major (y, x, channel).
struct ImageTensor {
    size_t height = 0;
    size_t width = 0;
    std::vector<double> pixels;  // height * width * 3

    double at(size_t y, size_t x, size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    void validate() const;
};

struct PatchEmbeddings {
    size_t num_patches = 0;
    size_t dim = 0;
    size_t grid_rows = 0;
    size_t grid_cols = 0;
    Tensor values;  // [num_patches x dim]
};

struct VisionConfig {
    size_t patch_size = 8;
    size_t d_v = 64;
    size_t n_blocks = 2;
    size_t n_heads = 4;
    size_t mlp_ratio = 4;
    uint64_t seed = 1;

    void validate() const;
};

// Non-overlapping patches flattened row-major (left-to-right, top-to-bottom);
// each row is patch_size*patch_size*3 values in (y, x, channel) order.
Tensor patchify(const ImageTensor& image, size_t patch_size);

// Toy ViT-style encoder: patchify -> linear patch projection -> learned
// positional embeddings -> pre-norm self-attention blocks -> final norm.
// Every parameter is frozen at construction and stays frozen for the model's
// whole lifecycle; the encoder is a fixed feature source.
class VisionEncoder {
public:
    VisionEncoder(const VisionConfig& config, ParamStore& store, size_t image_height, size_t image_width);

    PatchEmbeddings encode(const ImageTensor& image) const;

    const VisionConfig& config() const { return cfg_; }
    size_t num_patches() const { return grid_rows_ * grid_cols_; }

private:
    VisionConfig cfg_;
    size_t grid_rows_ = 0;
    size_t grid_cols_ = 0;
    Linear patch_proj_;
    Parameter* pos_emb_ = nullptr;
    std::vector<EncoderBlock> blocks_;
    LayerNormLayer ln_f_;
};

}  // namespace dvlm
