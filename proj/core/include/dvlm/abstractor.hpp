#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dvlm/nn.hpp"
#include "dvlm/optim.hpp"
#include "dvlm/tensor.hpp"
#include "dvlm/vision.hpp"

namespace dvlm {

enum class SegmentTag : uint8_t { qformer = 0, mlp = 1 };

enum class PathMode { dual, qformer_only, mlp_only };

std::string path_mode_name(PathMode m);
PathMode path_mode_from_name(const std::string& s);

struct AbstractorConfig {
    size_t d_v = 64;
    size_t d_q = 64;
    size_t d_lm = 64;
    size_t num_queries = 8;
    size_t qformer_blocks = 2;
    size_t qformer_heads = 4;
    size_t mlp_hidden = 256;
    bool instruction_conditioning = true;
    // Whether the token-wise MLP path consumes the shared pre-Q-Former
    // projection output (false, default) or the raw encoder output (true).
    bool mlp_from_encoder = false;
    PathMode path_mode = PathMode::dual;
    size_t instr_vocab = 0;  // set from the LM vocabulary
    uint64_t seed = 1;

    void validate() const;
};

// Ordered visual token embeddings handed to the LM as a prefix. The first
// qformer_len tokens come from the Q-Former path, the next mlp_len from the
// token-wise MLP path; slicing by segment recovers both inputs bitwise.
struct SoftPromptSequence {
    Tensor values;  // [(qformer_len + mlp_len) x d_lm]
    size_t qformer_len = 0;
    size_t mlp_len = 0;
    std::vector<SegmentTag> segment_ids;

    size_t length() const { return qformer_len + mlp_len; }
    size_t dim() const { return values.cols(); }
};

SoftPromptSequence fuse_soft_prompt(const Tensor& qformer_tokens, const Tensor& mlp_tokens);

// Bridge between the frozen vision encoder and the LM: a shared projection
// into Q-Former space, a Q-Former with learned queries (optionally conditioned
// on instruction tokens), a parallel token-wise MLP projection, and a post
// projection lifting Q-Former tokens into the LM embedding space.
//
// Parameter prefixes:
//   abstractor.proj1.*     shared pre-Q-Former projection (stage-1 trainable)
//   abstractor.proj2.*     token-wise MLP path             (stage-1 trainable)
//   abstractor.proj3.*     post-Q-Former projection        (stage-1 trainable)
//   abstractor.qformer.*   queries, instruction embeddings, blocks
class VisualAbstractor {
public:
    VisualAbstractor(const AbstractorConfig& config, ParamStore& store);

    Tensor project_pre_qformer(const Tensor& patches) const;
    // Self-attention over [queries ++ instruction_tokens], cross-attention with
    // queries as the only sources and projected patches as keys/values, then
    // MLP; emits the query positions only. No positional encoding over patches,
    // so the output is invariant to patch order.
    Tensor qformer_forward(const Tensor& projected_patches,
                           const std::optional<Tensor>& instruction_tokens) const;
    Tensor project_mlp_path(const Tensor& projected_patches) const;
    Tensor project_post_qformer(const Tensor& qformer_out) const;

    Tensor instruction_embeddings(const std::vector<int>& instruction_ids) const;

    // Full dual-path forward honoring config.path_mode.
    SoftPromptSequence forward(const PatchEmbeddings& patches,
                               const std::vector<int>& instruction_ids) const;

    const AbstractorConfig& config() const { return cfg_; }
    Tensor queries() const { return queries_->tensor(); }

private:
    struct QFormerBlock {
        LayerNormLayer ln_self, ln_cross, ln_mlp;
        Attention self_attn, cross_attn;
        Mlp mlp;
    };

    Mlp make_mlp_path(ParamStore& store, Rng& rng);

    AbstractorConfig cfg_;
    Linear proj1_;
    Mlp proj2_;
    Linear proj3_;
    Parameter* queries_ = nullptr;
    Parameter* instr_emb_ = nullptr;
    std::vector<QFormerBlock> blocks_;
};

}  // namespace dvlm
