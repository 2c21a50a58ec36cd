#include "dvlm/abstractor.hpp"

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

std::string path_mode_name(PathMode m) {
    switch (m) {
        case PathMode::dual: return "dual_path";
        case PathMode::qformer_only: return "qformer_only";
        case PathMode::mlp_only: return "mlp_only";
    }
    return "dual_path";
}

PathMode path_mode_from_name(const std::string& s) {
    if (s == "dual_path" || s == "dual") return PathMode::dual;
    if (s == "qformer_only") return PathMode::qformer_only;
    if (s == "mlp_only") return PathMode::mlp_only;
    throw ConfigError("unknown path mode '" + s + "' (dual_path|qformer_only|mlp_only)");
}

void AbstractorConfig::validate() const {
    if (d_v == 0 || d_q == 0 || d_lm == 0 || mlp_hidden == 0) {
        throw ConfigError("abstractor: dimensions must be positive");
    }
    if (num_queries == 0) throw ConfigError("abstractor: num_queries must be >= 1");
    if (qformer_heads == 0 || d_q % qformer_heads != 0) {
        throw ConfigError("abstractor: d_q " + std::to_string(d_q) + " not divisible by qformer_heads " +
                          std::to_string(qformer_heads));
    }
    if (instr_vocab == 0 && instruction_conditioning) {
        throw ConfigError("abstractor: instruction conditioning requires instr_vocab");
    }
}

SoftPromptSequence fuse_soft_prompt(const Tensor& qformer_tokens, const Tensor& mlp_tokens) {
    bool has_q = qformer_tokens.defined() && qformer_tokens.rows() > 0;
    bool has_m = mlp_tokens.defined() && mlp_tokens.rows() > 0;
    if (!has_q && !has_m) throw ShapeError("fuse_soft_prompt: both segments empty");
    if (has_q && has_m && qformer_tokens.cols() != mlp_tokens.cols()) {
        throw ShapeError("fuse_soft_prompt: dim mismatch " + std::to_string(qformer_tokens.cols()) +
                         " vs " + std::to_string(mlp_tokens.cols()));
    }
    SoftPromptSequence sp;
    sp.qformer_len = has_q ? qformer_tokens.rows() : 0;
    sp.mlp_len = has_m ? mlp_tokens.rows() : 0;
    if (has_q && has_m) {
        sp.values = concat_rows({qformer_tokens, mlp_tokens});
    } else {
        sp.values = has_q ? qformer_tokens : mlp_tokens;
    }
    sp.segment_ids.assign(sp.qformer_len, SegmentTag::qformer);
    sp.segment_ids.insert(sp.segment_ids.end(), sp.mlp_len, SegmentTag::mlp);
    return sp;
}

VisualAbstractor::VisualAbstractor(const AbstractorConfig& config, ParamStore& store) : cfg_(config) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x61627374ULL));
    proj1_ = make_linear(store, "abstractor.proj1", cfg_.d_v, cfg_.d_q, true, rng);
    proj2_ = make_mlp_path(store, rng);
    proj3_ = make_linear(store, "abstractor.proj3", cfg_.d_q, cfg_.d_lm, true, rng);
    queries_ = &store.add("abstractor.qformer.queries",
                          Tensor::from_data({cfg_.num_queries, cfg_.d_q},
                                            rng.gaussian_vector(cfg_.num_queries * cfg_.d_q, 0.02)));
    instr_emb_ = &store.add("abstractor.qformer.instr_emb",
                            Tensor::from_data({cfg_.instr_vocab, cfg_.d_q},
                                              rng.gaussian_vector(cfg_.instr_vocab * cfg_.d_q, 0.02)));
    for (size_t i = 0; i < cfg_.qformer_blocks; ++i) {
        std::string base = "abstractor.qformer.block" + std::to_string(i);
        QFormerBlock b;
        b.ln_self = make_layer_norm(store, base + ".ln_self", cfg_.d_q);
        b.ln_cross = make_layer_norm(store, base + ".ln_cross", cfg_.d_q);
        b.ln_mlp = make_layer_norm(store, base + ".ln_mlp", cfg_.d_q);
        b.self_attn = make_attention(store, base + ".self_attn", cfg_.d_q, cfg_.qformer_heads,
                                     cfg_.qformer_heads, rng);
        b.cross_attn = make_attention(store, base + ".cross_attn", cfg_.d_q, cfg_.qformer_heads,
                                      cfg_.qformer_heads, rng);
        b.mlp = make_mlp(store, base + ".mlp", cfg_.d_q, cfg_.d_q * 4, rng);
        blocks_.push_back(std::move(b));
    }
}

Tensor VisualAbstractor::project_pre_qformer(const Tensor& patches) const {
    if (patches.rank() != 2 || patches.cols() != cfg_.d_v) {
        throw ShapeError("project_pre_qformer: expected [N x " + std::to_string(cfg_.d_v) + "], got " +
                         shape_str(patches.shape()));
    }
    return proj1_(patches);
}

Tensor VisualAbstractor::qformer_forward(const Tensor& projected_patches,
                                         const std::optional<Tensor>& instruction_tokens) const {
    if (projected_patches.rank() != 2 || projected_patches.cols() != cfg_.d_q) {
        throw ShapeError("qformer_forward: patches must be [N x " + std::to_string(cfg_.d_q) + "], got " +
                         shape_str(projected_patches.shape()));
    }
    if (cfg_.instruction_conditioning && !instruction_tokens.has_value()) {
        throw ContractError("qformer_forward: instruction conditioning enabled but no instruction tokens");
    }
    if (instruction_tokens && instruction_tokens->defined() && instruction_tokens->numel() > 0 &&
        instruction_tokens->cols() != cfg_.d_q) {
        throw ShapeError("qformer_forward: instruction tokens dim " +
                         std::to_string(instruction_tokens->cols()) + " != d_q " + std::to_string(cfg_.d_q));
    }
    const size_t k = cfg_.num_queries;
    bool with_text = cfg_.instruction_conditioning && instruction_tokens &&
                     instruction_tokens->defined() && instruction_tokens->numel() > 0 &&
                     instruction_tokens->rows() > 0;

    Tensor x = queries_->tensor();
    for (const auto& b : blocks_) {
        // Self-attention over [queries ++ instructions]; instruction tokens
        // re-enter each block unchanged, only query rows flow onward.
        Tensor stream = with_text ? concat_rows({x, *instruction_tokens}) : x;
        Tensor h = b.ln_self(stream);
        Tensor attn_out = b.self_attn(h, h, AttentionMask::none());
        Tensor q_attn = with_text ? slice_rows(attn_out, 0, k) : attn_out;
        x = add(x, q_attn);

        Tensor xq = b.ln_cross(x);
        x = add(x, b.cross_attn(xq, projected_patches, AttentionMask::none()));

        x = add(x, b.mlp(b.ln_mlp(x)));
    }
    return x;
}

Tensor VisualAbstractor::project_mlp_path(const Tensor& projected_patches) const {
    size_t want = cfg_.mlp_from_encoder ? cfg_.d_v : cfg_.d_q;
    if (projected_patches.rank() != 2 || projected_patches.cols() != want) {
        throw ShapeError("project_mlp_path: expected [N x " + std::to_string(want) + "], got " +
                         shape_str(projected_patches.shape()));
    }
    return proj2_(projected_patches);
}

Tensor VisualAbstractor::project_post_qformer(const Tensor& qformer_out) const {
    if (qformer_out.rank() != 2 || qformer_out.cols() != cfg_.d_q) {
        throw ShapeError("project_post_qformer: expected [K x " + std::to_string(cfg_.d_q) + "], got " +
                         shape_str(qformer_out.shape()));
    }
    return proj3_(qformer_out);
}

Tensor VisualAbstractor::instruction_embeddings(const std::vector<int>& instruction_ids) const {
    return embedding_rows(instr_emb_->tensor(), instruction_ids);
}

SoftPromptSequence VisualAbstractor::forward(const PatchEmbeddings& patches,
                                             const std::vector<int>& instruction_ids) const {
    Tensor projected = project_pre_qformer(patches.values);
    Tensor qformer_tokens;
    Tensor mlp_tokens;
    if (cfg_.path_mode != PathMode::mlp_only) {
        std::optional<Tensor> instr;
        if (cfg_.instruction_conditioning) instr = instruction_embeddings(instruction_ids);
        qformer_tokens = project_post_qformer(qformer_forward(projected, instr));
    }
    if (cfg_.path_mode != PathMode::qformer_only) {
        mlp_tokens = project_mlp_path(cfg_.mlp_from_encoder ? patches.values : projected);
    }
    return fuse_soft_prompt(qformer_tokens, mlp_tokens);
}

Mlp VisualAbstractor::make_mlp_path(ParamStore& store, Rng& rng) {
    size_t in = cfg_.mlp_from_encoder ? cfg_.d_v : cfg_.d_q;
    Mlp m;
    m.fc1 = make_linear(store, "abstractor.proj2.fc1", in, cfg_.mlp_hidden, true, rng);
    m.fc2 = make_linear(store, "abstractor.proj2.fc2", cfg_.mlp_hidden, cfg_.d_lm, true, rng);
    return m;
}

}  // namespace dvlm
