#pragma once

#include <string>
#include <vector>

#include "dvlm/optim.hpp"
#include "dvlm/rng.hpp"
#include "dvlm/tensor.hpp"

namespace dvlm {

// Small parameter-owning layers shared by the vision encoder, the abstractor
// and the decoder. Parameters live in the model's ParamStore; layers keep raw
// pointers into it (the store outlives the layers that reference it).

struct Linear {
    Parameter* w = nullptr;  // [in x out]
    Parameter* b = nullptr;  // [out], optional

    Tensor operator()(const Tensor& x) const;
};

Linear make_linear(ParamStore& store, const std::string& name, size_t in, size_t out, bool bias,
                   Rng& rng);

struct LayerNormLayer {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    double eps = 1e-5;

    Tensor operator()(const Tensor& x) const;
};

LayerNormLayer make_layer_norm(ParamStore& store, const std::string& name, size_t dim);

struct Mlp {
    Linear fc1;
    Linear fc2;

    Tensor operator()(const Tensor& x) const;
};

Mlp make_mlp(ParamStore& store, const std::string& name, size_t dim, size_t hidden, Rng& rng);

struct AttentionMask {
    enum class Kind { none, causal_window };
    Kind kind = Kind::none;
    size_t window = 0;  // 0 = unlimited; position i attends to j iff j <= i and i - window < j

    static AttentionMask none() { return {Kind::none, 0}; }
    static AttentionMask causal(size_t window) { return {Kind::causal_window, window}; }
};

// Multi-head attention with grouped key/value heads: n_heads query heads share
// n_kv_heads KV heads (each KV head serves n_heads / n_kv_heads query heads).
// n_kv_heads == n_heads is plain MHA.
struct Attention {
    Linear wq, wk, wv, wo;
    size_t n_heads = 1;
    size_t n_kv_heads = 1;
    size_t head_dim = 0;

    Tensor operator()(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const;
};

Attention make_attention(ParamStore& store, const std::string& name, size_t d_model, size_t n_heads,
                         size_t n_kv_heads, Rng& rng);

// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct EncoderBlock {
    LayerNormLayer ln1, ln2;
    Attention attn;
    Mlp mlp;

    Tensor operator()(const Tensor& x, const AttentionMask& mask) const;
};

EncoderBlock make_encoder_block(ParamStore& store, const std::string& name, size_t d_model,
                                size_t n_heads, size_t n_kv_heads, size_t mlp_hidden, Rng& rng);

}  // namespace dvlm
