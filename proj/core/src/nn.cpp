#include "dvlm/nn.hpp"

#include <cmath>

#include "dvlm/errors.hpp"

namespace dvlm {

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, w->tensor());
    if (b) y = add_rowvec(y, b->tensor());
    return y;
}

Linear make_linear(ParamStore& store, const std::string& name, size_t in, size_t out, bool bias,
                   Rng& rng) {
    Linear l;
    double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = &store.add(name + ".weight", Tensor::from_data({in, out}, rng.gaussian_vector(in * out, stddev)));
    if (bias) {
        l.b = &store.add(name + ".bias", Tensor::zeros({out}));
    }
    return l;
}

Tensor LayerNormLayer::operator()(const Tensor& x) const {
    return layer_norm(x, gamma->tensor(), beta->tensor(), eps);
}

LayerNormLayer make_layer_norm(ParamStore& store, const std::string& name, size_t dim) {
    LayerNormLayer ln;
    ln.gamma = &store.add(name + ".gamma", Tensor::full({dim}, 1.0));
    ln.beta = &store.add(name + ".beta", Tensor::zeros({dim}));
    return ln;
}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

Mlp make_mlp(ParamStore& store, const std::string& name, size_t dim, size_t hidden, Rng& rng) {
    Mlp m;
    m.fc1 = make_linear(store, name + ".fc1", dim, hidden, true, rng);
    m.fc2 = make_linear(store, name + ".fc2", hidden, dim, true, rng);
    return m;
}

Tensor Attention::operator()(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const {
    const size_t tq = q_in.rows();
    const size_t tk = kv_in.rows();
    Tensor q = wq(q_in);  // [tq x n_heads*head_dim]
    Tensor k = wk(kv_in);  // [tk x n_kv_heads*head_dim]
    Tensor v = wv(kv_in);

    std::vector<uint8_t> allowed;
    if (mask.kind == AttentionMask::Kind::causal_window) {
        if (tq != tk) throw ContractError("attention: causal mask requires self-attention");
        allowed.assign(tq * tk, 0);
        for (size_t i = 0; i < tq; ++i) {
            for (size_t j = 0; j <= i; ++j) {
                if (mask.window == 0 || i - j < mask.window) allowed[i * tk + j] = 1;
            }
        }
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const size_t group = n_heads / n_kv_heads;
    std::vector<Tensor> head_ctx;
    head_ctx.reserve(n_heads);
    for (size_t h = 0; h < n_heads; ++h) {
        size_t kv = h / group;
        Tensor qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
        Tensor kh = slice_cols(k, kv * head_dim, (kv + 1) * head_dim);
        Tensor vh = slice_cols(v, kv * head_dim, (kv + 1) * head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        Tensor weights = allowed.empty() ? softmax(scores, 1) : masked_softmax_rows(scores, allowed);
        head_ctx.push_back(matmul(weights, vh));
    }
    Tensor ctx = n_heads == 1 ? head_ctx[0] : concat_cols(head_ctx);
    return wo(ctx);
}

Attention make_attention(ParamStore& store, const std::string& name, size_t d_model, size_t n_heads,
                         size_t n_kv_heads, Rng& rng) {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("attention '" + name + "': d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (n_kv_heads == 0 || n_heads % n_kv_heads != 0) {
        throw ConfigError("attention '" + name + "': n_heads " + std::to_string(n_heads) +
                          " not divisible by n_kv_heads " + std::to_string(n_kv_heads));
    }
    Attention a;
    a.n_heads = n_heads;
    a.n_kv_heads = n_kv_heads;
    a.head_dim = d_model / n_heads;
    size_t kv_dim = a.head_dim * n_kv_heads;
    a.wq = make_linear(store, name + ".wq", d_model, d_model, false, rng);
    a.wk = make_linear(store, name + ".wk", d_model, kv_dim, false, rng);
    a.wv = make_linear(store, name + ".wv", d_model, kv_dim, false, rng);
    a.wo = make_linear(store, name + ".wo", d_model, d_model, false, rng);
    return a;
}

Tensor EncoderBlock::operator()(const Tensor& x, const AttentionMask& mask) const {
    Tensor h = ln1(x);
    Tensor y = add(x, attn(h, h, mask));
    return add(y, mlp(ln2(y)));
}

EncoderBlock make_encoder_block(ParamStore& store, const std::string& name, size_t d_model,
                                size_t n_heads, size_t n_kv_heads, size_t mlp_hidden, Rng& rng) {
    EncoderBlock b;
    b.ln1 = make_layer_norm(store, name + ".ln1", d_model);
    b.ln2 = make_layer_norm(store, name + ".ln2", d_model);
    b.attn = make_attention(store, name + ".attn", d_model, n_heads, n_kv_heads, rng);
    b.mlp = make_mlp(store, name + ".mlp", d_model, mlp_hidden, rng);
    return b;
}

}  // namespace dvlm
