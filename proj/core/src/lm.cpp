#include "dvlm/lm.hpp"

#include <algorithm>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"

namespace dvlm {

std::vector<int> tokenize(const std::string& text, const Vocabulary&) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab.size()) {
            throw IndexError("detokenize: id " + std::to_string(id) + " out of range");
        }
        if (vocab.is_special(id)) continue;
        out.push_back(static_cast<char>(id));
    }
    return out;
}

void LMConfig::validate() const {
    if (d_lm == 0 || n_layers == 0) throw ConfigError("lm: d_lm and n_layers must be positive");
    if (n_heads == 0 || d_lm % n_heads != 0) {
        throw ConfigError("lm: d_lm " + std::to_string(d_lm) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (n_kv_heads == 0 || n_heads % n_kv_heads != 0) {
        throw ConfigError("lm: n_heads " + std::to_string(n_heads) + " not divisible by n_kv_heads " +
                          std::to_string(n_kv_heads));
    }
    if (max_seq_len == 0) throw ConfigError("lm: max_seq_len must be positive");
}

DecoderLM::DecoderLM(const LMConfig& config, ParamStore& store) : cfg_(config) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.seed, 0x6c6d636fULL));
    size_t v = cfg_.vocab.size();
    tok_emb_ = &store.add("lm.tok_emb", Tensor::from_data({v, cfg_.d_lm},
                                                          rng.gaussian_vector(v * cfg_.d_lm, 0.02)));
    pos_emb_ = &store.add("lm.pos_emb",
                          Tensor::from_data({cfg_.max_seq_len, cfg_.d_lm},
                                            rng.gaussian_vector(cfg_.max_seq_len * cfg_.d_lm, 0.02)));
    for (size_t i = 0; i < cfg_.n_layers; ++i) {
        blocks_.push_back(make_encoder_block(store, "lm.block" + std::to_string(i), cfg_.d_lm,
                                             cfg_.n_heads, cfg_.n_kv_heads, cfg_.d_lm * 4, rng));
    }
    ln_f_ = make_layer_norm(store, "lm.ln_f", cfg_.d_lm);
    head_ = make_linear(store, "lm.head", cfg_.d_lm, v, false, rng);
}

Tensor DecoderLM::token_embeddings(const std::vector<int>& ids) const {
    return embedding_rows(tok_emb_->tensor(), ids);
}

AssembledSequence DecoderLM::assemble(const SoftPromptSequence* soft_prompt,
                                      const std::vector<int>& instruction_ids,
                                      const std::vector<int>& answer_ids) const {
    if (soft_prompt) {
        if (soft_prompt->dim() != cfg_.d_lm) {
            throw ShapeError("assemble: soft prompt dim " + std::to_string(soft_prompt->dim()) +
                             " != d_lm " + std::to_string(cfg_.d_lm));
        }
        return assemble_with_prefix(soft_prompt->values, instruction_ids, answer_ids);
    }
    return assemble_with_prefix(Tensor(), instruction_ids, answer_ids);
}

AssembledSequence DecoderLM::assemble_with_prefix(const Tensor& prefix,
                                                  const std::vector<int>& instruction_ids,
                                                  const std::vector<int>& answer_ids) const {
    const size_t p = prefix.defined() ? prefix.rows() : 0;
    const bool has_answer = !answer_ids.empty();
    // [prefix][bos][instruction][answer][eos]; eos present only in training
    // sequences (an empty answer means inference-mode assembly).
    const size_t t = 1 + instruction_ids.size() + answer_ids.size() + (has_answer ? 1 : 0);
    if (p + t > cfg_.max_seq_len) {
        throw SequenceLengthError("assemble: prompt " + std::to_string(p) + " + text " + std::to_string(t) +
                                  " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }

    std::vector<int> text_ids;
    text_ids.reserve(t);
    text_ids.push_back(cfg_.vocab.bos);
    text_ids.insert(text_ids.end(), instruction_ids.begin(), instruction_ids.end());
    text_ids.insert(text_ids.end(), answer_ids.begin(), answer_ids.end());
    if (has_answer) text_ids.push_back(cfg_.vocab.eos);

    Tensor text_emb = token_embeddings(text_ids);
    Tensor emb = (p > 0) ? concat_rows({prefix, text_emb}) : text_emb;

    AssembledSequence seq;
    seq.prompt_len = p;
    seq.embeddings = emb;
    seq.loss_mask.assign(p + t, 0);
    size_t answer_start = p + 1 + instruction_ids.size();
    for (size_t i = 0; i < answer_ids.size() + (has_answer ? 1 : 0); ++i) {
        seq.loss_mask[answer_start + i] = 1;
    }
    seq.position_ids.resize(p + t);
    for (size_t i = 0; i < p + t; ++i) seq.position_ids[i] = static_cast<int>(i);
    seq.token_ids.assign(p, -1);
    seq.token_ids.insert(seq.token_ids.end(), text_ids.begin(), text_ids.end());
    return seq;
}

Tensor DecoderLM::forward(const AssembledSequence& seq) const {
    size_t len = seq.length();
    if (len == 0) throw ContractError("decoder_forward: empty sequence");
    if (len > cfg_.max_seq_len) {
        throw SequenceLengthError("decoder_forward: length " + std::to_string(len) + " exceeds max " +
                                  std::to_string(cfg_.max_seq_len));
    }
    Tensor pos = embedding_rows(pos_emb_->tensor(), seq.position_ids);
    Tensor x = add(seq.embeddings, pos);
    AttentionMask mask = AttentionMask::causal(cfg_.sliding_window);
    for (const auto& block : blocks_) x = block(x, mask);
    return head_(ln_f_(x));
}

Tensor DecoderLM::loss(const AssembledSequence& seq) const {
    return loss_with_logits(seq, forward(seq));
}

Tensor DecoderLM::loss_with_logits(const AssembledSequence& seq, const Tensor& logits) const {
    size_t len = seq.length();
    if (logits.rows() != len) {
        throw ShapeError("loss: logits rows " + std::to_string(logits.rows()) + " != sequence length " +
                         std::to_string(len));
    }
    const int ignore = -100;
    // Position i predicts token i+1; keep exactly the positions whose next
    // token is loss-masked.
    std::vector<int> targets(len, ignore);
    for (size_t i = 0; i + 1 < len; ++i) {
        if (seq.loss_mask[i + 1]) targets[i] = seq.token_ids[i + 1];
    }
    return cross_entropy(logits, targets, ignore);
}

std::vector<int> DecoderLM::generate_ids(const Tensor& prefix, const std::vector<int>& instruction_ids,
                                         size_t max_new) const {
    NoGradGuard ng;
    const size_t p = prefix.defined() ? prefix.rows() : 0;
    if (p + 1 + instruction_ids.size() + max_new + 1 > cfg_.max_seq_len) {
        throw SequenceLengthError("generate: prefix " + std::to_string(p) + " + instruction " +
                                  std::to_string(instruction_ids.size()) + " + budget " +
                                  std::to_string(max_new) + " exceeds max_seq_len " +
                                  std::to_string(cfg_.max_seq_len));
    }
    std::vector<int> out;
    for (size_t step = 0; step < max_new; ++step) {
        AssembledSequence seq = assemble_with_prefix(prefix, instruction_ids, out);
        // assemble appends eos after a non-empty answer; strip it so the model
        // continues from the last generated token.
        size_t len = seq.length();
        size_t last = out.empty() ? len - 1 : len - 2;
        Tensor logits = forward(seq);
        size_t v = logits.cols();
        const auto& dl = logits.data();
        const double* row = dl.data() + last * v;
        size_t best = 0;
        for (size_t c = 1; c < v; ++c) {
            if (row[c] > row[best]) best = c;
        }
        if (static_cast<int>(best) == cfg_.vocab.eos) break;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::string DecoderLM::generate(const SoftPromptSequence& soft_prompt, const std::string& instruction,
                                size_t max_new) const {
    std::vector<int> instr_ids = tokenize(instruction, cfg_.vocab);
    std::vector<int> ids = generate_ids(soft_prompt.values, instr_ids, max_new);
    return detokenize(ids, cfg_.vocab);
}

}  // namespace dvlm
