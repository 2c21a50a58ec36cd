#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dvlm/abstractor.hpp"
#include "dvlm/nn.hpp"
#include "dvlm/optim.hpp"
#include "dvlm/tensor.hpp"

namespace dvlm {

// Byte-level vocabulary: ids 0..255 are raw bytes, then pad/bos/eos.
struct Vocabulary {
    int pad = 256;
    int bos = 257;
    int eos = 258;

    size_t size() const { return 259; }
    bool is_special(int id) const { return id == pad || id == bos || id == eos; }
};

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

struct LMConfig {
    size_t d_lm = 64;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t n_kv_heads = 2;
    size_t sliding_window = 32;  // 0 = unlimited
    size_t max_seq_len = 128;
    Vocabulary vocab;
    uint64_t seed = 1;

    void validate() const;
};

// Soft-prompt prefix plus text, ready for the decoder. Position ids run
// 0..len-1 across the whole sequence; loss_mask is true exactly on answer and
// trailing-eos positions (never on prompt or instruction positions).
struct AssembledSequence {
    Tensor embeddings;  // [len x d_lm]
    std::vector<uint8_t> loss_mask;
    std::vector<int> position_ids;
    std::vector<int> token_ids;  // -1 on soft-prompt positions
    size_t prompt_len = 0;

    size_t length() const { return loss_mask.size(); }
};

// Decoder-only causal LM with grouped-query attention and sliding-window
// attention, consuming a continuous-prefix-plus-text sequence.
class DecoderLM {
public:
    DecoderLM(const LMConfig& config, ParamStore& store);

    // Order: [soft prompt][bos][instruction][answer][eos]. The soft prompt may
    // be null (text-only sequences, used when building the LM fixture).
    AssembledSequence assemble(const SoftPromptSequence* soft_prompt,
                               const std::vector<int>& instruction_ids,
                               const std::vector<int>& answer_ids) const;

    // Same layout but with an arbitrary continuous prefix (possibly zero rows).
    AssembledSequence assemble_with_prefix(const Tensor& prefix,
                                           const std::vector<int>& instruction_ids,
                                           const std::vector<int>& answer_ids) const;

    Tensor forward(const AssembledSequence& seq) const;  // [len x V]

    // Mean cross entropy over the positions that predict loss-masked tokens.
    Tensor loss(const AssembledSequence& seq) const;
    Tensor loss_with_logits(const AssembledSequence& seq, const Tensor& logits) const;

    std::string generate(const SoftPromptSequence& soft_prompt, const std::string& instruction,
                         size_t max_new) const;
    std::vector<int> generate_ids(const Tensor& prefix, const std::vector<int>& instruction_ids,
                                  size_t max_new) const;

    Tensor token_embeddings(const std::vector<int>& ids) const;
    const LMConfig& config() const { return cfg_; }

private:
    LMConfig cfg_;
    Parameter* tok_emb_ = nullptr;
    Parameter* pos_emb_ = nullptr;
    std::vector<EncoderBlock> blocks_;
    LayerNormLayer ln_f_;
    Linear head_;
};

}  // namespace dvlm
