#pragma once

// Small encoder-decoder transformer with pre-norm residual blocks, fixed
// sinusoidal positions, and interchangeable output heads over a shared body.

#include <string>
#include <vector>

#include "adaptorx/autodiff.hpp"
#include "adaptorx/batch.hpp"
#include "adaptorx/rng.hpp"

namespace adaptorx {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_heads = 2;
    int enc_layers = 2;
    int dec_layers = 2;
    int ffn_dim = 128;
    int max_len = 32;
    double dropout = 0.0;

    void validate() const;
};

enum class HeadKind { seq2seq_lm, token_classification, sequence_classification };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from(const std::string& name);

template <typename T>
struct Head {
    HeadKind kind = HeadKind::seq2seq_lm;
    int n_labels = 0;  // output width; vocab_size for seq2seq_lm
    ParamSet<T> params;
    ParamPtr<T> proj_w;  // [d_model, n_labels]
    ParamPtr<T> proj_b;  // [n_labels]
};

template <typename T>
struct ForwardOptions {
    bool train = false;
    RngStream* dropout_rng = nullptr;                 // required when train && dropout > 0
    std::vector<Tensor<T>>* attention_out = nullptr;  // per-layer attention probabilities
};

// Deterministic parameter set for a fixed seed, named body.encoder.*,
// body.decoder.*, body.embed.*.
template <typename T>
ParamSet<T> build_body(const ModelConfig& config, uint64_t seed);

// Fresh randomly initialized head, named head.<objective_id>.*.
template <typename T>
Head<T> build_head(const ModelConfig& config, HeadKind kind, const std::string& objective_id,
                   int n_labels, uint64_t seed);

// Logits shaped per head kind: seq2seq_lm [b, tgt, vocab];
// token_classification [b, src, n_labels]; sequence_classification [b, n_labels].
template <typename T>
Tensor<T> model_forward(const ModelConfig& config, const ParamSet<T>& params, const Head<T>& head,
                        const EncodedBatch& batch, const ForwardOptions<T>& opts = {});

// Greedy autoregressive decode from BOS; stops at EOS or after max_new_tokens.
// Ties break toward the lowest token id. Returned ids exclude BOS/EOS.
template <typename T>
std::vector<int> greedy_decode(const ModelConfig& config, const ParamSet<T>& params,
                               const Head<T>& head, const std::vector<int>& source_ids,
                               int max_new_tokens);

template <typename T>
std::vector<std::vector<int>> greedy_decode_batch(const ModelConfig& config,
                                                  const ParamSet<T>& params, const Head<T>& head,
                                                  const IdMatrix& sources, int max_new_tokens);

}  // namespace adaptorx
