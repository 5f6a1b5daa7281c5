#pragma once

#include <string>
#include <vector>

#include "gwf/checkpoint.hpp"
#include "gwf/tensor.hpp"

namespace gwf {

struct AttentionConfig {
    int token_dim = 128;
    int num_heads = 4;
    int ff_dim = 256;
    int encoder_blocks = 2;
    int decoder_blocks = 2;
    bool positional_encoding = true;
};

struct MultiHeadParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlockParams {
    MultiHeadParams self_attn;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderBlockParams {
    MultiHeadParams self_attn;   // causal over time steps
    MultiHeadParams cross_attn;  // queries from decoder, keys/values from encoder
    Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct TransformerParams {
    std::vector<EncoderBlockParams> encoder;
    std::vector<DecoderBlockParams> decoder;
    Tensor enc_ln_g, enc_ln_b;  // final norms (pre-norm stacks)
    Tensor dec_ln_g, dec_ln_b;
};

/// softmax(Q K^T / sqrt(d) [+ mask]) V. Q:(n_q,d), K:(n_k,d), V:(n_k,d_v);
/// mask, when defined, is (n_q,n_k) and added to the scores.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& mask = {});

/// The attention weight matrix alone (for invariant checks).
Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& mask = {});

/// Additive causal mask: 0 on/below the diagonal, large negative above.
Tensor causal_mask(int n);

/// Standard sinusoidal position encoding, shape (n, d).
Tensor sinusoidal_encoding(int n, int d);

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                            const MultiHeadParams& p, int num_heads,
                            const Tensor& mask = {});

/// Pre-norm: x + Attn(LN(x)), then x + FF(LN(x)).
Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, int num_heads);

/// Pre-norm: causal self-attention, cross-attention against enc_out, FF.
Tensor decoder_block(const Tensor& x, const Tensor& enc_out,
                     const DecoderBlockParams& p, int num_heads);

/// Full stack; returns the decoder output sequence (n_dec, token_dim).
/// Positional encodings are added to both token sequences when configured.
Tensor transformer_forward(const TransformerParams& p, const AttentionConfig& cfg,
                           const Tensor& enc_tokens, const Tensor& dec_tokens);

// Parameter construction (registered under `prefix` in the store).
MultiHeadParams make_multi_head(ParamStore& store, const std::string& prefix, int dim,
                                Rng& rng);
EncoderBlockParams make_encoder_block(ParamStore& store, const std::string& prefix,
                                      const AttentionConfig& cfg, Rng& rng);
DecoderBlockParams make_decoder_block(ParamStore& store, const std::string& prefix,
                                      const AttentionConfig& cfg, Rng& rng);
TransformerParams make_transformer(ParamStore& store, const std::string& prefix,
                                   const AttentionConfig& cfg, Rng& rng);

}  // namespace gwf
