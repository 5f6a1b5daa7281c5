#include "gwf/attention.hpp"

#include <cmath>

namespace gwf {

namespace {

constexpr double kMaskedOut = -1e30;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& mask) {
    if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
        throw ShapeError("attention: query dim " + shape_str(q.shape()) +
                         " incompatible with key dim " + shape_str(k.shape()));
    Tensor scores = scale(matmul(q, k, false, true),
                          1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    if (mask.defined()) scores = add(scores, mask);
    return softmax_rows(scores);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& mask) {
    if (v.rank() != 2 || v.dim(0) != k.dim(0))
        throw ShapeError("attention: value rows " + shape_str(v.shape()) +
                         " must match key rows " + shape_str(k.shape()));
    return matmul(attention_weights(q, k, mask), v);
}

Tensor causal_mask(int n) {
    Tensor m({n, n}, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m.data()[i * n + j] = kMaskedOut;
    return m;
}

Tensor sinusoidal_encoding(int n, int d) {
    Tensor pe({n, d}, 0.0);
    for (int pos = 0; pos < n; ++pos)
        for (int i = 0; i < d; ++i) {
            const double angle =
                pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
            pe.data()[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv,
                            const MultiHeadParams& p, int num_heads,
                            const Tensor& mask) {
    const int d = x_q.dim(1);
    if (d % num_heads != 0)
        throw ShapeError("multi_head_attention: token dim " + std::to_string(d) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
    const int dh = d / num_heads;
    Tensor q = linear(x_q, p.wq, p.bq);
    Tensor k = linear(x_kv, p.wk, p.bk);
    Tensor v = linear(x_kv, p.wv, p.bv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(num_heads));
    for (int h = 0; h < num_heads; ++h) {
        Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
        Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
        Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
        heads.push_back(scaled_dot_attention(qh, kh, vh, mask));
    }
    return linear(concat(heads, 1), p.wo, p.bo);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, int num_heads) {
    Tensor n1 = layer_norm(x, p.ln1_g, p.ln1_b);
    Tensor h = add(x, multi_head_attention(n1, n1, p.self_attn, num_heads));
    Tensor n2 = layer_norm(h, p.ln2_g, p.ln2_b);
    Tensor ff = linear(gelu(linear(n2, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
    return add(h, ff);
}

Tensor decoder_block(const Tensor& x, const Tensor& enc_out,
                     const DecoderBlockParams& p, int num_heads) {
    if (enc_out.dim(1) != x.dim(1))
        throw ShapeError("decoder_block: encoder token dim " + shape_str(enc_out.shape()) +
                         " does not match decoder " + shape_str(x.shape()));
    Tensor n1 = layer_norm(x, p.ln1_g, p.ln1_b);
    Tensor h = add(x, multi_head_attention(n1, n1, p.self_attn, num_heads,
                                           causal_mask(x.dim(0))));
    Tensor n2 = layer_norm(h, p.ln2_g, p.ln2_b);
    Tensor h2 = add(h, multi_head_attention(n2, enc_out, p.cross_attn, num_heads));
    Tensor n3 = layer_norm(h2, p.ln3_g, p.ln3_b);
    Tensor ff = linear(gelu(linear(n3, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
    return add(h2, ff);
}

Tensor transformer_forward(const TransformerParams& p, const AttentionConfig& cfg,
                           const Tensor& enc_tokens, const Tensor& dec_tokens) {
    Tensor e = enc_tokens;
    Tensor d = dec_tokens;
    if (cfg.positional_encoding) {
        e = add(e, sinusoidal_encoding(e.dim(0), e.dim(1)));
        d = add(d, sinusoidal_encoding(d.dim(0), d.dim(1)));
    }
    for (const auto& blk : p.encoder) e = encoder_block(e, blk, cfg.num_heads);
    e = layer_norm(e, p.enc_ln_g, p.enc_ln_b);
    for (const auto& blk : p.decoder) d = decoder_block(d, e, blk, cfg.num_heads);
    return layer_norm(d, p.dec_ln_g, p.dec_ln_b);
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

MultiHeadParams make_multi_head(ParamStore& store, const std::string& prefix, int dim,
                                Rng& rng) {
    MultiHeadParams p;
    p.wq = store.add(prefix + ".wq", init_param({dim, dim}, dim, rng));
    p.bq = store.add(prefix + ".bq", zeros_param({dim}));
    p.wk = store.add(prefix + ".wk", init_param({dim, dim}, dim, rng));
    p.bk = store.add(prefix + ".bk", zeros_param({dim}));
    p.wv = store.add(prefix + ".wv", init_param({dim, dim}, dim, rng));
    p.bv = store.add(prefix + ".bv", zeros_param({dim}));
    p.wo = store.add(prefix + ".wo", init_param({dim, dim}, dim, rng));
    p.bo = store.add(prefix + ".bo", zeros_param({dim}));
    return p;
}

namespace {

void make_ff(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
             Rng& rng, Tensor& w1, Tensor& b1, Tensor& w2, Tensor& b2) {
    w1 = store.add(prefix + ".ff_w1",
                   init_param({cfg.token_dim, cfg.ff_dim}, cfg.token_dim, rng));
    b1 = store.add(prefix + ".ff_b1", zeros_param({cfg.ff_dim}));
    w2 = store.add(prefix + ".ff_w2",
                   init_param({cfg.ff_dim, cfg.token_dim}, cfg.ff_dim, rng));
    b2 = store.add(prefix + ".ff_b2", zeros_param({cfg.token_dim}));
}

void make_ln(ParamStore& store, const std::string& prefix, int dim, Tensor& g, Tensor& b) {
    Tensor gamma({dim}, 1.0);
    gamma.set_requires_grad(true);
    g = store.add(prefix + ".g", std::move(gamma));
    b = store.add(prefix + ".b", zeros_param({dim}));
}

}  // namespace

EncoderBlockParams make_encoder_block(ParamStore& store, const std::string& prefix,
                                      const AttentionConfig& cfg, Rng& rng) {
    EncoderBlockParams p;
    p.self_attn = make_multi_head(store, prefix + ".self", cfg.token_dim, rng);
    make_ln(store, prefix + ".ln1", cfg.token_dim, p.ln1_g, p.ln1_b);
    make_ln(store, prefix + ".ln2", cfg.token_dim, p.ln2_g, p.ln2_b);
    make_ff(store, prefix, cfg, rng, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2);
    return p;
}

DecoderBlockParams make_decoder_block(ParamStore& store, const std::string& prefix,
                                      const AttentionConfig& cfg, Rng& rng) {
    DecoderBlockParams p;
    p.self_attn = make_multi_head(store, prefix + ".self", cfg.token_dim, rng);
    p.cross_attn = make_multi_head(store, prefix + ".cross", cfg.token_dim, rng);
    make_ln(store, prefix + ".ln1", cfg.token_dim, p.ln1_g, p.ln1_b);
    make_ln(store, prefix + ".ln2", cfg.token_dim, p.ln2_g, p.ln2_b);
    make_ln(store, prefix + ".ln3", cfg.token_dim, p.ln3_g, p.ln3_b);
    make_ff(store, prefix, cfg, rng, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2);
    return p;
}

TransformerParams make_transformer(ParamStore& store, const std::string& prefix,
                                   const AttentionConfig& cfg, Rng& rng) {
    TransformerParams p;
    for (int i = 0; i < cfg.encoder_blocks; ++i)
        p.encoder.push_back(
            make_encoder_block(store, prefix + ".enc" + std::to_string(i), cfg, rng));
    for (int i = 0; i < cfg.decoder_blocks; ++i)
        p.decoder.push_back(
            make_decoder_block(store, prefix + ".dec" + std::to_string(i), cfg, rng));
    make_ln(store, prefix + ".enc_ln", cfg.token_dim, p.enc_ln_g, p.enc_ln_b);
    make_ln(store, prefix + ".dec_ln", cfg.token_dim, p.dec_ln_g, p.dec_ln_b);
    return p;
}

}  // namespace gwf
