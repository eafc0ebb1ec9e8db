// Copyright 2026 The narmi Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Shared transformer machinery: multi-head attention with clipped relative
// position terms, pre-norm encoder/decoder blocks, the length-difference
// classifier, copy-based decoder inputs, and layer-wise attention over the
// vocabulary.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/params.hpp"
#include "narmi/rng.hpp"
#include "narmi/tensor.hpp"

namespace narmi {

struct BlockConfig {
  int d_model = 32;
  int n_heads = 4;
  int d_ff = 64;
  int n_blocks = 2;
  int rel_clip = 4;
  double dropout = 0.0;
  int max_positions = 64;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_heads < 1 || d_model % n_heads != 0) {
      throw std::invalid_argument("block config: d_model " + std::to_string(d_model) +
                                  " not divisible by " + std::to_string(n_heads) + " heads");
    }
    if (n_blocks < 1) throw std::invalid_argument("block config: need at least one block");
    if (rel_clip < 0) throw std::invalid_argument("block config: negative relative clip");
    if (max_positions < 1) throw std::invalid_argument("block config: max_positions < 1");
  }
};

// Length-difference classifier range: delta m in [-20, 20].
constexpr int kLenDeltaRange = 20;
constexpr int kLenClasses = 2 * kLenDeltaRange + 1;

inline int len_delta_to_class(int delta) {
  if (delta < -kLenDeltaRange) delta = -kLenDeltaRange;
  if (delta > kLenDeltaRange) delta = kLenDeltaRange;
  return delta + kLenDeltaRange;
}
inline int len_class_to_delta(int cls) { return cls - kLenDeltaRange; }

struct LayerNormParams {
  Tensor gain, bias;
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;
  Tensor rel;  // [(2*clip+1) x head_dim], shared across heads; undefined if unused
  bool has_rel = false;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderBlockParams {
  LayerNormParams ln1, ln2;
  AttentionParams self_attn;
  FfnParams ffn;
};

struct DecoderBlockParams {
  LayerNormParams ln1, ln2, ln3;
  AttentionParams self_attn;
  AttentionParams cross_attn;
  FfnParams ffn;
  // concat([Z; A]) back to model width; absent on the last block
  Tensor wcat, bcat;
  bool has_vocab_attn = false;
};

struct EncoderParams {
  Tensor pos;  // [max_positions x d]
  std::vector<EncoderBlockParams> blocks;
  LayerNormParams final_ln;
};

struct DecoderParams {
  Tensor pos;
  std::vector<DecoderBlockParams> blocks;
  LayerNormParams final_ln;
};

struct LengthHeadParams {
  Tensor wp;  // [d x 41]
  Tensor bp;  // [1 x 41]
};

// ---------------------------------------------------------------------------
// parameter construction
// ---------------------------------------------------------------------------

namespace build {

inline LayerNormParams layer_norm_params(ParamSet& ps, const std::string& prefix, int d) {
  LayerNormParams p;
  p.gain = ps.add(prefix + ".g", init::ones({1, d}));
  p.bias = ps.add(prefix + ".b", init::zeros({1, d}));
  return p;
}

inline AttentionParams attention_params(ParamSet& ps, const std::string& prefix,
                                        const BlockConfig& cfg, bool relative, Rng& rng) {
  AttentionParams p;
  const int d = cfg.d_model;
  p.wq = ps.add(prefix + ".wq", init::xavier(d, d, rng));
  p.wk = ps.add(prefix + ".wk", init::xavier(d, d, rng));
  p.wv = ps.add(prefix + ".wv", init::xavier(d, d, rng));
  p.wo = ps.add(prefix + ".wo", init::xavier(d, d, rng));
  if (relative) {
    p.rel = ps.add(prefix + ".rel", init::normal({2 * cfg.rel_clip + 1, cfg.head_dim()},
                                                 0.05, rng));
    p.has_rel = true;
  }
  return p;
}

inline FfnParams ffn_params(ParamSet& ps, const std::string& prefix, const BlockConfig& cfg,
                            Rng& rng) {
  FfnParams p;
  p.w1 = ps.add(prefix + ".w1", init::xavier(cfg.d_model, cfg.d_ff, rng));
  p.b1 = ps.add(prefix + ".b1", init::zeros({1, cfg.d_ff}));
  p.w2 = ps.add(prefix + ".w2", init::xavier(cfg.d_ff, cfg.d_model, rng));
  p.b2 = ps.add(prefix + ".b2", init::zeros({1, cfg.d_model}));
  return p;
}

inline EncoderParams encoder_params(ParamSet& ps, const std::string& prefix,
                                    const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.pos = ps.add(prefix + ".pos", init::normal({cfg.max_positions, cfg.d_model}, 0.08, rng));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    EncoderBlockParams b;
    b.ln1 = layer_norm_params(ps, bp + ".ln1", cfg.d_model);
    b.self_attn = attention_params(ps, bp + ".self", cfg, /*relative=*/true, rng);
    b.ln2 = layer_norm_params(ps, bp + ".ln2", cfg.d_model);
    b.ffn = ffn_params(ps, bp + ".ffn", cfg, rng);
    p.blocks.push_back(std::move(b));
  }
  p.final_ln = layer_norm_params(ps, prefix + ".ln_out", cfg.d_model);
  return p;
}

inline DecoderParams decoder_params(ParamSet& ps, const std::string& prefix,
                                    const BlockConfig& cfg, bool vocab_attn, Rng& rng) {
  cfg.validate();
  DecoderParams p;
  p.pos = ps.add(prefix + ".pos", init::normal({cfg.max_positions, cfg.d_model}, 0.08, rng));
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    DecoderBlockParams b;
    b.ln1 = layer_norm_params(ps, bp + ".ln1", cfg.d_model);
    b.self_attn = attention_params(ps, bp + ".self", cfg, /*relative=*/true, rng);
    b.ln2 = layer_norm_params(ps, bp + ".ln2", cfg.d_model);
    b.cross_attn = attention_params(ps, bp + ".cross", cfg, /*relative=*/false, rng);
    b.ln3 = layer_norm_params(ps, bp + ".ln3", cfg.d_model);
    b.ffn = ffn_params(ps, bp + ".ffn", cfg, rng);
    if (vocab_attn && i + 1 < cfg.n_blocks) {
      b.wcat = ps.add(bp + ".wcat", init::xavier(2 * cfg.d_model, cfg.d_model, rng));
      b.bcat = ps.add(bp + ".bcat", init::zeros({1, cfg.d_model}));
      b.has_vocab_attn = true;
    }
    p.blocks.push_back(std::move(b));
  }
  p.final_ln = layer_norm_params(ps, prefix + ".ln_out", cfg.d_model);
  return p;
}

inline LengthHeadParams length_head_params(ParamSet& ps, const std::string& prefix, int d) {
  LengthHeadParams p;
  // zero init keeps the untrained classifier exactly uniform
  p.wp = ps.add(prefix + ".wp", init::zeros({d, kLenClasses}));
  p.bp = ps.add(prefix + ".bp", init::zeros({1, kLenClasses}));
  return p;
}

}  // namespace build

// ---------------------------------------------------------------------------
// forward computation
// ---------------------------------------------------------------------------

inline Tensor layer_norm_apply(const LayerNormParams& p, const Tensor& x) {
  return layer_norm(x, p.gain, p.bias);
}

// Additive mask forbidding attention from position i to positions j > i.
inline std::vector<double> causal_mask(int len) {
  std::vector<double> m(static_cast<std::size_t>(len) * len, 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) m[static_cast<std::size_t>(i) * len + j] = -1e30;
  return m;
}

// Per-head relative score matrix: rel_term[i][j] = q_i . rel[clip(j - i)].
// Exposed separately so the logit decomposition can be inspected.
inline Tensor relative_scores(const Tensor& q_head, const Tensor& rel_table, int key_len,
                              int clip) {
  return relative_gather(matmul(q_head, transpose(rel_table)), key_len, clip);
}

// Scaled dot-product multi-head attention. Relative position terms (when the
// layer has them) augment the key scores only, clipped at the configured
// distance. `mask`, when present, is added to the logits of every head.
inline Tensor attention(const AttentionParams& p, const BlockConfig& cfg, const Tensor& q_in,
                        const Tensor& kv_in, const std::vector<double>* mask = nullptr) {
  const int dh = cfg.head_dim();
  const int lq = q_in.rows(), lk = kv_in.rows();
  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(kv_in, p.wk);
  Tensor v = matmul(kv_in, p.wv);
  Tensor merged;
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor logits = matmul(qh, transpose(kh));
    if (p.has_rel) logits = add(logits, relative_scores(qh, p.rel, lk, cfg.rel_clip));
    logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask) {
      if (mask->size() != static_cast<std::size_t>(lq) * lk)
        throw std::invalid_argument("attention: mask size does not match logits");
      logits = add_const(logits, *mask);
    }
    Tensor oh = matmul(softmax(logits, 1), vh);
    merged = h == 0 ? oh : concat_cols(merged, oh);
  }
  return matmul(merged, p.wo);
}

inline Tensor ffn_apply(const FfnParams& p, const Tensor& x) {
  return add_rowvec(matmul(gelu(add_rowvec(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// Token embedding + learned absolute positions, then pre-norm blocks of
// (relative self-attention, feed-forward) with residual connections.
inline Tensor encode(const Tensor& embedding, const EncoderParams& enc, const BlockConfig& cfg,
                     const std::vector<int>& ids, bool train = false, Rng* rng = nullptr,
                     double dropout_rate = 0.0) {
  if (ids.empty()) throw std::length_error("encode: empty input");
  if (static_cast<int>(ids.size()) > cfg.max_positions) {
    throw std::length_error("encode: input length " + std::to_string(ids.size()) +
                            " exceeds max positions " + std::to_string(cfg.max_positions));
  }
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  Tensor x = add(gather_rows(embedding, ids), gather_rows(enc.pos, positions));
  if (train && rng && dropout_rate > 0.0) x = dropout(x, dropout_rate, *rng, true);
  for (const auto& b : enc.blocks) {
    Tensor n1 = layer_norm_apply(b.ln1, x);
    Tensor u = attention(b.self_attn, cfg, n1, n1);
    if (train && rng && dropout_rate > 0.0) u = dropout(u, dropout_rate, *rng, true);
    x = add(x, u);
    Tensor f = ffn_apply(b.ffn, layer_norm_apply(b.ln2, x));
    if (train && rng && dropout_rate > 0.0) f = dropout(f, dropout_rate, *rng, true);
    x = add(x, f);
  }
  return layer_norm_apply(enc.final_ln, x);
}

// softmax(W_p(maxpool(H)) + b_p) over the 41 length-difference classes;
// returns the logits, softmax applied by callers as needed.
inline Tensor length_logits(const LengthHeadParams& p, const Tensor& h) {
  return add_rowvec(matmul(maxpool_rows(h), p.wp), p.bp);
}

// Decoder input index for target position i (1-based): round(n * i / m),
// half-up, clamped into [1, n]. Returned 0-based.
inline std::vector<int> copy_decoder_indices(int source_len, int target_len) {
  if (source_len < 1 || target_len < 1) {
    throw std::invalid_argument("copy_decoder_indices: lengths must be positive");
  }
  std::vector<int> idx(target_len);
  for (int i = 1; i <= target_len; ++i) {
    const double scan = static_cast<double>(source_len) * i / target_len;
    int r = static_cast<int>(std::floor(scan + 0.5));
    r = std::max(1, std::min(source_len, r));
    idx[i - 1] = r - 1;
  }
  return idx;
}

inline Tensor copy_decoder_inputs(const Tensor& h, int target_len) {
  return gather_rows(h, copy_decoder_indices(h.rows(), target_len));
}

// a_j = softmax(z_j . W^T) . W : a soft preview of the token each position
// is about to emit.
inline Tensor vocab_attention(const Tensor& z, const Tensor& embedding) {
  return matmul(softmax(matmul(z, transpose(embedding)), 1), embedding);
}

struct DecodeStackOptions {
  bool self_attention = true;  // test hook for the position-independence check
  const std::vector<double>* self_mask = nullptr;  // e.g. causal_mask for AR decoding
  bool train = false;
  Rng* rng = nullptr;
  double dropout_rate = 0.0;
};

// N pre-norm blocks of (self-attention, cross-attention to H, feed-forward);
// between blocks the contextual representations are concatenated with their
// vocabulary attention and projected back to model width. The final block's
// output is projected onto the tied embedding to give [m x V] logits.
inline Tensor decode_stack(const Tensor& inputs, const Tensor& h, const Tensor& embedding,
                           const DecoderParams& dec, const BlockConfig& cfg,
                           const DecodeStackOptions& opts = {}) {
  if (embedding.cols() != cfg.d_model) {
    throw std::invalid_argument("decode_stack: vocabulary width " +
                                std::to_string(embedding.cols()) +
                                " does not match model width " + std::to_string(cfg.d_model));
  }
  Tensor x = inputs;
  const bool drop = opts.train && opts.rng && opts.dropout_rate > 0.0;
  for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
    const auto& b = dec.blocks[i];
    if (opts.self_attention) {
      Tensor n1 = layer_norm_apply(b.ln1, x);
      Tensor u = attention(b.self_attn, cfg, n1, n1, opts.self_mask);
      if (drop) u = dropout(u, opts.dropout_rate, *opts.rng, true);
      x = add(x, u);
    }
    Tensor c = attention(b.cross_attn, cfg, layer_norm_apply(b.ln2, x), h);
    if (drop) c = dropout(c, opts.dropout_rate, *opts.rng, true);
    x = add(x, c);
    Tensor f = ffn_apply(b.ffn, layer_norm_apply(b.ln3, x));
    if (drop) f = dropout(f, opts.dropout_rate, *opts.rng, true);
    x = add(x, f);
    if (b.has_vocab_attn) {
      Tensor a = vocab_attention(x, embedding);
      x = add_rowvec(matmul(concat_cols(x, a), b.wcat), b.bcat);
    }
  }
  return matmul(layer_norm_apply(dec.final_ln, x), transpose(embedding));
}

}  // namespace narmi
