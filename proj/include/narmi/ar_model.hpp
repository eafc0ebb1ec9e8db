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

// Standard autoregressive transformer baseline: causal decoder over
// <bos> y_1 ... y_T, terminated by <eos>. One class serves both directions;
// the backward scorer is just an ArModel trained with source and target
// swapped.

#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/adam.hpp"
#include "narmi/corpus.hpp"
#include "narmi/forward_model.hpp"
#include "narmi/transformer.hpp"

namespace narmi {

class ArModel {
 public:
  ArModel(ParamSet& ps, Tensor shared_embedding, const BlockConfig& cfg, Rng& rng,
          const std::string& prefix)
      : cfg_(cfg), embed_(shared_embedding) {
    cfg_.validate();
    enc_ = build::encoder_params(ps, prefix + ".enc", cfg_, rng);
    dec_ = build::decoder_params(ps, prefix + ".dec", cfg_, /*vocab_attn=*/false, rng);
  }

  const BlockConfig& config() const { return cfg_; }
  int vocab_size() const { return embed_.rows(); }

  Tensor encode_source(const TokenSequence& x, bool train = false, Rng* rng = nullptr) const {
    return encode(embed_, enc_, cfg_, x, train, rng, train ? cfg_.dropout : 0.0);
  }

  // Teacher-forced causal pass: inputs <bos> y_1 .. y_T, logits row i
  // predicts the token at step i+1. Masking makes row i independent of any
  // input beyond position i.
  Tensor decoder_logits(const Tensor& h, const TokenSequence& target, bool train = false,
                        Rng* rng = nullptr) const {
    const int steps = static_cast<int>(target.size()) + 1;
    if (steps > cfg_.max_positions) {
      throw std::length_error("ar decode: sequence length " + std::to_string(steps) +
                              " exceeds max positions " + std::to_string(cfg_.max_positions));
    }
    TokenSequence inputs(1, Vocabulary::kBos);
    inputs.insert(inputs.end(), target.begin(), target.end());
    std::vector<int> positions(steps);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor x = add(gather_rows(embed_, inputs), gather_rows(dec_.pos, positions));
    const std::vector<double> mask = causal_mask(steps);
    DecodeStackOptions opts;
    opts.self_mask = &mask;
    opts.train = train;
    opts.rng = rng;
    opts.dropout_rate = train ? cfg_.dropout : 0.0;
    return decode_stack(x, h, embed_, dec_, cfg_, opts);
  }

  // log p(y | x) = sum over t = 1..L_y+1 of the step log-probabilities,
  // with y_{L_y+1} = <eos>.
  double sequence_logprob(const TokenSequence& x, const TokenSequence& y) const {
    autograd::NoGradGuard ng;
    Tensor lp = log_softmax_rows(decoder_logits(encode_source(x), y));
    return teacher_forced_sum(lp, y);
  }

  // As above, with the encoder output already computed (beam rescoring).
  double sequence_logprob_from(const Tensor& h, const TokenSequence& y) const {
    autograd::NoGradGuard ng;
    Tensor lp = log_softmax_rows(decoder_logits(h, y));
    return teacher_forced_sum(lp, y);
  }

  // Distribution over the next token after the given prefix.
  std::vector<double> next_token_logprobs(const Tensor& h, const TokenSequence& prefix) const {
    autograd::NoGradGuard ng;
    Tensor lp = log_softmax_rows(decoder_logits(h, prefix));
    const int v = lp.cols();
    const int last = lp.rows() - 1;
    std::vector<double> out(v);
    for (int j = 0; j < v; ++j) out[j] = lp.at(last, j);
    return out;
  }

  Tensor build_loss(const std::vector<SourceTargetPair>& batch, double* token_ce = nullptr,
                    Rng* rng = nullptr, bool swap_direction = false) const {
    if (batch.empty()) throw std::invalid_argument("ar loss: empty batch");
    std::size_t total_tokens = 0;
    for (const auto& p : batch) {
      total_tokens += (swap_direction ? p.source.size() : p.target.size()) + 1;
    }
    Tensor loss;
    double part = 0.0;
    for (const auto& p : batch) {
      const TokenSequence& src = swap_direction ? p.target : p.source;
      const TokenSequence& tgt = swap_direction ? p.source : p.target;
      Tensor h = encode_source(src, /*train=*/true, rng);
      Tensor logits = decoder_logits(h, tgt, /*train=*/true, rng);
      TokenSequence shifted = tgt;
      shifted.push_back(Vocabulary::kEos);
      Tensor ce = cross_entropy(logits, shifted);
      Tensor term =
          scale(ce, static_cast<double>(shifted.size()) / static_cast<double>(total_tokens));
      part += term.item();
      loss = loss.defined() ? add(loss, term) : term;
    }
    if (token_ce) *token_ce = part;
    return loss;
  }

 private:
  static double teacher_forced_sum(const Tensor& lp, const TokenSequence& y) {
    double sum = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) sum += lp.at(static_cast<int>(t), y[t]);
    sum += lp.at(static_cast<int>(y.size()), Vocabulary::kEos);
    return sum;
  }

  BlockConfig cfg_;
  Tensor embed_;
  EncoderParams enc_;
  DecoderParams dec_;
};

}  // namespace narmi
