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

// Source reconstruction from a single target token: the encoder sees y_t at
// its position among place-holding dummy tokens and the decoder predicts the
// full source in parallel. Token embeddings are the same object as the
// forward model's.

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

class BackwardModel {
 public:
  BackwardModel(ParamSet& ps, Tensor shared_embedding, const BlockConfig& cfg, Rng& rng,
                const std::string& prefix = "bwd")
      : cfg_(cfg), embed_(shared_embedding) {
    cfg_.validate();
    enc_ = build::encoder_params(ps, prefix + ".enc", cfg_, rng);
    dec_ = build::decoder_params(ps, prefix + ".dec", cfg_, /*vocab_attn=*/true, rng);
    // trained for symmetry with the forward model; decoding never consults it
    // because the source length is observed
    len_ = build::length_head_params(ps, prefix + ".len", cfg_.d_model);
  }

  const BlockConfig& config() const { return cfg_; }

  // Sequence of length target_len with token at 1-based position t and
  // <dummy> everywhere else.
  static TokenSequence encoder_input(int token, int t, int target_len) {
    if (target_len < 1) throw std::length_error("backward encoder input: empty target");
    if (t < 1 || t > target_len) {
      throw std::out_of_range("backward encoder input: position " + std::to_string(t) +
                              " outside [1, " + std::to_string(target_len) + "]");
    }
    TokenSequence seq(target_len, Vocabulary::kDummy);
    seq[t - 1] = token;
    return seq;
  }

  Tensor encode_token(int token, int t, int target_len, bool train = false,
                      Rng* rng = nullptr) const {
    return encode(embed_, enc_, cfg_, encoder_input(token, t, target_len), train, rng,
                  train ? cfg_.dropout : 0.0);
  }

  Tensor token_logits(int token, int t, int target_len, int source_len, bool train = false,
                      Rng* rng = nullptr) const {
    Tensor h = encode_token(token, t, target_len, train, rng);
    return token_logits_from(h, source_len, train, rng);
  }

  // Row t' is log p(x_{t'} = . | y_t); the decoder runs at the observed
  // source length.
  Tensor logprobs(int token, int t, int target_len, int source_len) const {
    return log_softmax_rows(token_logits(token, t, target_len, source_len));
  }

  // (1 / L_y) * sum_t sum_t' log p(x_{t'} | y_t): the log of the
  // geometric-mean backward probability under the per-source-token
  // factorization, accumulated term by term.
  double sequence_score(const TokenSequence& x, const TokenSequence& y) const {
    if (x.empty() || y.empty())
      throw std::invalid_argument("backward sequence score: empty sequence");
    autograd::NoGradGuard ng;
    const int lx = static_cast<int>(x.size());
    const int ly = static_cast<int>(y.size());
    double sum = 0.0;
    for (int t = 1; t <= ly; ++t) {
      Tensor lp = logprobs(y[t - 1], t, ly, lx);
      for (int tp = 0; tp < lx; ++tp) sum += lp.at(tp, x[tp]);
    }
    return sum / static_cast<double>(ly);
  }

  Tensor length_logits_of(const Tensor& h) const { return length_logits(len_, h); }

  // Every target position of every pair becomes one reconstruction instance.
  // position_sample > 0 trains on that many positions per pair instead
  // (uniform, seeded) to cut the quadratic expansion on larger corpora.
  Tensor build_loss(const std::vector<SourceTargetPair>& batch, TrainLosses* out = nullptr,
                    Rng* rng = nullptr, int position_sample = 0) const {
    if (batch.empty()) throw std::invalid_argument("backward loss: empty batch");
    struct Instance {
      const SourceTargetPair* pair;
      int t;  // 1-based target position
    };
    std::vector<Instance> instances;
    for (const auto& p : batch) {
      const int ly = static_cast<int>(p.target.size());
      if (position_sample > 0 && position_sample < ly) {
        if (!rng) throw std::invalid_argument("backward loss: position sampling needs an rng");
        std::vector<int> pos(ly);
        std::iota(pos.begin(), pos.end(), 1);
        for (int k = 0; k < position_sample; ++k) {
          const int j = k + static_cast<int>(rng->uniform_int(0, ly - 1 - k));
          std::swap(pos[k], pos[j]);
          instances.push_back({&p, pos[k]});
        }
      } else {
        for (int t = 1; t <= ly; ++t) instances.push_back({&p, t});
      }
    }
    std::size_t total_tokens = 0;
    for (const auto& inst : instances) total_tokens += inst.pair->source.size();
    Tensor loss;
    double token_part = 0.0, len_part = 0.0;
    for (const auto& inst : instances) {
      const auto& p = *inst.pair;
      const int ly = static_cast<int>(p.target.size());
      const int lx = static_cast<int>(p.source.size());
      Tensor h = encode_token(p.target[inst.t - 1], inst.t, ly, /*train=*/true, rng);
      Tensor logits = token_logits_from(h, lx, /*train=*/true, rng);
      Tensor ce = cross_entropy(logits, p.source);
      Tensor tok_term =
          scale(ce, static_cast<double>(lx) / static_cast<double>(total_tokens));
      Tensor len_ce =
          cross_entropy(length_logits_of(h), {len_delta_to_class(lx - ly)});
      Tensor len_term = scale(len_ce, 1.0 / static_cast<double>(instances.size()));
      token_part += tok_term.item();
      len_part += len_term.item();
      Tensor term = add(tok_term, len_term);
      loss = loss.defined() ? add(loss, term) : term;
    }
    if (out) *out = {token_part, len_part};
    return loss;
  }

 private:
  Tensor token_logits_from(const Tensor& h, int source_len, bool train = false,
                           Rng* rng = nullptr) const {
    if (source_len < 1) throw std::length_error("backward decode: source length must be >= 1");
    if (source_len > cfg_.max_positions) {
      throw std::length_error("backward decode: source length " + std::to_string(source_len) +
                              " exceeds max positions " + std::to_string(cfg_.max_positions));
    }
    std::vector<int> positions(source_len);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor inputs = add(copy_decoder_inputs(h, source_len), gather_rows(dec_.pos, positions));
    DecodeStackOptions opts;
    opts.train = train;
    opts.rng = rng;
    opts.dropout_rate = train ? cfg_.dropout : 0.0;
    return decode_stack(inputs, h, embed_, dec_, cfg_, opts);
  }

  BlockConfig cfg_;
  Tensor embed_;
  EncoderParams enc_;
  DecoderParams dec_;
  LengthHeadParams len_;
};

inline TrainLosses train_step_backward(const BackwardModel& model, ParamSet& params,
                                       const std::vector<SourceTargetPair>& batch, Adam& opt,
                                       Rng* rng = nullptr, int position_sample = 0) {
  TrainLosses losses;
  params.zero_grad();
  Tensor loss = model.build_loss(batch, &losses, rng, position_sample);
  backward(loss);
  opt.step();
  return losses;
}

}  // namespace narmi
