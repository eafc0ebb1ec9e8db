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

// Parallel generator: p(y_t | x) for all target positions in one pass.
// Target length comes from the length-difference classifier at decode time
// and from the gold target during training.

#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/adam.hpp"
#include "narmi/corpus.hpp"
#include "narmi/transformer.hpp"

namespace narmi {

struct TrainLosses {
  double token_ce = 0.0;
  double length_ce = 0.0;
  double total() const { return token_ce + length_ce; }
};

class ForwardModel {
 public:
  ForwardModel(ParamSet& ps, Tensor shared_embedding, const BlockConfig& cfg, Rng& rng,
               const std::string& prefix = "fwd")
      : cfg_(cfg), embed_(shared_embedding) {
    cfg_.validate();
    enc_ = build::encoder_params(ps, prefix + ".enc", cfg_, rng);
    dec_ = build::decoder_params(ps, prefix + ".dec", cfg_, /*vocab_attn=*/true, rng);
    len_ = build::length_head_params(ps, prefix + ".len", cfg_.d_model);
  }

  const BlockConfig& config() const { return cfg_; }
  const Tensor& embedding() const { return embed_; }
  int vocab_size() const { return embed_.rows(); }

  Tensor encode_source(const TokenSequence& x, bool train = false, Rng* rng = nullptr) const {
    return encode(embed_, enc_, cfg_, x, train, rng, train ? cfg_.dropout : 0.0);
  }

  Tensor length_logits_of(const Tensor& h) const { return length_logits(len_, h); }

  // Distribution over the 41 length-difference classes for a source.
  Tensor length_distribution(const TokenSequence& x) const {
    return softmax(length_logits_of(encode_source(x)), 1);
  }

  // Predicted target length: L_x + argmax delta, clamped to [1, max_positions].
  int predict_target_len(const TokenSequence& x) const {
    autograd::NoGradGuard ng;
    Tensor logits = length_logits_of(encode_source(x));
    int best = 0;
    for (int c = 1; c < kLenClasses; ++c) {
      if (logits.value()[c] > logits.value()[best]) best = c;
    }
    return clamp_target_len(static_cast<int>(x.size()) + len_class_to_delta(best));
  }

  // Length classes ordered by predicted probability (ties toward smaller
  // class index), for multi-length candidate generation.
  std::vector<int> top_length_classes(const TokenSequence& x, int count) const {
    autograd::NoGradGuard ng;
    Tensor logits = length_logits_of(encode_source(x));
    std::vector<int> cls(kLenClasses);
    std::iota(cls.begin(), cls.end(), 0);
    std::stable_sort(cls.begin(), cls.end(), [&](int a, int b) {
      return logits.value()[a] > logits.value()[b];
    });
    cls.resize(std::min<std::size_t>(cls.size(), static_cast<std::size_t>(count)));
    return cls;
  }

  int clamp_target_len(int len) const {
    return std::max(1, std::min(cfg_.max_positions, len));
  }

  Tensor token_logits(const TokenSequence& x, int target_len, bool train = false,
                      Rng* rng = nullptr) const {
    Tensor h = encode_source(x, train, rng);
    return token_logits_from(h, target_len, train, rng);
  }

  Tensor token_logits_from(const Tensor& h, int target_len, bool train = false,
                           Rng* rng = nullptr) const {
    if (target_len < 1) throw std::length_error("forward decode: target length must be >= 1");
    if (target_len > cfg_.max_positions) {
      throw std::length_error("forward decode: target length " + std::to_string(target_len) +
                              " exceeds max positions " + std::to_string(cfg_.max_positions));
    }
    std::vector<int> positions(target_len);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor inputs = add(copy_decoder_inputs(h, target_len), gather_rows(dec_.pos, positions));
    DecodeStackOptions opts;
    opts.train = train;
    opts.rng = rng;
    opts.dropout_rate = train ? cfg_.dropout : 0.0;
    return decode_stack(inputs, h, embed_, dec_, cfg_, opts);
  }

  // Row t is log p(y_t = . | x): every row a valid log-distribution,
  // computed for all positions in parallel.
  Tensor logprobs(const TokenSequence& x, int target_len) const {
    return log_softmax_rows(token_logits(x, target_len));
  }

  // Loss graph for a batch: mean token cross-entropy over gold targets at
  // their true lengths, plus the length-classification cross-entropy.
  Tensor build_loss(const std::vector<SourceTargetPair>& batch, TrainLosses* out = nullptr,
                    Rng* rng = nullptr) const {
    if (batch.empty()) throw std::invalid_argument("forward loss: empty batch");
    std::size_t total_tokens = 0;
    for (const auto& p : batch) total_tokens += p.target.size();
    Tensor loss;
    double token_part = 0.0, len_part = 0.0;
    for (const auto& p : batch) {
      Tensor h = encode_source(p.source, /*train=*/true, rng);
      Tensor logits =
          token_logits_from(h, static_cast<int>(p.target.size()), /*train=*/true, rng);
      Tensor ce = cross_entropy(logits, p.target);
      Tensor tok_term =
          scale(ce, static_cast<double>(p.target.size()) / static_cast<double>(total_tokens));
      const int delta =
          static_cast<int>(p.target.size()) - static_cast<int>(p.source.size());
      Tensor len_ce = cross_entropy(length_logits_of(h), {len_delta_to_class(delta)});
      Tensor len_term = scale(len_ce, 1.0 / static_cast<double>(batch.size()));
      token_part += tok_term.item();
      len_part += len_term.item();
      Tensor term = add(tok_term, len_term);
      loss = loss.defined() ? add(loss, term) : term;
    }
    if (out) *out = {token_part, len_part};
    return loss;
  }

 private:
  BlockConfig cfg_;
  Tensor embed_;
  EncoderParams enc_;
  DecoderParams dec_;
  LengthHeadParams len_;
};

// Standalone training step: build loss, backprop, one Adam update.
inline TrainLosses train_step_forward(const ForwardModel& model, ParamSet& params,
                                      const std::vector<SourceTargetPair>& batch, Adam& opt,
                                      Rng* rng = nullptr) {
  TrainLosses losses;
  params.zero_grad();
  Tensor loss = model.build_loss(batch, &losses, rng);
  backward(loss);
  opt.step();
  return losses;
}

}  // namespace narmi
