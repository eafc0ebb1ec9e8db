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

#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace narmi {

using TokenSequence = std::vector<int>;

// Token <-> id bijection. Ids 0..4 are reserved and never remapped:
// <pad>, <bos>, <eos>, <unk>, <dummy>. <dummy> exists only as the
// place-holder filling for single-token reconstruction inputs; no decoder
// ever emits a reserved id.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kDummy = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>", "<dummy>"}) add_token(t);
  }

  int add_token(const std::string& tok) {
    auto it = ids_.find(tok);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_[tok] = id;
    tokens_.push_back(tok);
    return id;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int real_tokens() const { return size() - kNumReserved; }

  int id_of(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return ids_.count(tok) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

  TokenSequence encode(const std::vector<std::string>& toks) const {
    TokenSequence out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id_of(t));
    return out;
  }

  std::vector<std::string> decode(const TokenSequence& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(token(id));
    return out;
  }

  std::string decode_join(const TokenSequence& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  // One token per line, line number = id, reserved tokens first.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write vocabulary file " + path);
    for (const auto& t : tokens_) f << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read vocabulary file " + path);
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      if (lineno < kNumReserved) {
        if (line != v.tokens_[lineno]) {
          throw std::runtime_error("vocabulary file " + path + " line " +
                                   std::to_string(lineno + 1) +
                                   ": reserved token mismatch, got '" + line + "'");
        }
      } else {
        if (v.ids_.count(line)) {
          throw std::runtime_error("vocabulary file " + path + " line " +
                                   std::to_string(lineno + 1) + ": duplicate token '" +
                                   line + "'");
        }
        v.add_token(line);
      }
      ++lineno;
    }
    if (lineno < kNumReserved)
      throw std::runtime_error("vocabulary file " + path + " is missing reserved tokens");
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace narmi
