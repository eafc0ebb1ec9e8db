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

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "narmi/corpus.hpp"
#include "narmi/vocab.hpp"

using namespace narmi;

namespace {

std::string write_temp(const std::string& contents) {
  static int counter = 0;
  auto path = std::filesystem::temp_directory_path() /
              ("narmi_corpus_test_" + std::to_string(::getpid()) + "_" +
               std::to_string(counter++) + ".txt");
  std::ofstream f(path, std::ios::binary);
  f << contents;
  return path.string();
}

}  // namespace

TEST_CASE("vocabulary reserves the first five ids") {
  Vocabulary v;
  CHECK(v.size() == 5);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kDummy) == "<dummy>");
  int id = v.add_token("hello");
  CHECK(id == 5);
  CHECK(v.add_token("hello") == 5);  // bijection holds
  CHECK(v.id_of("absent") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary file round trip preserves ids") {
  Vocabulary v;
  v.add_token("b");
  v.add_token("a");
  auto path = write_temp("");
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id_of("b") == v.id_of("b"));
  CHECK(loaded.id_of("a") == v.id_of("a"));
  std::remove(path.c_str());
}

TEST_CASE("parsing a well-formed line") {
  auto path = write_temp("hello there\thi\n");
  auto raw = read_pairs_file(path);
  REQUIRE(raw.size() == 1);
  CHECK(raw[0].source == std::vector<std::string>{"hello", "there"});
  CHECK(raw[0].target == std::vector<std::string>{"hi"});
  std::remove(path.c_str());
}

TEST_CASE("malformed lines report the line number") {
  SECTION("no tab") {
    auto path = write_temp("good\tline\nno tab here\n");
    CHECK_THROWS_WITH(read_pairs_file(path), Catch::Matchers::ContainsSubstring("line 2"));
    std::remove(path.c_str());
  }
  SECTION("empty side") {
    auto path = write_temp("\tresponse\n");
    CHECK_THROWS_WITH(read_pairs_file(path), Catch::Matchers::ContainsSubstring("empty side"));
    std::remove(path.c_str());
  }
  SECTION("two tabs") {
    auto path = write_temp("a\tb\tc\n");
    CHECK_THROWS_WITH(read_pairs_file(path),
                      Catch::Matchers::ContainsSubstring("more than one tab"));
    std::remove(path.c_str());
  }
  SECTION("double space") {
    auto path = write_temp("a  b\tc\n");
    CHECK_THROWS(read_pairs_file(path));
    std::remove(path.c_str());
  }
  SECTION("reserved token in raw text") {
    auto path = write_temp("a <unk>\tb\n");
    CHECK_THROWS_WITH(read_pairs_file(path), Catch::Matchers::ContainsSubstring("reserved"));
    std::remove(path.c_str());
  }
}

TEST_CASE("min-frequency cutoff maps rare tokens to unk") {
  auto path = write_temp("common rare\tcommon\ncommon x\tcommon\n");
  auto raw = read_pairs_file(path);
  Vocabulary v = build_vocabulary(raw, 2);
  CHECK(v.contains("common"));
  CHECK_FALSE(v.contains("rare"));
  Corpus c = encode_corpus(raw, v, Split::Train);
  CHECK(c.pairs[0].source[1] == Vocabulary::kUnk);
  std::remove(path.c_str());
}

TEST_CASE("encode-decode round trip reproduces in-vocab lines") {
  // property over random synthetic corpora
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    SyntheticSpec spec;
    spec.task = SyntheticTask::Copy;
    spec.vocab_size = 12;
    spec.n_pairs = 40;
    spec.len_min = 1;
    spec.len_max = 9;
    spec.seed = seed;
    Vocabulary vocab;
    Corpus c = gen_synthetic(spec, vocab);
    auto path = write_temp("");
    save_corpus(c, vocab, path);
    auto raw = read_pairs_file(path);
    Corpus rt = encode_corpus(raw, vocab, Split::Train);
    REQUIRE(rt.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(rt.pairs[i].source == c.pairs[i].source);
      CHECK(rt.pairs[i].target == c.pairs[i].target);
    }
    std::remove(path.c_str());
  }
}

TEST_CASE("copy and reverse tasks") {
  SyntheticSpec spec;
  spec.task = SyntheticTask::Copy;
  spec.vocab_size = 10;
  spec.n_pairs = 50;
  spec.seed = 7;
  Vocabulary vocab;
  Corpus copy = gen_synthetic(spec, vocab);
  for (const auto& p : copy.pairs) CHECK(p.target == p.source);

  spec.task = SyntheticTask::Reverse;
  Vocabulary vocab2;
  Corpus rev = gen_synthetic(spec, vocab2);
  for (const auto& p : rev.pairs) {
    TokenSequence r = p.source;
    std::reverse(r.begin(), r.end());
    CHECK(p.target == r);
  }
}

TEST_CASE("generation is deterministic given the seed and lengths stay in range") {
  SyntheticSpec spec;
  spec.task = SyntheticTask::KeyedDialog;
  spec.vocab_size = 8;
  spec.n_pairs = 200;
  spec.len_min = 3;
  spec.len_max = 6;
  spec.seed = 99;
  Vocabulary va, vb;
  Corpus a = gen_synthetic(spec, va);
  Corpus b = gen_synthetic(spec, vb);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pairs[i].source == b.pairs[i].source);
    CHECK(a.pairs[i].target == b.pairs[i].target);
    CHECK(a.pairs[i].source.size() >= 3);
    CHECK(a.pairs[i].source.size() <= 6);
  }
}

TEST_CASE("keyed-dialog dull-response rate tracks the configured fraction") {
  SyntheticSpec spec;
  spec.task = SyntheticTask::KeyedDialog;
  spec.vocab_size = 12;
  spec.n_pairs = 10000;
  spec.len_min = 3;
  spec.len_max = 6;
  spec.seed = 5;
  spec.dull_fraction = 0.5;
  Vocabulary vocab;
  Corpus c = gen_synthetic(spec, vocab);
  const TokenSequence dull = vocab.encode(keyed::dull_response());
  int dull_count = 0;
  for (const auto& p : c.pairs) dull_count += (p.target == dull) ? 1 : 0;
  const double rate = static_cast<double>(dull_count) / static_cast<double>(c.size());
  CHECK(rate > 0.48);
  CHECK(rate < 0.52);
}

TEST_CASE("keyed-dialog keyed targets follow their key deterministically") {
  SyntheticSpec spec;
  spec.task = SyntheticTask::KeyedDialog;
  spec.vocab_size = 6;
  spec.n_pairs = 300;
  spec.seed = 3;
  spec.len_min = 3;
  spec.len_max = 6;
  Vocabulary vocab;
  Corpus c = gen_synthetic(spec, vocab, Split::Train, /*apply_dull=*/false);
  for (const auto& p : c.pairs) {
    // find the key token in the source
    int key = -1;
    for (int tok : p.source) {
      for (int k = 0; k < spec.vocab_size; ++k) {
        if (tok == vocab.id_of(keyed::key_word(k))) key = k;
      }
    }
    REQUIRE(key >= 0);
    CHECK(p.target == vocab.encode(keyed::response_for_key(key)));
  }
}

TEST_CASE("splits are disjoint by construction") {
  SyntheticSpec spec;
  spec.task = SyntheticTask::KeyedDialog;
  spec.vocab_size = 12;
  spec.seed = 11;
  spec.len_min = 3;
  spec.len_max = 6;
  auto splits = gen_synthetic_splits(spec, 400, 100, 100);
  std::set<TokenSequence> sources;
  for (const Corpus* c : {&splits.train, &splits.dev, &splits.test}) {
    for (const auto& p : c->pairs) {
      CHECK(sources.insert(p.source).second);
    }
  }
  CHECK(splits.train.size() == 400);
  CHECK(splits.dev.size() == 100);
  CHECK(splits.test.size() == 100);
  // dull substitution applies to the training split only
  const TokenSequence dull = splits.vocab.encode(keyed::dull_response());
  int train_dull = 0;
  for (const auto& p : splits.train.pairs) train_dull += (p.target == dull) ? 1 : 0;
  CHECK(train_dull > 0);
  for (const Corpus* c : {&splits.dev, &splits.test}) {
    for (const auto& p : c->pairs) CHECK(p.target != dull);
  }
}

TEST_CASE("invalid generator parameters are rejected") {
  SyntheticSpec spec;
  spec.vocab_size = 1;
  Vocabulary v;
  CHECK_THROWS_AS(gen_synthetic(spec, v), std::invalid_argument);
  spec.vocab_size = 5;
  spec.len_min = 0;
  CHECK_THROWS_AS(gen_synthetic(spec, v), std::invalid_argument);
  spec.len_min = 2;
  spec.len_max = 1;
  CHECK_THROWS_AS(gen_synthetic(spec, v), std::invalid_argument);
  spec.len_max = 30;
  CHECK_THROWS_AS(gen_synthetic(spec, v), std::invalid_argument);
}
