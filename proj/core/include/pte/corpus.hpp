// Copyright 2026 The PTE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Parallel corpora, vocabularies, and deterministic synthetic domain
// generators. Synthetic domains stand in for real translation corpora:
// each domain maps source sentences drawn from a vocabulary slice to
// targets through a fixed rule (copy, reverse, token remap) or a skewed
// bigram grammar, so domain divergence is controlled by slice overlap and
// frequency skew.

#ifndef PTE_CORPUS_HPP_
#define PTE_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "pte/rng.hpp"

namespace pte {

// Token ids 0..3 are reserved in every vocabulary.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  std::vector<std::string> id_to_token;

  int size() const { return static_cast<int>(id_to_token.size()); }

  // Specials plus word tokens "w0".."w{n_words-1}"; word index i gets id
  // kEos + 1 + i. The synthetic experiments use this fixed id space so that
  // every domain's tokens have (possibly untrained) embeddings.
  static Vocabulary fixed(int n_words);

  // Specials plus the corpus tokens by descending frequency (ties by first
  // appearance), truncated to at most `cap` words. Unseen tokens encode to
  // kUnk.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sents,
                          int cap);

  int encode(const std::string& token) const;
  const std::string& decode(int id) const;

  // Id of word index `w` under the fixed layout.
  static int word_id(int w) { return kEos + 1 + w; }
};

struct SentencePair {
  std::vector<int> src;
  std::vector<int> tgt;
};

struct Corpus {
  std::string domain;
  int vocab_size = 0;
  std::vector<SentencePair> pairs;

  // Throws DataError on empty sentences, out-of-vocabulary ids, or
  // sentences longer than max_len.
  void validate(int max_len) const;
};

enum class DomainKind { kCopy, kReverse, kTokenRemap, kSkewedBigram };

struct DomainSpec {
  std::string name;
  DomainKind kind = DomainKind::kCopy;
  // Word-index slice [word_lo, word_hi) this domain draws from.
  int word_lo = 0;
  int word_hi = 0;
  int len_lo = 3;
  int len_hi = 10;
  // Zipf exponent for token frequencies; 0 = uniform.
  double skew = 0.0;
  std::uint64_t seed = 1;
};

DomainKind domain_kind_from_string(const std::string& s);
std::string domain_kind_to_string(DomainKind kind);

// Deterministic given the spec; same spec + n yields byte-identical output.
Corpus generate_domain(const DomainSpec& spec, int n_sentences,
                       const Vocabulary& vocab);

// One sentence per line, space-separated tokens, parallel .src/.tgt files.
void write_corpus(const Corpus& corpus, const Vocabulary& vocab,
                  const std::string& path_prefix);
Corpus read_corpus(const Vocabulary& vocab, const std::string& src_path,
                   const std::string& tgt_path, const std::string& domain);

}  // namespace pte

#endif  // PTE_CORPUS_HPP_
