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

#include "pte/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "pte/errors.hpp"

namespace pte {

namespace {

const char* kSpecials[] = {"<pad>", "<unk>", "<bos>", "<eos>"};

}  // namespace

Vocabulary Vocabulary::fixed(int n_words) {
  if (n_words <= 0) throw ConfigError("vocabulary needs at least one word");
  Vocabulary v;
  for (const char* s : kSpecials) v.id_to_token.push_back(s);
  for (int i = 0; i < n_words; ++i)
    v.id_to_token.push_back("w" + std::to_string(i));
  return v;
}

Vocabulary Vocabulary::build(
    const std::vector<std::vector<std::string>>& sents, int cap) {
  std::map<std::string, int> freq;
  std::map<std::string, int> first_seen;
  int pos = 0;
  for (const auto& sent : sents) {
    for (const auto& tok : sent) {
      if (!freq.count(tok)) first_seen[tok] = pos++;
      ++freq[tok];
    }
  }
  std::vector<std::string> words;
  for (const auto& [tok, n] : freq) words.push_back(tok);
  std::sort(words.begin(), words.end(),
            [&](const std::string& a, const std::string& b) {
              if (freq[a] != freq[b]) return freq[a] > freq[b];
              return first_seen[a] < first_seen[b];
            });
  if (cap > 0 && static_cast<int>(words.size()) > cap) words.resize(cap);
  Vocabulary v;
  for (const char* s : kSpecials) v.id_to_token.push_back(s);
  for (auto& w : words) v.id_to_token.push_back(std::move(w));
  return v;
}

int Vocabulary::encode(const std::string& token) const {
  for (int i = 0; i < size(); ++i)
    if (id_to_token[i] == token) return i;
  return kUnk;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || id >= size())
    throw DataError("token id " + std::to_string(id) +
                    " outside vocabulary of size " + std::to_string(size()));
  return id_to_token[id];
}

void Corpus::validate(int max_len) const {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.src.empty() || p.tgt.empty())
      throw DataError("empty sentence at pair " + std::to_string(i));
    if (static_cast<int>(p.src.size()) > max_len ||
        static_cast<int>(p.tgt.size()) > max_len)
      throw DataError("sentence longer than " + std::to_string(max_len) +
                      " at pair " + std::to_string(i));
    for (int id : p.src)
      if (id < 0 || id >= vocab_size)
        throw DataError("source id out of vocabulary at pair " +
                        std::to_string(i));
    for (int id : p.tgt)
      if (id < 0 || id >= vocab_size)
        throw DataError("target id out of vocabulary at pair " +
                        std::to_string(i));
  }
}

DomainKind domain_kind_from_string(const std::string& s) {
  if (s == "copy") return DomainKind::kCopy;
  if (s == "reverse") return DomainKind::kReverse;
  if (s == "token-remap") return DomainKind::kTokenRemap;
  if (s == "skewed-bigram") return DomainKind::kSkewedBigram;
  throw ConfigError("unknown domain kind: " + s);
}

std::string domain_kind_to_string(DomainKind kind) {
  switch (kind) {
    case DomainKind::kCopy:
      return "copy";
    case DomainKind::kReverse:
      return "reverse";
    case DomainKind::kTokenRemap:
      return "token-remap";
    case DomainKind::kSkewedBigram:
      return "skewed-bigram";
  }
  throw ConfigError("unknown domain kind value");
}

namespace {

// Samples a rank in [0, m) with probability proportional to (rank+1)^-skew.
class ZipfSampler {
 public:
  ZipfSampler(int m, double skew) : cum_(m) {
    double total = 0.0;
    for (int r = 0; r < m; ++r) {
      total += std::pow(static_cast<double>(r + 1), -skew);
      cum_[r] = total;
    }
    for (int r = 0; r < m; ++r) cum_[r] /= total;
  }

  int sample(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    if (it == cum_.end()) return static_cast<int>(cum_.size()) - 1;
    return static_cast<int>(it - cum_.begin());
  }

 private:
  std::vector<double> cum_;
};

}  // namespace

Corpus generate_domain(const DomainSpec& spec, int n_sentences,
                       const Vocabulary& vocab) {
  if (spec.word_lo < 0 || spec.word_hi <= spec.word_lo)
    throw ConfigError("domain '" + spec.name + "': vocab slice empty");
  if (Vocabulary::word_id(spec.word_hi - 1) >= vocab.size())
    throw ConfigError("domain '" + spec.name +
                      "': vocab slice exceeds vocabulary");
  if (spec.len_lo < 1 || spec.len_hi < spec.len_lo)
    throw ConfigError("domain '" + spec.name + "': bad length range");
  if (n_sentences <= 0)
    throw ConfigError("domain '" + spec.name + "': n_sentences must be > 0");

  const int m = spec.word_hi - spec.word_lo;
  Rng rng(spec.seed);

  // Remap permutation over the slice, fixed for the whole domain.
  std::vector<int> remap(m);
  for (int i = 0; i < m; ++i) remap[i] = i;
  {
    Rng perm_rng = rng.fork(0x7065726d);
    perm_rng.shuffle(remap);
  }

  const ZipfSampler unigram(m, spec.skew);

  // Per-predecessor successor permutations for the bigram grammar, built
  // lazily but deterministically from the predecessor's word offset.
  std::vector<std::vector<int>> successors;
  if (spec.kind == DomainKind::kSkewedBigram) {
    successors.resize(m);
    for (int p = 0; p < m; ++p) {
      successors[p].resize(m);
      for (int i = 0; i < m; ++i) successors[p][i] = i;
      Rng srng = rng.fork(0x62670000ULL + static_cast<std::uint64_t>(p));
      srng.shuffle(successors[p]);
    }
  }

  Corpus corpus;
  corpus.domain = spec.name;
  corpus.vocab_size = vocab.size();
  corpus.pairs.reserve(n_sentences);
  for (int s = 0; s < n_sentences; ++s) {
    const int len = rng.uniform_int(spec.len_lo, spec.len_hi + 1);
    std::vector<int> src_off(len);
    if (spec.kind == DomainKind::kSkewedBigram) {
      src_off[0] = unigram.sample(rng);
      for (int i = 1; i < len; ++i)
        src_off[i] = successors[src_off[i - 1]][unigram.sample(rng)];
    } else {
      for (int i = 0; i < len; ++i) src_off[i] = unigram.sample(rng);
    }

    SentencePair pair;
    pair.src.reserve(len);
    for (int off : src_off)
      pair.src.push_back(Vocabulary::word_id(spec.word_lo + off));

    switch (spec.kind) {
      case DomainKind::kCopy:
        pair.tgt = pair.src;
        break;
      case DomainKind::kReverse:
        pair.tgt.assign(pair.src.rbegin(), pair.src.rend());
        break;
      case DomainKind::kTokenRemap:
      case DomainKind::kSkewedBigram:
        pair.tgt.reserve(len);
        for (int off : src_off)
          pair.tgt.push_back(Vocabulary::word_id(spec.word_lo + remap[off]));
        break;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

namespace {

void write_side(const std::vector<SentencePair>& pairs, bool source,
                const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& p : pairs) {
    const auto& sent = source ? p.src : p.tgt;
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) out << ' ';
      out << vocab.decode(sent[i]);
    }
    out << '\n';
  }
}

std::vector<std::vector<int>> read_side(const Vocabulary& vocab,
                                        const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for reading: " + path);
  std::vector<std::vector<int>> sents;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<int> ids;
    std::string tok;
    while (ls >> tok) ids.push_back(vocab.encode(tok));
    sents.push_back(std::move(ids));
  }
  return sents;
}

}  // namespace

void write_corpus(const Corpus& corpus, const Vocabulary& vocab,
                  const std::string& path_prefix) {
  write_side(corpus.pairs, true, vocab, path_prefix + ".src");
  write_side(corpus.pairs, false, vocab, path_prefix + ".tgt");
}

Corpus read_corpus(const Vocabulary& vocab, const std::string& src_path,
                   const std::string& tgt_path, const std::string& domain) {
  auto src = read_side(vocab, src_path);
  auto tgt = read_side(vocab, tgt_path);
  if (src.size() != tgt.size())
    throw DataError("parallel files disagree on sentence count: " + src_path +
                    " vs " + tgt_path);
  Corpus corpus;
  corpus.domain = domain;
  corpus.vocab_size = vocab.size();
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    corpus.pairs.push_back({std::move(src[i]), std::move(tgt[i])});
  return corpus;
}

}  // namespace pte
