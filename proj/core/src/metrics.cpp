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

#include "pte/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pte/errors.hpp"

namespace pte {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kPrecisionFloor = 1e-9;

std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& sent,
                                             int n) {
  std::map<std::vector<int>, int> counts;
  if (static_cast<int>(sent.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= sent.size(); ++i)
    ++counts[std::vector<int>(sent.begin() + i, sent.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu(const std::vector<std::vector<int>>& hyps,
            const std::vector<std::vector<int>>& refs) {
  if (hyps.empty()) throw UsageError("bleu: empty corpus");
  if (hyps.size() != refs.size())
    throw UsageError("bleu: hypothesis/reference counts differ");

  long long matched[kMaxOrder] = {0, 0, 0, 0};
  long long total[kMaxOrder] = {0, 0, 0, 0};
  long long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<long long>(hyps[i].size());
    ref_len += static_cast<long long>(refs[i].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hyp_counts = ngram_counts(hyps[i], n);
      auto ref_counts = ngram_counts(refs[i], n);
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;

  double log_precision_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    double p;
    if (total[n] == 0)
      p = 1.0;  // vacuous order: no n-grams to get wrong
    else if (matched[n] == 0)
      p = kPrecisionFloor;
    else
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    log_precision_sum += std::log(p);
  }
  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_precision_sum / kMaxOrder);
}

NGramLM::NGramLM(int order, double smoothing, int vocab_size)
    : order_(order), smoothing_(smoothing), vocab_size_(vocab_size) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (smoothing < 0) throw ConfigError("smoothing must be >= 0");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
}

void NGramLM::train(const std::vector<std::vector<int>>& sentences) {
  for (const auto& sent : sentences) {
    for (std::size_t i = 0; i < sent.size(); ++i) {
      std::vector<int> ctx(order_ - 1, Vocabulary::kBos);
      for (int j = 0; j < order_ - 1; ++j) {
        const int pos = static_cast<int>(i) - (order_ - 1) + j;
        if (pos >= 0) ctx[j] = sent[pos];
      }
      auto& slot = counts_[ctx];
      ++slot.by_token[sent[i]];
      ++slot.total;
    }
  }
}

double NGramLM::log_prob(int token, std::span<const int> context) const {
  if (token < 0 || token >= vocab_size_)
    throw DataError("log_prob: token outside vocabulary");
  std::vector<int> ctx(order_ - 1, Vocabulary::kBos);
  const int have = static_cast<int>(context.size());
  for (int j = 0; j < order_ - 1; ++j) {
    const int pos = have - (order_ - 1) + j;
    if (pos >= 0) ctx[j] = context[pos];
  }
  int count = 0, ctx_total = 0;
  auto it = counts_.find(ctx);
  if (it != counts_.end()) {
    ctx_total = it->second.total;
    auto tok_it = it->second.by_token.find(token);
    if (tok_it != it->second.by_token.end()) count = tok_it->second;
  }
  const double num = count + smoothing_;
  const double den = ctx_total + smoothing_ * vocab_size_;
  if (den == 0.0)
    return -std::numeric_limits<double>::infinity();
  return std::log(num) - std::log(den);
}

double NGramLM::per_word_xent(const std::vector<int>& sentence) const {
  if (sentence.empty()) throw UsageError("per_word_xent: empty sentence");
  double acc = 0.0;
  for (std::size_t i = 0; i < sentence.size(); ++i)
    acc -= log_prob(sentence[i],
                    std::span<const int>(sentence.data(), i));
  return acc / static_cast<double>(sentence.size());
}

double moore_lewis_score(const SentencePair& pair, const NGramLM& general_src,
                         const NGramLM& indomain_src,
                         const NGramLM& general_tgt,
                         const NGramLM& indomain_tgt) {
  return (general_src.per_word_xent(pair.src) -
          indomain_src.per_word_xent(pair.src)) +
         (general_tgt.per_word_xent(pair.tgt) -
          indomain_tgt.per_word_xent(pair.tgt));
}

std::vector<std::vector<int>> quartile_split(
    const std::vector<double>& scores) {
  const int n = static_cast<int>(scores.size());
  if (n < 4) throw UsageError("quartile_split: need at least 4 items");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::vector<int>> parts(4);
  const int base = n / 4, extra = n % 4;
  int at = 0;
  for (int q = 0; q < 4; ++q) {
    const int size = base + (q < extra ? 1 : 0);
    parts[q].assign(order.begin() + at, order.begin() + at + size);
    at += size;
  }
  return parts;
}

}  // namespace pte
