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
// Corpus evaluation: BLEU-4, additive-smoothed n-gram language models, and
// Moore-Lewis divergence scoring for data selection.

#ifndef PTE_METRICS_HPP_
#define PTE_METRICS_HPP_

#include <map>
#include <span>
#include <vector>

#include "pte/corpus.hpp"

namespace pte {

// Corpus-level case-sensitive BLEU-4 with brevity penalty, in [0, 100].
// Zero n-gram precisions are floored at 1e-9; an order with no hypothesis
// n-grams at all (every sentence shorter than n) counts as vacuously
// precise, so bleu(x, x) is exactly 100 for any corpus.
double bleu(const std::vector<std::vector<int>>& hyps,
            const std::vector<std::vector<int>>& refs);

// Additive-smoothed n-gram model over token ids. Contexts shorter than
// order-1 are padded on the left with <bos>; probability events are the
// sentence tokens themselves (no end-of-sentence event), so conditionals
// sum to 1 over the id space.
class NGramLM {
 public:
  NGramLM(int order, double smoothing, int vocab_size);

  void train(const std::vector<std::vector<int>>& sentences);

  // Natural-log conditional probability; context is the full preceding
  // token sequence (internally truncated/padded to order-1).
  double log_prob(int token, std::span<const int> context) const;

  // H(s) = -(1/|s|) sum_i log p(w_i | context), nats per word.
  double per_word_xent(const std::vector<int>& sentence) const;

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  int vocab_size() const { return vocab_size_; }

 private:
  int order_;
  double smoothing_;
  int vocab_size_;
  struct ContextCounts {
    std::map<int, int> by_token;
    int total = 0;
  };
  std::map<std::vector<int>, ContextCounts> counts_;
};

// Eq.-style divergence score: (H_G(s) - H_I(s)) + (H_G(t) - H_I(t)).
// Positive = the pair looks more in-domain than general.
double moore_lewis_score(const SentencePair& pair, const NGramLM& general_src,
                         const NGramLM& indomain_src,
                         const NGramLM& general_tgt,
                         const NGramLM& indomain_tgt);

// Indices of each quartile, ranked by descending score (ties by lower
// index); part sizes differ by at most one, larger parts first.
std::vector<std::vector<int>> quartile_split(const std::vector<double>& scores);

}  // namespace pte

#endif  // PTE_METRICS_HPP_
