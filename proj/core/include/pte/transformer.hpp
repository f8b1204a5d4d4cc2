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
// Small encoder-decoder transformer: post-layer-norm residual blocks,
// sinusoidal position encodings, ReLU feed-forward, multi-head attention
// with causal masking in the decoder. Forward passes may run under a
// MaskView, in which case masked-out parameters behave exactly as value
// zero.

#ifndef PTE_TRANSFORMER_HPP_
#define PTE_TRANSFORMER_HPP_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pte/corpus.hpp"
#include "pte/partition.hpp"
#include "pte/rng.hpp"
#include "pte/tensor.hpp"

namespace pte {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_len = 64;
  float dropout_rate = 0.0f;
  bool shared_embeddings = false;

  void validate() const;  // throws ConfigError
  std::int64_t param_count() const;
  int head_dim() const { return d_model / n_heads; }
};

// Intermediate activations captured during a forward pass, keyed by site
// group ("enc.0.ffn", "dec.1.self", ...). Attention groups record the
// concatenated head outputs before the output projection; FFN groups record
// the ReLU layer output. After backward() these tensors also hold the
// gradients the Taylor criterion needs.
template <typename T>
struct ActivationTraceT {
  std::map<std::string, TensorPtr<T>> activations;
};

using ActivationTrace = ActivationTraceT<float>;

template <typename T>
struct ForwardOptionsT {
  const MaskView* view = nullptr;
  Rng* dropout_rng = nullptr;  // non-null enables dropout (training only)
  ActivationTraceT<T>* trace = nullptr;
};

using ForwardOptions = ForwardOptionsT<float>;

template <typename T>
class TransformerT {
 public:
  explicit TransformerT(ModelConfig config);
  TransformerT(const TransformerT&) = delete;
  TransformerT& operator=(const TransformerT&) = delete;
  TransformerT(TransformerT&&) = default;
  TransformerT& operator=(TransformerT&&) = default;

  // Xavier-uniform weights, zero biases, unit layer-norm gains; draw order
  // is the alphabetical parameter order, so a seed fully determines the
  // initialization.
  void init_params(Rng& rng);

  TransformerT clone() const;

  const ModelConfig& config() const { return config_; }
  std::map<std::string, TensorPtr<T>>& params() { return params_; }
  const std::map<std::string, TensorPtr<T>>& params() const { return params_; }
  TensorPtr<T> param(const std::string& name) const;
  void zero_grads();

  // Per-head value widths of one attention sublayer ("enc.0.attn", ...).
  // Uniform head_dim() on freshly built models; physically shrunk oracle
  // models carry reduced widths.
  const std::vector<int>& v_widths(const std::string& prefix) const;
  void set_v_widths(const std::string& prefix, std::vector<int> widths);

  // Source hidden states [src_len x d_model].
  TensorPtr<T> encode(TapeT<T>* tape, std::span<const int> src,
                      const ForwardOptionsT<T>& opts = {}) const;

  // Logits [tgt_in_len x tgt_vocab] for a decoder input sequence (the
  // caller prepends <bos>), attending to precomputed encoder output.
  TensorPtr<T> decode_logits(TapeT<T>* tape, std::span<const int> tgt_in,
                             const TensorPtr<T>& enc_out,
                             const ForwardOptionsT<T>& opts = {}) const;

  TensorPtr<T> forward(TapeT<T>* tape, std::span<const int> src,
                       std::span<const int> tgt_in,
                       const ForwardOptionsT<T>& opts = {}) const;

 private:
  TensorPtr<T> masked(TapeT<T>* tape, const std::string& name,
                      const MaskView* view) const;
  TensorPtr<T> embed(TapeT<T>* tape, const std::string& table_name,
                     std::span<const int> ids,
                     const ForwardOptionsT<T>& opts) const;
  TensorPtr<T> attention(TapeT<T>* tape, const std::string& prefix,
                         const TensorPtr<T>& queries_in,
                         const TensorPtr<T>& keys_values_in, bool causal,
                         const ForwardOptionsT<T>& opts) const;
  TensorPtr<T> ffn(TapeT<T>* tape, const std::string& prefix,
                   const TensorPtr<T>& x, const ForwardOptionsT<T>& opts) const;
  TensorPtr<T> sublayer_norm(TapeT<T>* tape, const std::string& ln_prefix,
                             const TensorPtr<T>& residual,
                             const TensorPtr<T>& out,
                             const ForwardOptionsT<T>& opts) const;
  TensorPtr<T> position_slice(int rows) const;
  std::string src_table() const;
  std::string tgt_table() const;

  ModelConfig config_;
  std::map<std::string, TensorPtr<T>> params_;
  std::map<std::string, std::vector<int>> v_widths_;
  std::vector<T> pos_enc_;  // [max_len x d_model], row-major
};

using Transformer = TransformerT<float>;

// Eq.-2 training objective: the per-sentence token-mean cross-entropies
// (teacher forcing, predicting tgt plus <eos>), averaged over the batch's
// sentences. Empty batch is a usage error.
template <typename T>
TensorPtr<T> nll_loss(TapeT<T>* tape, const TransformerT<T>& model,
                      std::span<const SentencePair> batch,
                      const ForwardOptionsT<T>& opts = {});

struct DecodeResult {
  std::vector<int> tokens;  // generated ids, <bos>/<eos> stripped
  double score = 0.0;       // log-prob divided by generated token count
  bool terminated = false;  // an <eos> was emitted within max_len
};

// Beam search with length-normalized scoring; beam_size 1 is exactly the
// greedy argmax rollout. Ties break toward the lexicographically smaller
// token sequence. If no hypothesis terminates, the best unterminated one is
// returned with terminated = false.
template <typename T>
DecodeResult decode(const TransformerT<T>& model, std::span<const int> src,
                    int beam_size, int max_len,
                    const MaskView* view = nullptr);

// Physically removes every non-GENERAL neuron of a neuron-granularity
// partition: pruned FFN units lose their w1 column, b1 entry and w2 row;
// pruned attention channels lose their wv column, bv entry and wo row (the
// owning head's value width shrinks). Oracle companion for mask-forward
// equivalence testing.
template <typename T>
TransformerT<T> shrink_model(const TransformerT<T>& model,
                             const ParamPartition& partition);

extern template class TransformerT<float>;
extern template class TransformerT<double>;

}  // namespace pte

#endif  // PTE_TRANSFORMER_HPP_
