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

#include "pte/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "pte/errors.hpp"

namespace pte {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (d_model < 2 || d_model % 2 != 0)
    throw ConfigError("d_model must be a positive even number");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (src_vocab < 5 || tgt_vocab < 5)
    throw ConfigError("vocabularies must cover the four specials plus words");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
    throw ConfigError("dropout_rate must be in [0, 1)");
  if (shared_embeddings && src_vocab != tgt_vocab)
    throw ConfigError("shared embeddings require equal vocabularies");
}

std::int64_t ModelConfig::param_count() const {
  const std::int64_t d = d_model, f = d_ff;
  const std::int64_t attn = 4 * d * d + 4 * d;
  const std::int64_t ffn = 2 * d * f + f + d;
  const std::int64_t ln = 2 * d;
  const std::int64_t enc_layer = attn + ffn + 2 * ln;
  const std::int64_t dec_layer = 2 * attn + ffn + 3 * ln;
  const std::int64_t embeds =
      shared_embeddings ? static_cast<std::int64_t>(src_vocab) * d
                        : static_cast<std::int64_t>(src_vocab + tgt_vocab) * d;
  const std::int64_t out = d * tgt_vocab + tgt_vocab;
  return embeds + n_layers * (enc_layer + dec_layer) + out;
}

namespace {

std::vector<std::string> attention_prefixes(const ModelConfig& config) {
  std::vector<std::string> out;
  for (int i = 0; i < config.n_layers; ++i) {
    out.push_back("enc." + std::to_string(i) + ".attn");
    out.push_back("dec." + std::to_string(i) + ".self");
    out.push_back("dec." + std::to_string(i) + ".cross");
  }
  return out;
}

}  // namespace

template <typename T>
TransformerT<T>::TransformerT(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int d = config_.d_model, f = config_.d_ff;

  auto add = [&](const std::string& name, Shape shape) {
    auto t = make_tensor<T>(std::move(shape));
    t->requires_grad = true;
    params_[name] = std::move(t);
  };
  auto add_attention = [&](const std::string& prefix) {
    add(prefix + ".wq", {d, d});
    add(prefix + ".bq", {d});
    add(prefix + ".wk", {d, d});
    add(prefix + ".bk", {d});
    add(prefix + ".wv", {d, d});
    add(prefix + ".bv", {d});
    add(prefix + ".wo", {d, d});
    add(prefix + ".bo", {d});
  };
  auto add_ffn = [&](const std::string& prefix) {
    add(prefix + ".w1", {d, f});
    add(prefix + ".b1", {f});
    add(prefix + ".w2", {f, d});
    add(prefix + ".b2", {d});
  };
  auto add_ln = [&](const std::string& prefix) {
    add(prefix + ".g", {d});
    add(prefix + ".b", {d});
  };

  if (config_.shared_embeddings) {
    add("embed", {config_.src_vocab, d});
  } else {
    add("src_embed", {config_.src_vocab, d});
    add("tgt_embed", {config_.tgt_vocab, d});
  }
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string enc = "enc." + std::to_string(i);
    add_attention(enc + ".attn");
    add_ln(enc + ".ln1");
    add_ffn(enc + ".ffn");
    add_ln(enc + ".ln2");
    const std::string dec = "dec." + std::to_string(i);
    add_attention(dec + ".self");
    add_ln(dec + ".ln1");
    add_attention(dec + ".cross");
    add_ln(dec + ".ln2");
    add_ffn(dec + ".ffn");
    add_ln(dec + ".ln3");
  }
  add("out.w", {d, config_.tgt_vocab});
  add("out.b", {config_.tgt_vocab});

  for (const auto& prefix : attention_prefixes(config_))
    v_widths_[prefix].assign(config_.n_heads, config_.head_dim());

  pos_enc_.resize(static_cast<std::size_t>(config_.max_len) * d);
  for (int pos = 0; pos < config_.max_len; ++pos)
    for (int i = 0; i < d / 2; ++i) {
      const double angle =
          pos / std::pow(10000.0, (2.0 * i) / static_cast<double>(d));
      pos_enc_[static_cast<std::size_t>(pos) * d + 2 * i] =
          static_cast<T>(std::sin(angle));
      pos_enc_[static_cast<std::size_t>(pos) * d + 2 * i + 1] =
          static_cast<T>(std::cos(angle));
    }
}

template <typename T>
void TransformerT<T>::init_params(Rng& rng) {
  for (auto& [name, t] : params_) {
    if (t->shape.size() == 2) {
      const double limit = std::sqrt(6.0 / (t->shape[0] + t->shape[1]));
      for (auto& v : t->v) v = static_cast<T>(rng.uniform(-limit, limit));
    } else if (name.find(".ln") != std::string::npos &&
               name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0) {
      std::fill(t->v.begin(), t->v.end(), T(1));
    } else {
      std::fill(t->v.begin(), t->v.end(), T(0));
    }
  }
}

template <typename T>
TransformerT<T> TransformerT<T>::clone() const {
  TransformerT<T> copy(config_);
  copy.params_.clear();
  for (const auto& [name, t] : params_) {
    auto c = make_tensor<T>(t->shape, t->v);
    c->requires_grad = t->requires_grad;
    copy.params_[name] = std::move(c);
  }
  copy.v_widths_ = v_widths_;
  return copy;
}

template <typename T>
TensorPtr<T> TransformerT<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw ConsistencyError("model has no parameter named: " + name);
  return it->second;
}

template <typename T>
void TransformerT<T>::zero_grads() {
  for (auto& [name, t] : params_) t->zero_grad();
}

template <typename T>
const std::vector<int>& TransformerT<T>::v_widths(
    const std::string& prefix) const {
  auto it = v_widths_.find(prefix);
  if (it == v_widths_.end())
    throw ConsistencyError("unknown attention sublayer: " + prefix);
  return it->second;
}

template <typename T>
void TransformerT<T>::set_v_widths(const std::string& prefix,
                                   std::vector<int> widths) {
  auto it = v_widths_.find(prefix);
  if (it == v_widths_.end())
    throw ConsistencyError("unknown attention sublayer: " + prefix);
  if (static_cast<int>(widths.size()) != config_.n_heads)
    throw ConsistencyError("v_widths must have one entry per head");
  it->second = std::move(widths);
}

template <typename T>
TensorPtr<T> TransformerT<T>::masked(TapeT<T>* tape, const std::string& name,
                                     const MaskView* view) const {
  auto t = param(name);
  if (!view) return t;
  auto mask = view->template mask_for<T>(name, t->shape);
  if (!mask) return t;
  return mul(tape, t, mask);
}

template <typename T>
std::string TransformerT<T>::src_table() const {
  return config_.shared_embeddings ? "embed" : "src_embed";
}

template <typename T>
std::string TransformerT<T>::tgt_table() const {
  return config_.shared_embeddings ? "embed" : "tgt_embed";
}

template <typename T>
TensorPtr<T> TransformerT<T>::position_slice(int rows) const {
  const int d = config_.d_model;
  auto t = make_tensor<T>({rows, d});
  std::copy(pos_enc_.begin(), pos_enc_.begin() + static_cast<std::size_t>(rows) * d,
            t->v.begin());
  return t;
}

template <typename T>
TensorPtr<T> TransformerT<T>::embed(TapeT<T>* tape,
                                    const std::string& table_name,
                                    std::span<const int> ids,
                                    const ForwardOptionsT<T>& opts) const {
  if (static_cast<int>(ids.size()) > config_.max_len)
    throw DataError("sequence of length " + std::to_string(ids.size()) +
                    " exceeds max_len " + std::to_string(config_.max_len));
  auto table = masked(tape, table_name, opts.view);
  auto e = embed_lookup(tape, table, ids);
  e = scale(tape, e, static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
  e = add(tape, e, position_slice(static_cast<int>(ids.size())));
  if (opts.dropout_rng && config_.dropout_rate > 0)
    e = dropout(tape, e, static_cast<T>(config_.dropout_rate),
                *opts.dropout_rng);
  return e;
}

namespace {

template <typename T>
TensorPtr<T> causal_mask(int rows) {
  auto mask = make_tensor<T>({rows, rows});
  for (int i = 0; i < rows; ++i)
    for (int j = i + 1; j < rows; ++j)
      mask->v[static_cast<std::size_t>(i) * rows + j] = T(-1e9);
  return mask;
}

}  // namespace

template <typename T>
TensorPtr<T> TransformerT<T>::attention(TapeT<T>* tape,
                                        const std::string& prefix,
                                        const TensorPtr<T>& queries_in,
                                        const TensorPtr<T>& keys_values_in,
                                        bool causal,
                                        const ForwardOptionsT<T>& opts) const {
  const int dh = config_.head_dim();
  auto q = add_row_bias(tape,
                        matmul(tape, queries_in, masked(tape, prefix + ".wq", opts.view)),
                        masked(tape, prefix + ".bq", opts.view));
  auto k = add_row_bias(tape,
                        matmul(tape, keys_values_in, masked(tape, prefix + ".wk", opts.view)),
                        masked(tape, prefix + ".bk", opts.view));
  auto v = add_row_bias(tape,
                        matmul(tape, keys_values_in, masked(tape, prefix + ".wv", opts.view)),
                        masked(tape, prefix + ".bv", opts.view));

  const auto& widths = v_widths(prefix);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<TensorPtr<T>> heads;
  int v_off = 0;
  for (int h = 0; h < config_.n_heads; ++h) {
    const int width = widths[h];
    if (width > 0) {
      auto qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
      auto kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
      auto scores =
          scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
      if (causal)
        scores = add(tape, scores, causal_mask<T>(scores->shape[0]));
      auto attn = softmax(tape, scores, 1);
      auto vh = slice_cols(tape, v, v_off, v_off + width);
      heads.push_back(matmul(tape, attn, vh));
    }
    v_off += width;
  }
  if (heads.empty())
    throw DimensionError(prefix + ": every value channel has been removed");
  auto cat = concat_heads(tape, heads);
  if (opts.trace) opts.trace->activations[prefix] = cat;
  return add_row_bias(tape,
                      matmul(tape, cat, masked(tape, prefix + ".wo", opts.view)),
                      masked(tape, prefix + ".bo", opts.view));
}

template <typename T>
TensorPtr<T> TransformerT<T>::ffn(TapeT<T>* tape, const std::string& prefix,
                                  const TensorPtr<T>& x,
                                  const ForwardOptionsT<T>& opts) const {
  auto h = relu(tape, add_row_bias(tape,
                                   matmul(tape, x, masked(tape, prefix + ".w1", opts.view)),
                                   masked(tape, prefix + ".b1", opts.view)));
  if (opts.trace) opts.trace->activations[prefix] = h;
  return add_row_bias(tape,
                      matmul(tape, h, masked(tape, prefix + ".w2", opts.view)),
                      masked(tape, prefix + ".b2", opts.view));
}

template <typename T>
TensorPtr<T> TransformerT<T>::sublayer_norm(TapeT<T>* tape,
                                            const std::string& ln_prefix,
                                            const TensorPtr<T>& residual,
                                            const TensorPtr<T>& out,
                                            const ForwardOptionsT<T>& opts) const {
  auto o = out;
  if (opts.dropout_rng && config_.dropout_rate > 0)
    o = dropout(tape, o, static_cast<T>(config_.dropout_rate),
                *opts.dropout_rng);
  return layer_norm(tape, add(tape, residual, o),
                    masked(tape, ln_prefix + ".g", opts.view),
                    masked(tape, ln_prefix + ".b", opts.view), T(1e-5));
}

template <typename T>
TensorPtr<T> TransformerT<T>::encode(TapeT<T>* tape, std::span<const int> src,
                                     const ForwardOptionsT<T>& opts) const {
  auto x = embed(tape, src_table(), src, opts);
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string enc = "enc." + std::to_string(i);
    auto a = attention(tape, enc + ".attn", x, x, false, opts);
    x = sublayer_norm(tape, enc + ".ln1", x, a, opts);
    auto h = ffn(tape, enc + ".ffn", x, opts);
    x = sublayer_norm(tape, enc + ".ln2", x, h, opts);
  }
  return x;
}

template <typename T>
TensorPtr<T> TransformerT<T>::decode_logits(TapeT<T>* tape,
                                            std::span<const int> tgt_in,
                                            const TensorPtr<T>& enc_out,
                                            const ForwardOptionsT<T>& opts) const {
  auto y = embed(tape, tgt_table(), tgt_in, opts);
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string dec = "dec." + std::to_string(i);
    auto a = attention(tape, dec + ".self", y, y, true, opts);
    y = sublayer_norm(tape, dec + ".ln1", y, a, opts);
    auto c = attention(tape, dec + ".cross", y, enc_out, false, opts);
    y = sublayer_norm(tape, dec + ".ln2", y, c, opts);
    auto h = ffn(tape, dec + ".ffn", y, opts);
    y = sublayer_norm(tape, dec + ".ln3", y, h, opts);
  }
  return add_row_bias(tape, matmul(tape, y, masked(tape, "out.w", opts.view)),
                      masked(tape, "out.b", opts.view));
}

template <typename T>
TensorPtr<T> TransformerT<T>::forward(TapeT<T>* tape, std::span<const int> src,
                                      std::span<const int> tgt_in,
                                      const ForwardOptionsT<T>& opts) const {
  auto enc_out = encode(tape, src, opts);
  return decode_logits(tape, tgt_in, enc_out, opts);
}

template <typename T>
TensorPtr<T> nll_loss(TapeT<T>* tape, const TransformerT<T>& model,
                      std::span<const SentencePair> batch,
                      const ForwardOptionsT<T>& opts) {
  if (batch.empty()) throw UsageError("nll_loss: empty batch");
  TensorPtr<T> acc;
  for (const auto& pair : batch) {
    std::vector<int> tgt_in;
    tgt_in.reserve(pair.tgt.size() + 1);
    tgt_in.push_back(Vocabulary::kBos);
    tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
    std::vector<int> tgt_out = pair.tgt;
    tgt_out.push_back(Vocabulary::kEos);

    auto logits = model.forward(tape, pair.src, tgt_in, opts);
    auto ce = cross_entropy(tape, logits, tgt_out, -1);
    acc = acc ? add(tape, acc, ce) : ce;
  }
  return scale(tape, acc, T(1) / static_cast<T>(batch.size()));
}

namespace {

// Log-softmax of the last logits row, computed in double for stable,
// type-independent beam scoring.
template <typename T>
std::vector<double> last_row_log_probs(const TensorPtr<T>& logits) {
  const int rows = logits->shape[0], v = logits->shape[1];
  const std::size_t base = static_cast<std::size_t>(rows - 1) * v;
  std::vector<double> lp(v);
  double mx = static_cast<double>(logits->v[base]);
  for (int j = 1; j < v; ++j)
    mx = std::max(mx, static_cast<double>(logits->v[base + j]));
  double denom = 0.0;
  for (int j = 0; j < v; ++j)
    denom += std::exp(static_cast<double>(logits->v[base + j]) - mx);
  const double lse = mx + std::log(denom);
  for (int j = 0; j < v; ++j)
    lp[j] = static_cast<double>(logits->v[base + j]) - lse;
  return lp;
}

struct Hypothesis {
  std::vector<int> tokens;
  double logp = 0.0;
};

double normalized(double logp, std::size_t n_tokens) {
  return logp / static_cast<double>(std::max<std::size_t>(1, n_tokens));
}

}  // namespace

template <typename T>
DecodeResult decode(const TransformerT<T>& model, std::span<const int> src,
                    int beam_size, int max_len, const MaskView* view) {
  if (beam_size < 1) throw UsageError("beam_size must be >= 1");
  if (max_len < 1) throw UsageError("decode max_len must be >= 1");
  ForwardOptionsT<T> opts;
  opts.view = view;
  const int limit = std::min(max_len, model.config().max_len - 1);
  auto enc_out = model.encode(nullptr, src, opts);

  std::vector<Hypothesis> live = {Hypothesis{}};
  std::vector<Hypothesis> completed;  // tokens exclude <eos>; logp includes it
  for (int step = 0; step < limit && !live.empty(); ++step) {
    struct Candidate {
      std::vector<int> tokens;
      double logp;
    };
    std::vector<Candidate> pool;
    for (const auto& hyp : live) {
      std::vector<int> tgt_in;
      tgt_in.reserve(hyp.tokens.size() + 1);
      tgt_in.push_back(Vocabulary::kBos);
      tgt_in.insert(tgt_in.end(), hyp.tokens.begin(), hyp.tokens.end());
      auto logits = model.decode_logits(nullptr, tgt_in, enc_out, opts);
      const auto lp = last_row_log_probs(logits);
      for (int tok = 0; tok < static_cast<int>(lp.size()); ++tok) {
        Candidate c;
        c.tokens = hyp.tokens;
        c.tokens.push_back(tok);
        c.logp = hyp.logp + lp[tok];
        pool.push_back(std::move(c));
      }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Candidate& a, const Candidate& b) {
                       if (a.logp != b.logp) return a.logp > b.logp;
                       return a.tokens < b.tokens;
                     });
    std::vector<Hypothesis> next;
    for (const auto& c : pool) {
      if (static_cast<int>(next.size()) >= beam_size) break;
      if (static_cast<int>(completed.size()) >= beam_size) break;
      if (c.tokens.back() == Vocabulary::kEos) {
        Hypothesis done;
        done.tokens.assign(c.tokens.begin(), c.tokens.end() - 1);
        done.logp = c.logp;
        completed.push_back(std::move(done));
      } else {
        next.push_back(Hypothesis{c.tokens, c.logp});
      }
    }
    live = std::move(next);
    if (static_cast<int>(completed.size()) >= beam_size) break;
  }

  DecodeResult result;
  auto better = [](double score_a, const std::vector<int>& toks_a,
                   double score_b, const std::vector<int>& toks_b) {
    if (score_a != score_b) return score_a > score_b;
    return toks_a < toks_b;
  };
  if (!completed.empty()) {
    const Hypothesis* best = &completed[0];
    for (const auto& h : completed)
      if (better(normalized(h.logp, h.tokens.size() + 1), h.tokens,
                 normalized(best->logp, best->tokens.size() + 1),
                 best->tokens))
        best = &h;
    result.tokens = best->tokens;
    result.score = normalized(best->logp, best->tokens.size() + 1);
    result.terminated = true;
  } else if (!live.empty()) {
    const Hypothesis* best = &live[0];
    for (const auto& h : live)
      if (better(normalized(h.logp, h.tokens.size()), h.tokens,
                 normalized(best->logp, best->tokens.size()), best->tokens))
        best = &h;
    result.tokens = best->tokens;
    result.score = normalized(best->logp, best->tokens.size());
    result.terminated = false;
  } else {
    throw UsageError("decode produced no hypotheses");
  }
  return result;
}

template <typename T>
TransformerT<T> shrink_model(const TransformerT<T>& model,
                             const ParamPartition& partition) {
  if (partition.granularity != Granularity::kNeuron)
    throw UsageError("shrink_model requires a neuron-granularity partition");
  auto out = model.clone();
  const ModelConfig& cfg = model.config();
  const int d = cfg.d_model, dh = cfg.head_dim();

  auto kept_channels = [&](const std::string& bias_name, int width) {
    const auto& labels = partition.labels_of(bias_name);
    if (static_cast<int>(labels.size()) != width)
      throw ConsistencyError("label array for " + bias_name +
                             " does not match channel count");
    std::vector<int> kept;
    for (int ch = 0; ch < width; ++ch)
      if (labels[ch] == kGeneral) kept.push_back(ch);
    if (kept.empty())
      throw DimensionError(bias_name + ": all channels pruned, cannot shrink");
    return kept;
  };
  auto gather_cols = [&](const TensorPtr<T>& t, const std::vector<int>& cols) {
    auto r = make_tensor<T>({t->shape[0], static_cast<int>(cols.size())});
    for (int i = 0; i < t->shape[0]; ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        r->v[i * cols.size() + j] =
            t->v[static_cast<std::size_t>(i) * t->shape[1] + cols[j]];
    r->requires_grad = true;
    return r;
  };
  auto gather_rows = [&](const TensorPtr<T>& t, const std::vector<int>& rows) {
    const int cols = t->shape[1];
    auto r = make_tensor<T>({static_cast<int>(rows.size()), cols});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(t->v.begin() + static_cast<std::size_t>(rows[i]) * cols,
                t->v.begin() + static_cast<std::size_t>(rows[i] + 1) * cols,
                r->v.begin() + i * cols);
    r->requires_grad = true;
    return r;
  };
  auto gather_entries = [&](const TensorPtr<T>& t,
                            const std::vector<int>& idx) {
    auto r = make_tensor<T>({static_cast<int>(idx.size())});
    for (std::size_t i = 0; i < idx.size(); ++i) r->v[i] = t->v[idx[i]];
    r->requires_grad = true;
    return r;
  };

  for (int i = 0; i < cfg.n_layers; ++i) {
    for (const std::string sub :
         {"enc." + std::to_string(i) + ".attn",
          "dec." + std::to_string(i) + ".self",
          "dec." + std::to_string(i) + ".cross"}) {
      const auto kept = kept_channels(sub + ".bv", d);
      out.params()[sub + ".wv"] = gather_cols(model.param(sub + ".wv"), kept);
      out.params()[sub + ".bv"] =
          gather_entries(model.param(sub + ".bv"), kept);
      out.params()[sub + ".wo"] = gather_rows(model.param(sub + ".wo"), kept);
      std::vector<int> widths(cfg.n_heads, 0);
      for (int ch : kept) ++widths[ch / dh];
      out.set_v_widths(sub, std::move(widths));
    }
    for (const std::string sub : {"enc." + std::to_string(i) + ".ffn",
                                  "dec." + std::to_string(i) + ".ffn"}) {
      const auto kept = kept_channels(sub + ".b1", cfg.d_ff);
      out.params()[sub + ".w1"] = gather_cols(model.param(sub + ".w1"), kept);
      out.params()[sub + ".b1"] =
          gather_entries(model.param(sub + ".b1"), kept);
      out.params()[sub + ".w2"] = gather_rows(model.param(sub + ".w2"), kept);
    }
  }
  return out;
}

template class TransformerT<float>;
template class TransformerT<double>;

#define PTE_INSTANTIATE_TRANSFORMER_FNS(T)                                  \
  template TensorPtr<T> nll_loss<T>(TapeT<T>*, const TransformerT<T>&,      \
                                    std::span<const SentencePair>,          \
                                    const ForwardOptionsT<T>&);             \
  template DecodeResult decode<T>(const TransformerT<T>&,                   \
                                  std::span<const int>, int, int,           \
                                  const MaskView*);                         \
  template TransformerT<T> shrink_model<T>(const TransformerT<T>&,          \
                                           const ParamPartition&);

PTE_INSTANTIATE_TRANSFORMER_FNS(float)
PTE_INSTANTIATE_TRANSFORMER_FNS(double)

#undef PTE_INSTANTIATE_TRANSFORMER_FNS

}  // namespace pte
