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
// Minimal dense tensor library with reverse-mode automatic differentiation.
// Tensors are row-major buffers of float (training) or double (gradient-check
// tests). A Tape records one forward computation; backward() replays it in
// exact reverse order, accumulating gradients additively into every
// requires_grad tensor. A null tape pointer runs the same ops in pure
// inference mode with no recording.

#ifndef PTE_TENSOR_HPP_
#define PTE_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pte/rng.hpp"

namespace pte {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> v;  // values, row-major
  std::vector<T> g;  // gradient; empty until first accumulation
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
  void zero_grad() {
    if (!g.empty()) g.assign(g.size(), T(0));
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape);

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values);

template <typename T>
TensorPtr<T> make_scalar(T value);

// Records the backward closures of one forward pass, in topological order.
template <typename T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  // A second backward on the same tape is a usage error unless reset() ran.
  void backward(const TensorPtr<T>& loss);

  void reset() {
    records_.clear();
    used_ = false;
  }

  std::size_t size() const { return records_.size(); }

 private:
  std::vector<std::function<void()>> records_;
  bool used_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// Ops. All ops validate shapes, check outputs for NaN/Inf, and, when tape is
// non-null and an input requires gradients, record a backward closure.
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> matmul(TapeT<T>* tape, const TensorPtr<T>& a,
                    const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> transpose(TapeT<T>* tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> add(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

// Broadcast add of a length-n bias over every row of an [m x n] input.
template <typename T>
TensorPtr<T> add_row_bias(TapeT<T>* tape, const TensorPtr<T>& x,
                          const TensorPtr<T>& bias);

template <typename T>
TensorPtr<T> mul(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> scale(TapeT<T>* tape, const TensorPtr<T>& x, T factor);

template <typename T>
TensorPtr<T> relu(TapeT<T>* tape, const TensorPtr<T>& x);

// Numerically stable softmax along `axis` of a 1-D or 2-D tensor; subtracts
// the axis max before exponentiation.
template <typename T>
TensorPtr<T> softmax(TapeT<T>* tape, const TensorPtr<T>& x, int axis);

// Per-row normalization of the last dimension: gain * (x - mean) / sqrt(var
// + eps) + bias, with biased (1/n) variance.
template <typename T>
TensorPtr<T> layer_norm(TapeT<T>* tape, const TensorPtr<T>& x,
                        const TensorPtr<T>& gain, const TensorPtr<T>& bias,
                        T eps);

// Gathers rows of an embedding table: out[i, :] = table[ids[i], :].
template <typename T>
TensorPtr<T> embed_lookup(TapeT<T>* tape, const TensorPtr<T>& table,
                          std::span<const int> ids);

// Column-wise concatenation of per-head outputs into one [m x sum(n_i)].
template <typename T>
TensorPtr<T> concat_heads(TapeT<T>* tape,
                          const std::vector<TensorPtr<T>>& parts);

template <typename T>
TensorPtr<T> slice_cols(TapeT<T>* tape, const TensorPtr<T>& x, int col_begin,
                        int col_end);

template <typename T>
TensorPtr<T> sum(TapeT<T>* tape, const TensorPtr<T>& x);

// Mean over non-ignored positions of -log softmax(logits)[target]. Targets
// equal to ignore_index contribute nothing; all positions ignored is a usage
// error.
template <typename T>
TensorPtr<T> cross_entropy(TapeT<T>* tape, const TensorPtr<T>& logits,
                           std::span<const int> targets, int ignore_index);

// Inverted dropout with a deterministic seeded mask; identity when rate == 0.
template <typename T>
TensorPtr<T> dropout(TapeT<T>* tape, const TensorPtr<T>& x, T rate, Rng& rng);

// Throws NumericError if any value is NaN or Inf.
template <typename T>
void check_finite(const TensorT<T>& t, const char* op_name);

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace pte

#endif  // PTE_TENSOR_HPP_
