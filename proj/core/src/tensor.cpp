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

#include "pte/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pte/errors.hpp"

namespace pte {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0)
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
  }
}

template <typename T>
void require_2d(const TensorPtr<T>& x, const char* op) {
  if (x->shape.size() != 2)
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " +
                         shape_str(x->shape));
}

}  // namespace

template <typename T>
TensorPtr<T> make_tensor(Shape shape) {
  validate_shape(shape);
  auto t = std::make_shared<TensorT<T>>();
  t->v.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
  t->shape = std::move(shape);
  return t;
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  auto t = std::make_shared<TensorT<T>>();
  t->shape = std::move(shape);
  t->v = std::move(values);
  return t;
}

template <typename T>
TensorPtr<T> make_scalar(T value) {
  return make_tensor<T>({1}, {value});
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* op_name) {
  for (T x : t.v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op_name) +
                         ": non-finite value in output");
  }
}

template <typename T>
void TapeT<T>::backward(const TensorPtr<T>& loss) {
  if (loss->numel() != 1)
    throw UsageError("backward: loss must be scalar, got " +
                     shape_str(loss->shape));
  if (used_)
    throw UsageError("backward: tape already consumed; reset() first");
  used_ = true;
  loss->ensure_grad();
  loss->g[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

namespace {

template <typename T>
bool track(TapeT<T>* tape, std::initializer_list<const TensorPtr<T>*> inputs) {
  if (!tape) return false;
  for (const TensorPtr<T>* in : inputs) {
    if ((*in)->requires_grad) return true;
  }
  return false;
}

}  // namespace

template <typename T>
TensorPtr<T> matmul(TapeT<T>* tape, const TensorPtr<T>& a,
                    const TensorPtr<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a->shape[0], k = a->shape[1];
  const int k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = make_tensor<T>({m, n});
  const T* av = a->v.data();
  const T* bv = b->v.data();
  T* ov = out->v.data();
  for (int i = 0; i < m; ++i) {
    T* orow = ov + static_cast<std::size_t>(i) * n;
    const T* arow = av + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = bv + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  check_finite(*out, "matmul");
  if (track(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, m, k, n]() {
      const T* og = out->g.data();
      if (a->requires_grad || !a->g.empty()) {
        a->ensure_grad();
        // dA += dC * B^T
        T* ag = a->g.data();
        const T* bv = b->v.data();
        for (int i = 0; i < m; ++i) {
          const T* ogrow = og + static_cast<std::size_t>(i) * n;
          T* agrow = ag + static_cast<std::size_t>(i) * k;
          for (int p = 0; p < k; ++p) {
            const T* brow = bv + static_cast<std::size_t>(p) * n;
            T acc = T(0);
            for (int j = 0; j < n; ++j) acc += ogrow[j] * brow[j];
            agrow[p] += acc;
          }
        }
      }
      if (b->requires_grad || !b->g.empty()) {
        b->ensure_grad();
        // dB += A^T * dC
        T* bg = b->g.data();
        const T* av = a->v.data();
        for (int i = 0; i < m; ++i) {
          const T* arow = av + static_cast<std::size_t>(i) * k;
          const T* ogrow = og + static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const T aip = arow[p];
            if (aip == T(0)) continue;
            T* bgrow = bg + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) bgrow[j] += aip * ogrow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> transpose(TapeT<T>* tape, const TensorPtr<T>& x) {
  require_2d(x, "transpose");
  const int m = x->shape[0], n = x->shape[1];
  auto out = make_tensor<T>({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->v[static_cast<std::size_t>(j) * m + i] =
          x->v[static_cast<std::size_t>(i) * n + j];
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, m, n]() {
      x->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          x->g[static_cast<std::size_t>(i) * n + j] +=
              out->g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> add(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("add: shape mismatch, " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
  check_finite(*out, "add");
  if (track(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      if (a->requires_grad || !a->g.empty()) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
      }
      if (b->requires_grad || !b->g.empty()) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> add_row_bias(TapeT<T>* tape, const TensorPtr<T>& x,
                          const TensorPtr<T>& bias) {
  require_2d(x, "add_row_bias");
  const int m = x->shape[0], n = x->shape[1];
  if (bias->shape.size() != 1 || bias->shape[0] != n)
    throw DimensionError("add_row_bias: bias " + shape_str(bias->shape) +
                         " does not match row width " + std::to_string(n));
  auto out = make_tensor<T>({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->v[static_cast<std::size_t>(i) * n + j] =
          x->v[static_cast<std::size_t>(i) * n + j] + bias->v[j];
  check_finite(*out, "add_row_bias");
  if (track(tape, {&x, &bias})) {
    out->requires_grad = true;
    tape->record([x, bias, out, m, n]() {
      if (x->requires_grad || !x->g.empty()) {
        x->ensure_grad();
        for (std::size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
      }
      if (bias->requires_grad || !bias->g.empty()) {
        bias->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            bias->g[j] += out->g[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> mul(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("mul: shape mismatch, " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] * b->v[i];
  check_finite(*out, "mul");
  if (track(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      if (a->requires_grad || !a->g.empty()) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->g.size(); ++i)
          a->g[i] += out->g[i] * b->v[i];
      }
      if (b->requires_grad || !b->g.empty()) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->g.size(); ++i)
          b->g[i] += out->g[i] * a->v[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> scale(TapeT<T>* tape, const TensorPtr<T>& x, T factor) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = x->v[i] * factor;
  check_finite(*out, "scale");
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, factor]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->g.size(); ++i)
        x->g[i] += out->g[i] * factor;
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> relu(TapeT<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < out->v.size(); ++i)
    out->v[i] = x->v[i] > T(0) ? x->v[i] : T(0);
  if (track(tape, {&x})) {
    out->requires_grad = true;
    // subgradient at 0 is 0
    tape->record([x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->g.size(); ++i)
        if (x->v[i] > T(0)) x->g[i] += out->g[i];
    });
  }
  return out;
}

namespace {

// Iterates the `axis` slices of a 1-D or 2-D tensor: `count` slices of
// length `len` with stride `stride`, starting every `base_step`.
struct AxisView {
  int count;
  int len;
  std::size_t stride;
  std::size_t base_step;
};

template <typename T>
AxisView axis_view(const TensorPtr<T>& x, int axis, const char* op) {
  if (x->shape.size() == 1) {
    if (axis != 0 && axis != -1)
      throw DimensionError(std::string(op) + ": invalid axis for 1-D tensor");
    return {1, x->shape[0], 1, 0};
  }
  if (x->shape.size() == 2) {
    if (axis == 1 || axis == -1)
      return {x->shape[0], x->shape[1], 1,
              static_cast<std::size_t>(x->shape[1])};
    if (axis == 0)
      return {x->shape[1], x->shape[0], static_cast<std::size_t>(x->shape[1]),
              1};
    throw DimensionError(std::string(op) + ": invalid axis");
  }
  throw DimensionError(std::string(op) + ": only 1-D and 2-D supported");
}

}  // namespace

template <typename T>
TensorPtr<T> softmax(TapeT<T>* tape, const TensorPtr<T>& x, int axis) {
  const AxisView view = axis_view(x, axis, "softmax");
  auto out = make_tensor<T>(x->shape);
  for (int s = 0; s < view.count; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * view.base_step;
    T mx = x->v[base];
    for (int i = 1; i < view.len; ++i)
      mx = std::max(mx, x->v[base + i * view.stride]);
    T denom = T(0);
    for (int i = 0; i < view.len; ++i) {
      const T e = std::exp(x->v[base + i * view.stride] - mx);
      out->v[base + i * view.stride] = e;
      denom += e;
    }
    for (int i = 0; i < view.len; ++i) out->v[base + i * view.stride] /= denom;
  }
  check_finite(*out, "softmax");
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, view]() {
      x->ensure_grad();
      for (int s = 0; s < view.count; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * view.base_step;
        T dot = T(0);
        for (int i = 0; i < view.len; ++i) {
          const std::size_t k = base + i * view.stride;
          dot += out->g[k] * out->v[k];
        }
        for (int i = 0; i < view.len; ++i) {
          const std::size_t k = base + i * view.stride;
          x->g[k] += out->v[k] * (out->g[k] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> layer_norm(TapeT<T>* tape, const TensorPtr<T>& x,
                        const TensorPtr<T>& gain, const TensorPtr<T>& bias,
                        T eps) {
  if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
  const int n = x->shape.back();
  const int m = static_cast<int>(x->numel()) / n;
  if (gain->numel() != n || bias->numel() != n)
    throw DimensionError("layer_norm: gain/bias must match last dimension " +
                         std::to_string(n));
  auto out = make_tensor<T>(x->shape);
  // saved per row for backward: 1/sigma and normalized values
  auto inv_sigma = std::make_shared<std::vector<T>>(m);
  auto x_hat = std::make_shared<std::vector<T>>(x->v.size());
  for (int r = 0; r < m; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * n;
    T mean = T(0);
    for (int j = 0; j < n; ++j) mean += x->v[base + j];
    mean /= T(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
      const T d = x->v[base + j] - mean;
      var += d * d;
    }
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    for (int j = 0; j < n; ++j) {
      const T xh = (x->v[base + j] - mean) * is;
      (*x_hat)[base + j] = xh;
      out->v[base + j] = xh * gain->v[j] + bias->v[j];
    }
  }
  check_finite(*out, "layer_norm");
  if (track(tape, {&x, &gain, &bias})) {
    out->requires_grad = true;
    tape->record([x, gain, bias, out, inv_sigma, x_hat, m, n]() {
      const bool need_x = x->requires_grad || !x->g.empty();
      if (need_x) x->ensure_grad();
      const bool need_gain = gain->requires_grad || !gain->g.empty();
      if (need_gain) gain->ensure_grad();
      const bool need_bias = bias->requires_grad || !bias->g.empty();
      if (need_bias) bias->ensure_grad();
      for (int r = 0; r < m; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * n;
        if (need_gain || need_bias) {
          for (int j = 0; j < n; ++j) {
            if (need_gain)
              gain->g[j] += out->g[base + j] * (*x_hat)[base + j];
            if (need_bias) bias->g[j] += out->g[base + j];
          }
        }
        if (need_x) {
          // dx = (g*dy - mean(g*dy) - x_hat * mean(g*dy*x_hat)) / sigma
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int j = 0; j < n; ++j) {
            const T dy = out->g[base + j] * gain->v[j];
            sum_dy += dy;
            sum_dy_xhat += dy * (*x_hat)[base + j];
          }
          const T inv_n = T(1) / T(n);
          for (int j = 0; j < n; ++j) {
            const T dy = out->g[base + j] * gain->v[j];
            x->g[base + j] += (*inv_sigma)[r] *
                              (dy - sum_dy * inv_n -
                               (*x_hat)[base + j] * sum_dy_xhat * inv_n);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> embed_lookup(TapeT<T>* tape, const TensorPtr<T>& table,
                          std::span<const int> ids) {
  require_2d(table, "embed_lookup");
  const int vocab = table->shape[0], dim = table->shape[1];
  if (ids.empty()) throw UsageError("embed_lookup: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= vocab)
      throw DataError("embed_lookup: id " + std::to_string(id) +
                      " out of vocabulary of size " + std::to_string(vocab));
  }
  auto out = make_tensor<T>({static_cast<int>(ids.size()), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const T* src = table->v.data() + static_cast<std::size_t>(ids[i]) * dim;
    std::copy(src, src + dim, out->v.data() + i * dim);
  }
  if (track(tape, {&table})) {
    out->requires_grad = true;
    std::vector<int> ids_copy(ids.begin(), ids.end());
    tape->record([table, out, ids_copy, dim]() {
      table->ensure_grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        T* dst = table->g.data() + static_cast<std::size_t>(ids_copy[i]) * dim;
        const T* src = out->g.data() + i * dim;
        for (int j = 0; j < dim; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> concat_heads(TapeT<T>* tape,
                          const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_heads: no inputs");
  const int m = parts[0]->shape[0];
  int total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_heads");
    if (p->shape[0] != m)
      throw DimensionError("concat_heads: row count mismatch");
    total += p->shape[1];
  }
  auto out = make_tensor<T>({m, total});
  int col = 0;
  for (const auto& p : parts) {
    const int n = p->shape[1];
    for (int i = 0; i < m; ++i)
      std::copy(p->v.data() + static_cast<std::size_t>(i) * n,
                p->v.data() + static_cast<std::size_t>(i) * n + n,
                out->v.data() + static_cast<std::size_t>(i) * total + col);
    col += n;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p->requires_grad;
  if (tape && any_grad) {
    out->requires_grad = true;
    tape->record([parts, out, m, total]() {
      int col = 0;
      for (const auto& p : parts) {
        const int n = p->shape[1];
        if (p->requires_grad || !p->g.empty()) {
          p->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              p->g[static_cast<std::size_t>(i) * n + j] +=
                  out->g[static_cast<std::size_t>(i) * total + col + j];
        }
        col += n;
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> slice_cols(TapeT<T>* tape, const TensorPtr<T>& x, int col_begin,
                        int col_end) {
  require_2d(x, "slice_cols");
  const int m = x->shape[0], n = x->shape[1];
  if (col_begin < 0 || col_end > n || col_begin >= col_end)
    throw DimensionError("slice_cols: invalid range [" +
                         std::to_string(col_begin) + ", " +
                         std::to_string(col_end) + ") for width " +
                         std::to_string(n));
  const int w = col_end - col_begin;
  auto out = make_tensor<T>({m, w});
  for (int i = 0; i < m; ++i)
    std::copy(x->v.data() + static_cast<std::size_t>(i) * n + col_begin,
              x->v.data() + static_cast<std::size_t>(i) * n + col_end,
              out->v.data() + static_cast<std::size_t>(i) * w);
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, m, n, w, col_begin]() {
      x->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          x->g[static_cast<std::size_t>(i) * n + col_begin + j] +=
              out->g[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum(TapeT<T>* tape, const TensorPtr<T>& x) {
  T acc = T(0);
  for (T v : x->v) acc += v;
  auto out = make_scalar<T>(acc);
  check_finite(*out, "sum");
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->g.size(); ++i) x->g[i] += out->g[0];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> cross_entropy(TapeT<T>* tape, const TensorPtr<T>& logits,
                           std::span<const int> targets, int ignore_index) {
  require_2d(logits, "cross_entropy");
  const int k = logits->shape[0], v = logits->shape[1];
  if (static_cast<int>(targets.size()) != k)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(k) + " rows");
  int active = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= v)
      throw DataError("cross_entropy: target " + std::to_string(t) +
                      " outside [0, " + std::to_string(v) + ")");
    ++active;
  }
  if (active == 0)
    throw UsageError("cross_entropy: all positions ignored, mean undefined");

  // softmax probabilities are saved for the backward pass
  auto probs = std::make_shared<std::vector<T>>(logits->v.size());
  T total = T(0);
  for (int r = 0; r < k; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * v;
    T mx = logits->v[base];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits->v[base + j]);
    T denom = T(0);
    for (int j = 0; j < v; ++j) {
      const T e = std::exp(logits->v[base + j] - mx);
      (*probs)[base + j] = e;
      denom += e;
    }
    for (int j = 0; j < v; ++j) (*probs)[base + j] /= denom;
    if (targets[r] != ignore_index) {
      const T lse = mx + std::log(denom);
      total += lse - logits->v[base + targets[r]];
    }
  }
  auto out = make_scalar<T>(total / T(active));
  check_finite(*out, "cross_entropy");
  if (track(tape, {&logits})) {
    out->requires_grad = true;
    std::vector<int> tgt(targets.begin(), targets.end());
    tape->record([logits, out, probs, tgt, k, v, ignore_index, active]() {
      logits->ensure_grad();
      const T d = out->g[0] / T(active);
      for (int r = 0; r < k; ++r) {
        if (tgt[r] == ignore_index) continue;
        const std::size_t base = static_cast<std::size_t>(r) * v;
        for (int j = 0; j < v; ++j)
          logits->g[base + j] += d * (*probs)[base + j];
        logits->g[base + tgt[r]] -= d;
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> dropout(TapeT<T>* tape, const TensorPtr<T>& x, T rate, Rng& rng) {
  if (rate < T(0) || rate >= T(1))
    throw ConfigError("dropout: rate must be in [0, 1)");
  if (rate == T(0)) return x;
  auto mask = std::make_shared<std::vector<T>>(x->v.size());
  const T keep_scale = T(1) / (T(1) - rate);
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < x->v.size(); ++i) {
    const T m = rng.uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
    (*mask)[i] = m;
    out->v[i] = x->v[i] * m;
  }
  if (track(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, mask]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->g.size(); ++i)
        x->g[i] += out->g[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explicit instantiations for the training (float) and gradient-check
// (double) scalar types.
// ---------------------------------------------------------------------------

template struct TensorT<float>;
template struct TensorT<double>;
template class TapeT<float>;
template class TapeT<double>;

#define PTE_INSTANTIATE_OPS(T)                                                \
  template TensorPtr<T> make_tensor<T>(Shape);                                \
  template TensorPtr<T> make_tensor<T>(Shape, std::vector<T>);                \
  template TensorPtr<T> make_scalar<T>(T);                                    \
  template void check_finite<T>(const TensorT<T>&, const char*);              \
  template TensorPtr<T> matmul<T>(TapeT<T>*, const TensorPtr<T>&,             \
                                  const TensorPtr<T>&);                       \
  template TensorPtr<T> transpose<T>(TapeT<T>*, const TensorPtr<T>&);         \
  template TensorPtr<T> add<T>(TapeT<T>*, const TensorPtr<T>&,               \
                               const TensorPtr<T>&);                          \
  template TensorPtr<T> add_row_bias<T>(TapeT<T>*, const TensorPtr<T>&,       \
                                        const TensorPtr<T>&);                 \
  template TensorPtr<T> mul<T>(TapeT<T>*, const TensorPtr<T>&,               \
                               const TensorPtr<T>&);                          \
  template TensorPtr<T> scale<T>(TapeT<T>*, const TensorPtr<T>&, T);          \
  template TensorPtr<T> relu<T>(TapeT<T>*, const TensorPtr<T>&);              \
  template TensorPtr<T> softmax<T>(TapeT<T>*, const TensorPtr<T>&, int);      \
  template TensorPtr<T> layer_norm<T>(TapeT<T>*, const TensorPtr<T>&,         \
                                      const TensorPtr<T>&,                    \
                                      const TensorPtr<T>&, T);                \
  template TensorPtr<T> embed_lookup<T>(TapeT<T>*, const TensorPtr<T>&,       \
                                        std::span<const int>);                \
  template TensorPtr<T> concat_heads<T>(TapeT<T>*,                            \
                                        const std::vector<TensorPtr<T>>&);    \
  template TensorPtr<T> slice_cols<T>(TapeT<T>*, const TensorPtr<T>&, int,    \
                                      int);                                   \
  template TensorPtr<T> sum<T>(TapeT<T>*, const TensorPtr<T>&);               \
  template TensorPtr<T> cross_entropy<T>(TapeT<T>*, const TensorPtr<T>&,      \
                                         std::span<const int>, int);          \
  template TensorPtr<T> dropout<T>(TapeT<T>*, const TensorPtr<T>&, T, Rng&);

PTE_INSTANTIATE_OPS(float)
PTE_INSTANTIATE_OPS(double)

#undef PTE_INSTANTIATE_OPS

}  // namespace pte
