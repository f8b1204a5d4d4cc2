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
// Checkpoint file format "PTE1": the 4-byte magic, a little-endian uint64
// header length, a JSON header (config, tensor names and shapes, dtype,
// run-length-encoded partition labels, metadata), then the raw
// little-endian f32 payload in header order. Round-trips are bit-exact and
// byte-deterministic for identical inputs.

#ifndef PTE_CHECKPOINT_HPP_
#define PTE_CHECKPOINT_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pte/partition.hpp"
#include "pte/tensor.hpp"
#include "pte/transformer.hpp"

namespace pte {

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, TensorPtr<float>> params;
  std::map<std::string, std::vector<int>> v_widths;
  std::optional<ParamPartition> partition;
  std::map<std::string, std::string> meta;

  // Rebuilds a model carrying this checkpoint's parameters and value
  // widths. Throws ConsistencyError if the tensor set does not match the
  // config's parameter names.
  Transformer to_model() const;
};

void save_checkpoint(const std::string& path, const Transformer& model,
                     const ParamPartition* partition,
                     const std::map<std::string, std::string>& meta);

Checkpoint load_checkpoint(const std::string& path);

// SHA-256 hex digest of the little-endian f32 bytes of every
// GENERAL-labeled entry, tensors in name order. The frozen-core invariant
// is "this digest never changes after distillation".
std::string general_digest(const std::map<std::string, TensorPtr<float>>& params,
                           const ParamPartition& partition);

// SHA-256 hex digest of a whole file, for byte-reproducibility checks.
std::string file_digest(const std::string& path);

// SHA-256 hex digest of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace pte

#endif  // PTE_CHECKPOINT_HPP_
