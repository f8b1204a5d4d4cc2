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

#include "pte/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "pte/errors.hpp"
#include "pte/importance.hpp"

namespace pte {

namespace {

using Json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'P', 'T', 'E', '1'};

void append_le32(std::string* out, std::uint32_t bits) {
  out->push_back(static_cast<char>(bits & 0xff));
  out->push_back(static_cast<char>((bits >> 8) & 0xff));
  out->push_back(static_cast<char>((bits >> 16) & 0xff));
  out->push_back(static_cast<char>((bits >> 24) & 0xff));
}

void append_f32(std::string* out, float x) {
  append_le32(out, std::bit_cast<std::uint32_t>(x));
}

float read_f32(const char* p) {
  const auto b = [&](int i) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(p[i]));
  };
  return std::bit_cast<float>(b(0) | (b(1) << 8) | (b(2) << 16) |
                              (b(3) << 24));
}

Json config_to_json(const ModelConfig& c) {
  Json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["src_vocab"] = c.src_vocab;
  j["tgt_vocab"] = c.tgt_vocab;
  j["max_len"] = c.max_len;
  j["dropout_rate"] = c.dropout_rate;
  j["shared_embeddings"] = c.shared_embeddings;
  return j;
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<float>();
  c.shared_embeddings = j.at("shared_embeddings").get<bool>();
  return c;
}

Json rle_encode(const std::vector<Label>& labels) {
  Json runs = Json::array();
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    runs.push_back(Json::array({static_cast<int>(labels[i]),
                                static_cast<std::uint64_t>(j - i)}));
    i = j;
  }
  return runs;
}

std::vector<Label> rle_decode(const Json& runs) {
  std::vector<Label> labels;
  for (const auto& run : runs) {
    const int label = run.at(0).get<int>();
    const std::uint64_t count = run.at(1).get<std::uint64_t>();
    labels.insert(labels.end(), count, static_cast<Label>(label));
  }
  return labels;
}

Json partition_to_json(const ParamPartition& part) {
  Json j;
  j["granularity"] = granularity_to_string(part.granularity);
  j["n_domains_planned"] = part.n_domains_planned;
  j["next_domain"] = part.next_domain;
  j["exclusions"] = part.exclusions;
  Json labels;
  for (const auto& [name, arr] : part.labels) labels[name] = rle_encode(arr);
  j["labels"] = std::move(labels);
  Json order = Json::array();
  for (const auto& ref : part.free_weight_order)
    order.push_back(Json::array({ref.tensor, ref.index}));
  j["free_weight_order"] = std::move(order);
  j["free_site_order"] = part.free_site_order;
  return j;
}

ParamPartition partition_from_json(const Json& j, const ModelConfig& config) {
  ParamPartition part;
  part.granularity = granularity_from_string(j.at("granularity").get<std::string>());
  part.n_domains_planned = j.at("n_domains_planned").get<int>();
  part.next_domain = j.at("next_domain").get<int>();
  for (const auto& name : j.at("exclusions"))
    part.exclusions.insert(name.get<std::string>());
  for (const auto& [name, runs] : j.at("labels").items())
    part.labels[name] = rle_decode(runs);
  for (const auto& ref : j.at("free_weight_order"))
    part.free_weight_order.push_back(
        {ref.at(0).get<std::string>(), ref.at(1).get<std::int64_t>()});
  part.free_site_order = j.at("free_site_order").get<std::vector<int>>();
  // The site table is a pure function of the architecture.
  if (part.granularity == Granularity::kNeuron)
    part.sites = tracked_neurons(config);
  return part;
}

}  // namespace

Transformer Checkpoint::to_model() const {
  Transformer model(config);
  if (model.params().size() != params.size())
    throw ConsistencyError("checkpoint tensor set does not match the config");
  // Tensors are adopted with their stored shapes: physically shrunk models
  // legitimately differ from the config's canonical sizes.
  for (auto& [name, t] : model.params()) {
    auto it = params.find(name);
    if (it == params.end())
      throw ConsistencyError("checkpoint is missing tensor: " + name);
    auto copy = make_tensor<float>(it->second->shape, it->second->v);
    copy->requires_grad = true;
    t = std::move(copy);
  }
  for (const auto& [prefix, widths] : v_widths)
    model.set_v_widths(prefix, widths);
  return model;
}

void save_checkpoint(const std::string& path, const Transformer& model,
                     const ParamPartition* partition,
                     const std::map<std::string, std::string>& meta) {
  Json header;
  header["format_version"] = 1;
  header["dtype"] = "f32";
  header["config"] = config_to_json(model.config());
  Json meta_json;
  for (const auto& [k, v] : meta) meta_json[k] = v;
  header["meta"] = std::move(meta_json);

  Json tensors = Json::array();
  std::string payload;
  for (const auto& [name, t] : model.params()) {
    Json entry;
    entry["name"] = name;
    entry["shape"] = t->shape;
    tensors.push_back(std::move(entry));
    for (float x : t->v) append_f32(&payload, x);
  }
  header["tensors"] = std::move(tensors);

  Json widths;
  for (const auto& [name, t] : model.params()) {
    (void)t;
    const auto dot = name.rfind('.');
    if (dot == std::string::npos || name.substr(dot) != ".wv") continue;
    const std::string prefix = name.substr(0, dot);
    widths[prefix] = model.v_widths(prefix);
  }
  header["v_widths"] = std::move(widths);
  header["partition"] =
      partition ? partition_to_json(*partition) : Json(nullptr);

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint to " + path);
  out.write(kMagic, 4);
  const std::uint64_t n = header_text.size();
  char len[8];
  for (int i = 0; i < 8; ++i)
    len[i] = static_cast<char>((n >> (8 * i)) & 0xff);
  out.write(len, 8);
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("failed while writing checkpoint to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path + " is not a PTE1 checkpoint");
  char len[8];
  in.read(len, 8);
  if (!in) throw DataError("truncated checkpoint header in " + path);
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i)
    n |= static_cast<std::uint64_t>(static_cast<unsigned char>(len[i]))
         << (8 * i);
  if (n == 0 || n > (1ull << 30))
    throw DataError("implausible checkpoint header length in " + path);
  std::string header_text(n, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint header in " + path);

  Json header;
  try {
    header = Json::parse(header_text);
  } catch (const std::exception& e) {
    throw DataError("unparseable checkpoint header in " + path + ": " +
                    e.what());
  }
  if (header.at("dtype").get<std::string>() != "f32")
    throw DataError("unsupported checkpoint dtype in " + path);

  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  for (const auto& [k, v] : header.at("meta").items())
    ck.meta[k] = v.get<std::string>();

  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    auto t = make_tensor<float>(shape);
    std::string bytes(static_cast<std::size_t>(t->numel()) * 4, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw DataError("truncated checkpoint payload in " + path);
    for (std::int64_t i = 0; i < t->numel(); ++i)
      t->v[static_cast<std::size_t>(i)] = read_f32(bytes.data() + 4 * i);
    t->requires_grad = true;
    ck.params[name] = std::move(t);
  }
  for (const auto& [prefix, w] : header.at("v_widths").items())
    ck.v_widths[prefix] = w.get<std::vector<int>>();
  if (!header.at("partition").is_null())
    ck.partition = partition_from_json(header.at("partition"), ck.config);
  return ck;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &n) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericError("SHA-256 digest computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string general_digest(
    const std::map<std::string, TensorPtr<float>>& params,
    const ParamPartition& partition) {
  std::string bytes;
  for (const auto& [name, t] : params) {
    const auto& arr = partition.labels_of(name);
    if (static_cast<std::int64_t>(arr.size()) != t->numel())
      throw ConsistencyError("label array for " + name +
                             " is not congruent with the tensor");
    for (std::size_t i = 0; i < arr.size(); ++i)
      if (arr[i] == kGeneral) append_f32(&bytes, t->v[i]);
  }
  return sha256_hex(bytes);
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace pte
