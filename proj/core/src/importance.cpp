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

#include "pte/importance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pte/errors.hpp"

namespace pte {

namespace {

void add_group_sites(std::vector<NeuronSite>* sites, const std::string& prefix,
                     int channels, bool attention) {
  for (int j = 0; j < channels; ++j) {
    NeuronSite site;
    site.group = prefix;
    site.channel = j;
    if (attention) {
      site.slices = {{prefix + ".wv", 1, j},
                     {prefix + ".bv", 0, j},
                     {prefix + ".wo", 0, j}};
    } else {
      site.slices = {{prefix + ".w1", 1, j},
                     {prefix + ".b1", 0, j},
                     {prefix + ".w2", 0, j}};
    }
    sites->push_back(std::move(site));
  }
}

}  // namespace

std::vector<NeuronSite> tracked_neurons(const ModelConfig& config) {
  std::vector<NeuronSite> sites;
  // The first encoder layer and the last decoder layer stay intact.
  for (int i = 1; i < config.n_layers; ++i) {
    const std::string enc = "enc." + std::to_string(i);
    add_group_sites(&sites, enc + ".attn", config.d_model, true);
    add_group_sites(&sites, enc + ".ffn", config.d_ff, false);
  }
  for (int i = 0; i < config.n_layers - 1; ++i) {
    const std::string dec = "dec." + std::to_string(i);
    add_group_sites(&sites, dec + ".self", config.d_model, true);
    add_group_sites(&sites, dec + ".cross", config.d_model, true);
    add_group_sites(&sites, dec + ".ffn", config.d_ff, false);
  }
  return sites;
}

std::set<std::string> standard_exclusions(
    const std::map<std::string, TensorPtr<float>>& params) {
  std::set<std::string> out;
  for (const auto& [name, t] : params)
    if (name.find(".ln") != std::string::npos) out.insert(name);
  return out;
}

ImportanceReport magnitude_importance(const Transformer& model) {
  ImportanceReport report;
  report.granularity = Granularity::kWeight;
  report.criterion = "magnitude";
  for (const auto& [name, t] : model.params()) {
    if (t->shape.size() != 2) continue;
    auto& scores = report.weight_scores[name];
    scores.resize(t->v.size());
    for (std::size_t i = 0; i < t->v.size(); ++i)
      scores[i] = std::fabs(t->v[i]);
  }
  return report;
}

void accumulate_taylor(const TensorT<float>& act, std::vector<double>& acc) {
  const int rows = act.rows(), cols = act.cols();
  if (static_cast<int>(acc.size()) != cols)
    throw ConsistencyError("taylor accumulator does not match channel count");
  if (act.g.empty()) return;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * cols + j;
      acc[j] += std::fabs(static_cast<double>(act.v[k]) *
                          static_cast<double>(act.g[k]));
    }
}

ImportanceReport taylor_importance(const Transformer& model,
                                   std::span<const SentencePair> data) {
  if (data.empty())
    throw UsageError("taylor importance needs at least one example");

  ImportanceReport report;
  report.granularity = Granularity::kNeuron;
  report.criterion = "taylor";
  report.n_examples = static_cast<std::int64_t>(data.size());
  report.sites = tracked_neurons(model.config());

  // Channel c of a group lives at base[group] + c in the site order.
  std::map<std::string, std::size_t> base;
  std::map<std::string, int> group_size;
  for (std::size_t i = 0; i < report.sites.size(); ++i) {
    const auto& site = report.sites[i];
    if (!base.count(site.group)) base[site.group] = i;
    ++group_size[site.group];
  }

  std::vector<double> acc(report.sites.size(), 0.0);
  for (const auto& pair : data) {
    Tape tape;
    ActivationTrace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    auto loss = nll_loss<float>(&tape, model, std::span(&pair, 1), opts);
    tape.backward(loss);
    for (const auto& [group, start] : base) {
      auto it = trace.activations.find(group);
      if (it == trace.activations.end())
        throw ConsistencyError("forward trace is missing group: " + group);
      std::vector<double> partial(group_size[group], 0.0);
      accumulate_taylor(*it->second, partial);
      for (std::size_t j = 0; j < partial.size(); ++j)
        acc[start + j] += partial[j];
    }
  }
  for (const auto& [name, t] : model.params()) t->zero_grad();

  report.site_scores.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    report.site_scores[i] =
        static_cast<float>(acc[i] / static_cast<double>(data.size()));
  return report;
}

void write_report(const ImportanceReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report to " + path);
  char buf[64];
  out << "criterion " << report.criterion << "\n";
  out << "granularity " << granularity_to_string(report.granularity) << "\n";
  if (report.granularity == Granularity::kNeuron) {
    out << "n_examples " << report.n_examples << "\n";
    out << "sites " << report.sites.size() << "\n";
    for (std::size_t i = 0; i < report.sites.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g",
                    static_cast<double>(report.site_scores[i]));
      out << report.sites[i].group << "." << report.sites[i].channel << " "
          << buf << "\n";
    }
  } else {
    out << "tensors " << report.weight_scores.size() << "\n";
    for (const auto& [name, scores] : report.weight_scores) {
      out << "tensor " << name << " " << scores.size() << "\n";
      for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g",
                      static_cast<double>(scores[i]));
        out << buf << (i + 1 == scores.size() ? "\n" : " ");
      }
    }
  }
  if (!out) throw DataError("failed while writing report to " + path);
}

namespace {

std::string expect_word(std::istream& in, const std::string& what) {
  std::string word;
  if (!(in >> word)) throw DataError("importance report: missing " + what);
  return word;
}

std::int64_t expect_count(std::istream& in, const std::string& what) {
  std::int64_t n = 0;
  if (!(in >> n) || n < 0)
    throw DataError("importance report: bad count for " + what);
  return n;
}

}  // namespace

ImportanceReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read importance report " + path);

  ImportanceReport report;
  if (expect_word(in, "criterion keyword") != "criterion")
    throw DataError("importance report: expected criterion line");
  report.criterion = expect_word(in, "criterion value");
  if (expect_word(in, "granularity keyword") != "granularity")
    throw DataError("importance report: expected granularity line");
  report.granularity = granularity_from_string(expect_word(in, "granularity"));

  if (report.granularity == Granularity::kNeuron) {
    if (expect_word(in, "n_examples keyword") != "n_examples")
      throw DataError("importance report: expected n_examples line");
    report.n_examples = expect_count(in, "n_examples");
    if (expect_word(in, "sites keyword") != "sites")
      throw DataError("importance report: expected sites line");
    const std::int64_t n = expect_count(in, "sites");
    for (std::int64_t i = 0; i < n; ++i) {
      const std::string key = expect_word(in, "site key");
      const auto dot = key.rfind('.');
      if (dot == std::string::npos || dot + 1 == key.size())
        throw DataError("importance report: malformed site key " + key);
      NeuronSite site;
      site.group = key.substr(0, dot);
      site.channel = std::stoi(key.substr(dot + 1));
      report.sites.push_back(std::move(site));
      float score = 0.0f;
      if (!(in >> score)) throw DataError("importance report: missing score");
      report.site_scores.push_back(score);
    }
  } else {
    if (expect_word(in, "tensors keyword") != "tensors")
      throw DataError("importance report: expected tensors line");
    const std::int64_t n = expect_count(in, "tensors");
    for (std::int64_t t = 0; t < n; ++t) {
      if (expect_word(in, "tensor keyword") != "tensor")
        throw DataError("importance report: expected tensor line");
      const std::string name = expect_word(in, "tensor name");
      const std::int64_t numel = expect_count(in, "tensor size");
      auto& scores = report.weight_scores[name];
      scores.resize(static_cast<std::size_t>(numel));
      for (auto& s : scores)
        if (!(in >> s))
          throw DataError("importance report: truncated scores for " + name);
    }
  }
  return report;
}

}  // namespace pte
