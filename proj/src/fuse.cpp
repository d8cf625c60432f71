#include "omog/fuse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace omog {

SelectStrategy parse_strategy(const std::string& name) {
  if (name == "topk") return SelectStrategy::kTopK;
  if (name == "topk-uniform") return SelectStrategy::kTopKUniform;
  if (name == "random-k") return SelectStrategy::kRandomK;
  if (name == "least-k") return SelectStrategy::kLeastK;
  throw std::invalid_argument("unknown selection strategy '" + name +
                              "' (expected topk|topk-uniform|random-k|least-k)");
}

std::string strategy_name(SelectStrategy s) {
  switch (s) {
    case SelectStrategy::kTopK: return "topk";
    case SelectStrategy::kTopKUniform: return "topk-uniform";
    case SelectStrategy::kRandomK: return "random-k";
    case SelectStrategy::kLeastK: return "least-k";
  }
  return "?";
}

std::vector<std::int64_t> relevance_sample(std::int64_t n, std::int64_t cap,
                                           std::uint64_t seed) {
  if (cap <= 0 || n <= cap) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  Rng rng(derive_seed(seed, 7));
  std::vector<std::size_t> picked =
      rng.sample_without_replacement(static_cast<std::size_t>(n),
                                     static_cast<std::size_t>(cap));
  std::vector<std::int64_t> out(picked.begin(), picked.end());
  std::sort(out.begin(), out.end());
  return out;
}

double relevance_score(const BankEntry& entry, const HopStack& test,
                       const std::vector<std::int64_t>* sample) {
  if (test.dim != entry.meta.d || test.hops != entry.meta.alpha + 1) {
    throw std::invalid_argument("relevance_score: test stack " + std::to_string(test.hops) +
                                "x" + std::to_string(test.dim) + " does not match entry '" +
                                entry.meta.name + "' (alpha=" +
                                std::to_string(entry.meta.alpha) + ", d=" +
                                std::to_string(entry.meta.d) + ")");
  }
  std::vector<std::int64_t> all;
  if (!sample) {
    all.resize(static_cast<std::size_t>(test.n));
    std::iota(all.begin(), all.end(), 0);
    sample = &all;
  }
  if (sample->empty()) throw std::invalid_argument("relevance_score: empty node sample");

  VecD acc = VecD::Zero(test.dim);
  for (std::int64_t id : *sample) {
    const RowMat<float> h = test.node(id);
    const RowMat<float> mask = scoring_forward(entry.scoring, h);
    const RowMat<float> filtered = h + mask;
    acc += pool<float>(source_forward(entry.source, filtered)).cast<double>();
  }
  acc /= static_cast<double>(sample->size());
  return cosine(VecF(acc.cast<float>()), entry.centroid);
}

std::vector<double> relevance_scores(const std::vector<BankEntry>& entries,
                                     const HopStack& test, const FuseConfig& cfg) {
  const std::vector<std::int64_t> sample =
      relevance_sample(test.n, cfg.sample_cap, cfg.seed);
  std::vector<double> scores;
  scores.reserve(entries.size());
  for (const BankEntry& e : entries) scores.push_back(relevance_score(e, test, &sample));
  return scores;
}

FusionWeights select_and_weight(const std::vector<double>& scores, const FuseConfig& cfg) {
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("select_and_weight: empty score vector");
  const std::size_t k = static_cast<std::size_t>(cfg.k);
  if (cfg.k < 1 || k > n) {
    throw std::invalid_argument("select_and_weight: k=" + std::to_string(cfg.k) +
                                " out of range [1, " + std::to_string(n) + "]");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("select_and_weight: non-finite score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  FusionWeights fw;
  switch (cfg.strategy) {
    case SelectStrategy::kTopK:
    case SelectStrategy::kTopKUniform:
      // Descending score; equal scores keep bank (lexicographic) order.
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      fw.indices.assign(order.begin(), order.begin() + k);
      break;
    case SelectStrategy::kLeastK:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
      fw.indices.assign(order.begin(), order.begin() + k);
      break;
    case SelectStrategy::kRandomK: {
      Rng rng(derive_seed(cfg.seed, 11));
      fw.indices = rng.sample_without_replacement(n, k);
      break;
    }
  }

  if (cfg.strategy == SelectStrategy::kTopK) {
    if (!(cfg.temperature > 0.0)) {
      throw std::invalid_argument("select_and_weight: temperature must be > 0");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i : fw.indices) mx = std::max(mx, scores[i] / cfg.temperature);
    double z = 0.0;
    for (std::size_t i : fw.indices) z += std::exp(scores[i] / cfg.temperature - mx);
    for (std::size_t i : fw.indices) {
      fw.weights.push_back(std::exp(scores[i] / cfg.temperature - mx) / z);
    }
  } else {
    fw.weights.assign(k, 1.0 / static_cast<double>(k));
  }
  return fw;
}

SourceParams fuse_models(const std::vector<BankEntry>& entries, const FusionWeights& fw) {
  if (fw.indices.empty() || fw.indices.size() != fw.weights.size()) {
    throw std::invalid_argument("fuse_models: malformed fusion weights");
  }
  for (std::size_t i : fw.indices) {
    if (i >= entries.size()) throw std::invalid_argument("fuse_models: index out of range");
  }
  const SourceParams& first = entries[fw.indices[0]].source;
  for (std::size_t i : fw.indices) {
    const SourceParams& p = entries[i].source;
    if (p.d != first.d || p.alpha != first.alpha || p.d_ff != first.d_ff) {
      throw std::invalid_argument("fuse_models: entry shapes differ");
    }
  }

  // Flatten every selected model once, then average tensor-by-tensor in
  // double. A singleton selection round-trips float->double->float exactly.
  SourceParams fused = first;
  std::vector<std::pair<float*, Eigen::Index>> out;
  visit_tensors(fused, [&](const char*, auto& t) { out.emplace_back(t.data(), t.size()); });
  std::vector<std::vector<std::pair<const float*, Eigen::Index>>> ins(fw.indices.size());
  for (std::size_t j = 0; j < fw.indices.size(); ++j) {
    visit_tensors(entries[fw.indices[j]].source, [&](const char*, const auto& t) {
      ins[j].emplace_back(t.data(), t.size());
    });
  }

  for (std::size_t ti = 0; ti < out.size(); ++ti) {
    Eigen::Map<Eigen::ArrayXf> dst(out[ti].first, out[ti].second);
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(out[ti].second);
    for (std::size_t j = 0; j < ins.size(); ++j) {
      Eigen::Map<const Eigen::ArrayXf> src(ins[j][ti].first, ins[j][ti].second);
      acc += fw.weights[j] * src.cast<double>();
    }
    dst = acc.cast<float>();
  }
  return fused;
}

FusionOutcome fuse_for_test(const std::vector<BankEntry>& entries, const HopStack& test,
                            const FuseConfig& cfg) {
  if (entries.empty()) throw std::invalid_argument("fuse_for_test: empty bank");
  FusionOutcome out;
  out.names.reserve(entries.size());
  for (const BankEntry& e : entries) out.names.push_back(e.meta.name);
  out.scores = relevance_scores(entries, test, cfg);
  out.weights = select_and_weight(out.scores, cfg);
  out.fused = fuse_models(entries, out.weights);
  return out;
}

MatF encode_nodes(const SourceParams& params, const HopStack& test,
                  const std::vector<std::int64_t>* nodes) {
  std::vector<std::int64_t> all;
  if (!nodes) {
    all.resize(static_cast<std::size_t>(test.n));
    std::iota(all.begin(), all.end(), 0);
    nodes = &all;
  }
  MatF out(static_cast<Eigen::Index>(nodes->size()), test.dim);
  for (std::size_t r = 0; r < nodes->size(); ++r) {
    const std::int64_t id = (*nodes)[r];
    if (id < 0 || id >= test.n) {
      throw std::invalid_argument("encode_nodes: node id " + std::to_string(id) +
                                  " out of range");
    }
    out.row(static_cast<Eigen::Index>(r)) =
        pool<float>(source_forward(params, RowMat<float>(test.node(id)))).transpose();
  }
  return out;
}

std::vector<std::int32_t> predict_nc_zero(const MatF& embeddings,
                                          const MatF& label_embeddings) {
  if (label_embeddings.rows() == 0) {
    throw std::invalid_argument("predict_nc_zero: no label embeddings");
  }
  if (label_embeddings.cols() != embeddings.cols()) {
    throw std::invalid_argument("predict_nc_zero: dimension mismatch");
  }
  std::vector<std::int32_t> pred(static_cast<std::size_t>(embeddings.rows()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const VecF f = embeddings.row(i).transpose();
    double best = -2.0;
    std::int32_t arg = 0;
    for (Eigen::Index c = 0; c < label_embeddings.rows(); ++c) {
      const double s = cosine(f, VecF(label_embeddings.row(c).transpose()));
      if (s > best) {
        best = s;
        arg = static_cast<std::int32_t>(c);
      }
    }
    pred[static_cast<std::size_t>(i)] = arg;
  }
  return pred;
}

std::vector<double> predict_lp(const MatF& embeddings,
                               const std::vector<std::pair<std::int32_t, std::int32_t>>& pairs) {
  std::vector<double> logits;
  logits.reserve(pairs.size());
  for (const auto& [u, v] : pairs) {
    if (u < 0 || v < 0 || u >= embeddings.rows() || v >= embeddings.rows()) {
      throw std::invalid_argument("predict_lp: pair endpoint out of range");
    }
    logits.push_back(cosine(VecF(embeddings.row(u).transpose()),
                            VecF(embeddings.row(v).transpose())));
  }
  return logits;
}

std::vector<std::int32_t> predict_nc_fewshot(
    const MatF& embeddings, const MatF& label_embeddings,
    const std::map<std::int64_t, std::vector<std::int64_t>>& support,
    const std::vector<std::int64_t>* nodes) {
  if (support.empty()) throw std::invalid_argument("predict_nc_fewshot: empty support set");
  std::vector<std::int64_t> classes;
  MatF prototypes(static_cast<Eigen::Index>(support.size()), embeddings.cols());
  Eigen::Index row = 0;
  for (const auto& [cls, ids] : support) {
    if (cls < 0 || cls >= label_embeddings.rows()) {
      throw std::invalid_argument("predict_nc_fewshot: class " + std::to_string(cls) +
                                  " has no label embedding");
    }
    if (ids.empty()) {
      throw std::invalid_argument("predict_nc_fewshot: class " + std::to_string(cls) +
                                  " has an empty support list");
    }
    VecD acc = VecD::Zero(embeddings.cols());
    for (std::int64_t id : ids) {
      if (id < 0 || id >= embeddings.rows()) {
        throw std::invalid_argument("predict_nc_fewshot: support node " +
                                    std::to_string(id) + " out of range");
      }
      acc += embeddings.row(id).transpose().cast<double>();
    }
    prototypes.row(row) = (acc / static_cast<double>(ids.size())).cast<float>().transpose();
    classes.push_back(cls);
    ++row;
  }

  std::vector<std::int64_t> all;
  if (!nodes) {
    all.resize(static_cast<std::size_t>(embeddings.rows()));
    std::iota(all.begin(), all.end(), 0);
    nodes = &all;
  }
  std::vector<std::int32_t> pred(nodes->size());
  for (std::size_t r = 0; r < nodes->size(); ++r) {
    const std::int64_t id = (*nodes)[r];
    if (id < 0 || id >= embeddings.rows()) {
      throw std::invalid_argument("predict_nc_fewshot: node id out of range");
    }
    const VecF f = embeddings.row(id).transpose();
    double best = -std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double s =
          cosine(f, VecF(prototypes.row(static_cast<Eigen::Index>(c)).transpose())) +
          cosine(f, VecF(label_embeddings.row(classes[c]).transpose()));
      if (s > best) {  // map iteration is ascending, so ties keep the smallest class
        best = s;
        arg = static_cast<std::int32_t>(classes[c]);
      }
    }
    pred[r] = arg;
  }
  return pred;
}

}  // namespace omog
