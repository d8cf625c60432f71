#pragma once

#include "omog/bank.hpp"
#include "omog/propagate.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace omog {

enum class SelectStrategy { kTopK, kTopKUniform, kRandomK, kLeastK };

SelectStrategy parse_strategy(const std::string& name);
std::string strategy_name(SelectStrategy s);

struct FuseConfig {
  SelectStrategy strategy = SelectStrategy::kTopK;
  std::int64_t k = 2;
  double temperature = 1.0;     // divides scores inside the softmax
  std::int64_t sample_cap = 1024;
  std::uint64_t seed = 0;
};

// Selected entry indices (into the lexicographic bank order) plus their
// convex weights.
struct FusionWeights {
  std::vector<std::size_t> indices;
  std::vector<double> weights;
};

// Mean filtered-and-encoded test embedding vs the entry centroid: each
// sampled node's stack h is shifted by the entry's scoring mask, encoded by
// the entry's source model and pooled; the node mean is compared with the
// centroid by cosine. Result lies in [-1, 1].
double relevance_score(const BankEntry& entry, const HopStack& test,
                       const std::vector<std::int64_t>* sample = nullptr);

// Seeded uniform node subset (without replacement, ascending ids) of at most
// cap nodes; every entry must be scored against the same subset.
std::vector<std::int64_t> relevance_sample(std::int64_t n, std::int64_t cap,
                                           std::uint64_t seed);

std::vector<double> relevance_scores(const std::vector<BankEntry>& entries,
                                     const HopStack& test, const FuseConfig& cfg);

// topk: k best scores, softmax(raw score / temperature) weights.
// topk-uniform: same indices, uniform weights. random-k: seeded distinct
// indices, uniform. least-k: k worst scores, uniform. Score ties break
// toward the earlier (lexicographically smaller) bank entry.
FusionWeights select_and_weight(const std::vector<double>& scores, const FuseConfig& cfg);

// Elementwise weighted average of the selected source models, accumulated in
// double and stored back as float32. With a single index the result is
// bit-identical to that entry.
SourceParams fuse_models(const std::vector<BankEntry>& entries, const FusionWeights& fw);

struct FusionOutcome {
  std::vector<std::string> names;   // all bank entries, lexicographic
  std::vector<double> scores;       // aligned with names
  FusionWeights weights;
  SourceParams fused;
};

FusionOutcome fuse_for_test(const std::vector<BankEntry>& entries, const HopStack& test,
                            const FuseConfig& cfg);

// Pooled source outputs on raw (unfiltered) hop stacks, one row per node.
MatF encode_nodes(const SourceParams& params, const HopStack& test,
                  const std::vector<std::int64_t>* nodes = nullptr);

// Nearest label embedding by cosine; ties resolve to the smallest class id.
std::vector<std::int32_t> predict_nc_zero(const MatF& embeddings,
                                          const MatF& label_embeddings);

// Link logit = cosine of the two endpoint embeddings.
std::vector<double> predict_lp(const MatF& embeddings,
                               const std::vector<std::pair<std::int32_t, std::int32_t>>& pairs);

// argmax_i [ cos(f, mean support embedding of class i) + cos(f, label_i) ]
// over the classes present in the support map. Support ids index rows of
// `embeddings` (all encoded with the same fused model); every listed class
// needs at least one support node. Predicts the rows in `nodes`, or all rows.
std::vector<std::int32_t> predict_nc_fewshot(
    const MatF& embeddings, const MatF& label_embeddings,
    const std::map<std::int64_t, std::vector<std::int64_t>>& support,
    const std::vector<std::int64_t>* nodes = nullptr);

}  // namespace omog
