#pragma once

#include "omog/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace omog {

// Symmetric adjacency in CSR form, both arc directions stored, no self-loops.
struct Csr {
  std::vector<std::int64_t> indptr;   // length n+1
  std::vector<std::int32_t> indices;  // length = 2 * undirected edge count

  std::int64_t num_nodes() const { return static_cast<std::int64_t>(indptr.size()) - 1; }
  std::int64_t num_arcs() const { return static_cast<std::int64_t>(indices.size()); }
  std::int64_t degree(std::int64_t i) const { return indptr[i + 1] - indptr[i]; }
};

struct Splits {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
  std::map<std::int64_t, std::vector<std::int64_t>> support;  // class -> node ids

  bool empty() const { return train.empty() && test.empty() && support.empty(); }
};

// A loaded, validated graph with precomputed embedding features.
// Immutable after construction; safe to share across threads.
struct GraphDataset {
  std::string name;
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::int64_t num_classes = 0;
  MatF features;                                         // n x d
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;  // canonical (u<v), unique
  Csr adjacency;
  std::vector<std::int32_t> labels;  // per node, -1 = unlabeled; empty if absent
  MatF label_embeddings;             // num_classes x d; 0x0 if absent
  Splits splits;

  bool has_labels() const { return !labels.empty(); }
  bool has_label_embeddings() const { return label_embeddings.rows() > 0; }
};

struct SyntheticDomainSpec {
  std::uint64_t seed = 0;
  std::int64_t n = 0;
  std::int64_t communities = 0;
  std::int64_t num_classes = 0;
  double intra_prob = 0.0;
  double inter_prob = 0.0;
  MatF class_centers;        // num_classes x d
  double feature_noise = 1.0;
  std::string name = "synthetic";
};

// Rebuilds the symmetric CSR from a canonical undirected edge list.
Csr build_csr(std::int64_t n,
              const std::vector<std::pair<std::int32_t, std::int32_t>>& edges);

// Reads a dataset directory (meta.json, features.bin, edges.bin, optional
// labels.bin / label_embeddings.bin / splits.json) and validates every
// structural invariant. Throws io_error with file and offset context.
GraphDataset load_dataset(const std::filesystem::path& dir);

// Writes the directory format; load_dataset(save_dataset(d)) round-trips
// field-for-field.
void save_dataset(const GraphDataset& dataset, const std::filesystem::path& dir);

// Stochastic-block-model graph whose node features are class centers plus
// Gaussian noise; label embeddings are the centers themselves. Pure function
// of its argument (seed included).
GraphDataset generate_synthetic_domain(const SyntheticDomainSpec& spec);

}  // namespace omog
