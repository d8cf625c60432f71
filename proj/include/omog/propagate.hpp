#pragma once

#include "omog/dataset.hpp"
#include "omog/types.hpp"

#include <Eigen/SparseCore>

#include <filesystem>

namespace omog {

// Self-loop-normalized adjacency: diagonal entries 1/(deg+1), off-diagonal
// entries 1/sqrt((deg_i+1)(deg_j+1)) for each edge. Values kept in double;
// features stay float32.
struct NormalizedAdjacency {
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;  // n x n, symmetric

  std::int64_t num_nodes() const { return matrix.rows(); }
};

// Per-node stack of hop-propagated features, hops 0..alpha. Stored node-major:
// row i holds node i's (alpha+1) x d stack flattened row-major.
struct HopStack {
  std::int64_t n = 0;
  std::int64_t hops = 0;  // alpha + 1
  std::int64_t dim = 0;
  MatF data;              // n x (hops * dim)

  Eigen::Map<const MatF> node(std::int64_t i) const {
    return {data.row(i).data(), hops, dim};
  }
  Eigen::Block<MatF> hop(std::int64_t k) { return data.middleCols(k * dim, dim); }
  Eigen::Block<const MatF> hop(std::int64_t k) const {
    return data.middleCols(k * dim, dim);
  }
};

NormalizedAdjacency normalized_adjacency(const GraphDataset& dataset);

// Repeated multiplication by the normalized adjacency; slice k equals J^k X.
// Products are accumulated in double per output entry, results stored float32.
HopStack sgc_propagate(const NormalizedAdjacency& adj, const MatF& features,
                       std::int64_t alpha);

// The no-propagation variant: alpha+1 copies of the raw features.
HopStack replicate_stack(const MatF& features, std::int64_t alpha);

// Cache file: magic "OMOGHOPS", u32 n, u32 hops, u32 d, float32 data.
void save_hop_stack(const HopStack& stack, const std::filesystem::path& path);
HopStack load_hop_stack(const std::filesystem::path& path);

}  // namespace omog
