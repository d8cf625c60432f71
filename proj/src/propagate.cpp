#include "omog/propagate.hpp"

#include "omog/binio.hpp"

#include <cmath>
#include <vector>

namespace omog {

NormalizedAdjacency normalized_adjacency(const GraphDataset& ds) {
  const std::int64_t n = ds.n;
  std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(ds.adjacency.degree(i) + 1));
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(ds.adjacency.num_arcs() + n));
  for (std::int64_t i = 0; i < n; ++i) {
    triplets.emplace_back(i, i, inv_sqrt_deg[i] * inv_sqrt_deg[i]);
    for (std::int64_t p = ds.adjacency.indptr[i]; p < ds.adjacency.indptr[i + 1]; ++p) {
      const std::int32_t j = ds.adjacency.indices[static_cast<std::size_t>(p)];
      triplets.emplace_back(i, j, inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    }
  }

  NormalizedAdjacency adj;
  adj.matrix.resize(n, n);
  adj.matrix.setFromTriplets(triplets.begin(), triplets.end());
  adj.matrix.makeCompressed();
  return adj;
}

HopStack sgc_propagate(const NormalizedAdjacency& adj, const MatF& features,
                       std::int64_t alpha) {
  const std::int64_t n = features.rows();
  const std::int64_t d = features.cols();
  if (adj.num_nodes() != n) {
    throw std::invalid_argument("sgc_propagate: adjacency is " +
                                std::to_string(adj.num_nodes()) + " nodes but features have " +
                                std::to_string(n) + " rows");
  }
  if (alpha < 0) throw std::invalid_argument("sgc_propagate: alpha must be >= 0");

  HopStack stack;
  stack.n = n;
  stack.hops = alpha + 1;
  stack.dim = d;
  stack.data.resize(n, stack.hops * d);
  stack.hop(0) = features;  // hop 0 is bit-identical to the input

  VecD acc(d);
  for (std::int64_t k = 1; k <= alpha; ++k) {
    const auto prev = stack.hop(k - 1);
    auto cur = stack.hop(k);
    for (std::int64_t i = 0; i < n; ++i) {
      acc.setZero();
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(adj.matrix, i);
           it; ++it) {
        acc += it.value() * prev.row(it.col()).transpose().cast<double>();
      }
      cur.row(i) = acc.transpose().cast<float>();
    }
  }

  if (!stack.data.allFinite()) {
    throw std::runtime_error("sgc_propagate: non-finite value in propagated features");
  }
  return stack;
}

HopStack replicate_stack(const MatF& features, std::int64_t alpha) {
  HopStack stack;
  stack.n = features.rows();
  stack.hops = alpha + 1;
  stack.dim = features.cols();
  stack.data.resize(stack.n, stack.hops * stack.dim);
  for (std::int64_t k = 0; k <= alpha; ++k) stack.hop(k) = features;
  return stack;
}

void save_hop_stack(const HopStack& stack, const std::filesystem::path& path) {
  BinWriter w(path);
  w.magic("OMOGHOPS");
  w.u32(static_cast<std::uint32_t>(stack.n));
  w.u32(static_cast<std::uint32_t>(stack.hops));
  w.u32(static_cast<std::uint32_t>(stack.dim));
  w.floats(stack.data.data(), static_cast<std::size_t>(stack.data.size()));
}

HopStack load_hop_stack(const std::filesystem::path& path) {
  BinReader r(path);
  r.magic("OMOGHOPS");
  HopStack stack;
  stack.n = r.u32();
  stack.hops = r.u32();
  stack.dim = r.u32();
  if (stack.hops <= 0) r.fail("hop count must be positive");
  stack.data.resize(stack.n, stack.hops * stack.dim);
  r.floats(stack.data.data(), static_cast<std::size_t>(stack.data.size()));
  r.expect_eof();
  return stack;
}

}  // namespace omog
