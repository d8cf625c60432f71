#pragma once

#include "omog/dataset.hpp"
#include "omog/nn.hpp"
#include "omog/propagate.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace omog {

struct TrainConfig {
  std::int64_t alpha = 4;
  std::int64_t d_ff = 0;      // 0 means 2*d
  std::int64_t d_h = 0;       // 0 means d
  std::int64_t batch = 256;   // contrastive batch needs >= 2 nodes
  std::int64_t epochs = 50;
  double mask_fraction = 0.5;
  double lr = 1e-4;
  std::uint64_t seed = 0;

  std::int64_t resolve_d_ff(std::int64_t d) const { return d_ff > 0 ? d_ff : 2 * d; }
  std::int64_t resolve_d_h(std::int64_t d) const { return d_h > 0 ? d_h : d; }
  void validate() const;
};

struct EpochLog {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

// Zeroes the same floor(mask_fraction * d) feature dimensions in every hop
// row; the two returned views use independently drawn dimension sets.
template <typename S>
std::pair<RowMat<S>, RowMat<S>> mask_augment(const RowMat<S>& h, double mask_fraction,
                                             Rng& rng);

// InfoNCE-style objective over paired views, minimized directly: for each of
// the t nodes the positive is its cross-view pair; the partition sums every
// same-view and cross-view pair including self-pairs. Always >= 0.
template <typename S>
double contrastive_loss(const RowMat<S>& f0, const RowMat<S>& f1);

// f0/f1 rows are pooled embeddings of the two views. When the dsim outputs
// are non-null they receive dL/dsim for every (m, n) pair of each block.
template <typename S>
double contrastive_loss_and_sim_grads(const RowMat<S>& f0, const RowMat<S>& f1,
                                      MatD* dsim00, MatD* dsim11, MatD* dsim01);

// d cos(a, b) / da with the epsilon-guarded norms used by cosine().
template <typename S>
VecX<S> cosine_grad_wrt_a(const VecX<S>& a, const VecX<S>& b);

template <typename S>
struct ViewBatch {
  std::vector<RowMat<S>> view0, view1;  // each (alpha+1) x d
};

// End-to-end loss + parameter gradients through the source block for one
// batch of paired views. Returns the batch loss (a sum over the t nodes).
template <typename S>
double contrastive_batch_grads(const SourceParamsT<S>& params, const ViewBatch<S>& batch,
                               SourceParamsT<S>* grads);

// Pulls the filtered embedding toward the centroid and pushes the leftover
// mask away from it: dist(f_pos, c) + 1 / (dist(f_neg, c) + eps).
template <typename S>
double scoring_loss(const VecX<S>& f_pos, const VecX<S>& f_neg, const VecX<S>& center);

// Batch mean of scoring_loss with gradients for the scoring MLP only; the
// source block is treated as frozen (its input gradient is still needed).
template <typename S>
double scoring_batch_grads(const SourceParamsT<S>& source, const ScoringParamsT<S>& scoring,
                           const VecX<S>& center, const std::vector<RowMat<S>>& stacks,
                           ScoringParamsT<S>* grads);

// -- training loops (float32 parameters, float64 loss accounting) ------------

SourceParams pretrain_source_on_stack(const HopStack& stack, std::int64_t d_ff,
                                      const TrainConfig& cfg,
                                      std::vector<EpochLog>* log = nullptr,
                                      const std::vector<std::int64_t>* nodes = nullptr);

// Mean pooled source output over all nodes, accumulated in double.
VecF compute_centroid(const SourceParams& params, const HopStack& stack);

ScoringParams train_scoring_on_stack(const HopStack& stack, const SourceParams& source,
                                     const VecF& center, std::int64_t d_h,
                                     const TrainConfig& cfg,
                                     std::vector<EpochLog>* log = nullptr,
                                     const std::vector<std::int64_t>* nodes = nullptr);

// Convenience wrappers that propagate the dataset themselves.
SourceParams pretrain_source(const GraphDataset& ds, const TrainConfig& cfg,
                             std::vector<EpochLog>* log = nullptr);

}  // namespace omog
