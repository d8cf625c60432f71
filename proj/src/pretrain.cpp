#include "omog/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace omog {

void TrainConfig::validate() const {
  if (alpha < 0) throw std::invalid_argument("TrainConfig: alpha must be >= 0");
  if (batch < 2) throw std::invalid_argument("TrainConfig: batch must be >= 2");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw std::invalid_argument("TrainConfig: mask_fraction must be in (0, 1)");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (d_ff < 0 || d_h < 0) throw std::invalid_argument("TrainConfig: negative hidden size");
}

template <typename S>
std::pair<RowMat<S>, RowMat<S>> mask_augment(const RowMat<S>& h, double mask_fraction,
                                             Rng& rng) {
  const std::int64_t d = h.cols();
  const std::int64_t m = static_cast<std::int64_t>(mask_fraction * static_cast<double>(d));
  RowMat<S> a = h, b = h;
  const std::size_t keep = static_cast<std::size_t>(m);
  for (std::size_t dim : rng.sample_without_replacement(static_cast<std::size_t>(d), keep)) {
    a.col(static_cast<Eigen::Index>(dim)).setZero();
  }
  for (std::size_t dim : rng.sample_without_replacement(static_cast<std::size_t>(d), keep)) {
    b.col(static_cast<Eigen::Index>(dim)).setZero();
  }
  return {std::move(a), std::move(b)};
}

template <typename S>
VecX<S> cosine_grad_wrt_a(const VecX<S>& a, const VecX<S>& b) {
  const S norm_a = a.norm();
  const S na = norm_a + static_cast<S>(kNormEps);
  const S nb = b.norm() + static_cast<S>(kNormEps);
  VecX<S> g = b / (na * nb);
  if (norm_a > S(0)) {
    const S dot = a.dot(b);
    g -= (dot / (na * na * nb)) * (a / norm_a);
  }
  return g;
}

template <typename S>
double contrastive_loss_and_sim_grads(const RowMat<S>& f0, const RowMat<S>& f1,
                                      MatD* dsim00, MatD* dsim11, MatD* dsim01) {
  const Eigen::Index t = f0.rows();
  if (f1.rows() != t || f1.cols() != f0.cols()) {
    throw std::invalid_argument("contrastive loss: view shapes differ");
  }
  // All similarity arithmetic in double; sims live in [-1, 1] so the exps
  // cannot overflow and no max-shift is needed.
  MatD a = f0.template cast<double>();
  MatD b = f1.template cast<double>();
  VecD norm_a(t), norm_b(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    norm_a(i) = a.row(i).norm() + kNormEps;
    norm_b(i) = b.row(i).norm() + kNormEps;
  }
  auto normalize = [](MatD& s, const VecD& nl, const VecD& nr) {
    for (Eigen::Index m = 0; m < s.rows(); ++m) {
      for (Eigen::Index n = 0; n < s.cols(); ++n) s(m, n) /= nl(m) * nr(n);
    }
  };
  MatD s00 = a * a.transpose();
  MatD s11 = b * b.transpose();
  MatD s01 = a * b.transpose();
  normalize(s00, norm_a, norm_a);
  normalize(s11, norm_b, norm_b);
  normalize(s01, norm_a, norm_b);

  const MatD e00 = s00.array().exp().matrix();
  const MatD e11 = s11.array().exp().matrix();
  const MatD e01 = s01.array().exp().matrix();
  const double den = e00.sum() + e11.sum() + 2.0 * e01.sum();

  double loss = static_cast<double>(t) * std::log(den);
  for (Eigen::Index i = 0; i < t; ++i) {
    loss -= std::log(2.0) + s01(i, i);
  }

  if (dsim00) {
    const double scale = static_cast<double>(t) / den;
    *dsim00 = scale * e00;
    *dsim11 = scale * e11;
    *dsim01 = 2.0 * scale * e01;
    for (Eigen::Index i = 0; i < t; ++i) (*dsim01)(i, i) -= 1.0;
  }
  return loss;
}

template <typename S>
double contrastive_loss(const RowMat<S>& f0, const RowMat<S>& f1) {
  return contrastive_loss_and_sim_grads<S>(f0, f1, nullptr, nullptr, nullptr);
}

template <typename S>
double contrastive_batch_grads(const SourceParamsT<S>& params, const ViewBatch<S>& batch,
                               SourceParamsT<S>* grads) {
  const std::size_t t = batch.view0.size();
  if (batch.view1.size() != t) {
    throw std::invalid_argument("contrastive batch: view lists differ in length");
  }
  if (t == 0) return 0.0;
  const std::int64_t L = params.seq_len();
  const std::int64_t d = params.d;

  std::vector<SourceCacheT<S>> cache0(t), cache1(t);
  RowMat<S> f0(t, d), f1(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    f0.row(i) = pool<S>(source_forward(params, batch.view0[i], &cache0[i])).transpose();
    f1.row(i) = pool<S>(source_forward(params, batch.view1[i], &cache1[i])).transpose();
  }

  if (!grads) return contrastive_loss(f0, f1);

  MatD d00, d11, d01;
  const double loss = contrastive_loss_and_sim_grads(f0, f1, &d00, &d11, &d01);

  // Chain the pairwise similarity grads into per-embedding gradients without
  // an O(t^2) scalar loop. For a pair (a, b) with weight w,
  //   d cos/da = b/(na*nb) - (cos/na) * unit(a),
  // so summing over partners factors into one GEMM against the partner rows
  // plus a per-row rescale of unit(a). Same-view blocks are symmetrized
  // first because each unordered pair hits both of its rows.
  const MatD a = f0.template cast<double>();
  const MatD b = f1.template cast<double>();
  const Eigen::Index ti = static_cast<Eigen::Index>(t);
  VecD ng_a(ti), ng_b(ti);
  MatD ua = MatD::Zero(ti, d), ub = MatD::Zero(ti, d);
  for (Eigen::Index i = 0; i < ti; ++i) {
    const double na = a.row(i).norm(), nb = b.row(i).norm();
    ng_a(i) = na + kNormEps;
    ng_b(i) = nb + kNormEps;
    if (na > 0) ua.row(i) = a.row(i) / na;
    if (nb > 0) ub.row(i) = b.row(i) / nb;
  }
  // Recompute the sims from the grad matrices' ingredients (cheap vs GEMM).
  MatD s00 = a * a.transpose();
  MatD s11 = b * b.transpose();
  MatD s01 = a * b.transpose();
  for (Eigen::Index m = 0; m < ti; ++m) {
    for (Eigen::Index n = 0; n < ti; ++n) {
      s00(m, n) /= ng_a(m) * ng_a(n);
      s11(m, n) /= ng_b(m) * ng_b(n);
      s01(m, n) /= ng_a(m) * ng_b(n);
    }
  }
  const MatD w00 = d00 + d00.transpose();
  const MatD w11 = d11 + d11.transpose();
  MatD p00 = w00, p11 = w11, p01 = d01;
  for (Eigen::Index m = 0; m < ti; ++m) {
    for (Eigen::Index n = 0; n < ti; ++n) {
      p00(m, n) /= ng_a(m) * ng_a(n);
      p11(m, n) /= ng_b(m) * ng_b(n);
      p01(m, n) /= ng_a(m) * ng_b(n);
    }
  }
  MatD df0d = p00 * a + p01 * b;
  MatD df1d = p11 * b + p01.transpose() * a;
  const VecD c0 = (w00.cwiseProduct(s00).rowwise().sum() +
                   d01.cwiseProduct(s01).rowwise().sum())
                      .cwiseQuotient(ng_a);
  const VecD c1 = (w11.cwiseProduct(s11).rowwise().sum() +
                   d01.cwiseProduct(s01).colwise().sum().transpose())
                      .cwiseQuotient(ng_b);
  df0d -= c0.asDiagonal() * ua;
  df1d -= c1.asDiagonal() * ub;
  const RowMat<S> df0 = df0d.template cast<S>();
  const RowMat<S> df1 = df1d.template cast<S>();

  // pool() is a mean over the L hop rows.
  const S inv_l = S(1) / static_cast<S>(L);
  RowMat<S> dout(L, d);
  for (std::size_t i = 0; i < t; ++i) {
    dout = (inv_l * df0.row(i)).replicate(L, 1);
    source_backward(params, cache0[i], dout, *grads);
    dout = (inv_l * df1.row(i)).replicate(L, 1);
    source_backward(params, cache1[i], dout, *grads);
  }
  return loss;
}

template <typename S>
double scoring_loss(const VecX<S>& f_pos, const VecX<S>& f_neg, const VecX<S>& center) {
  const double dp = (f_pos - center).template cast<double>().norm();
  const double dn = (f_neg - center).template cast<double>().norm();
  return dp + 1.0 / (dn + kDistEps);
}

template <typename S>
double scoring_batch_grads(const SourceParamsT<S>& source, const ScoringParamsT<S>& scoring,
                           const VecX<S>& center, const std::vector<RowMat<S>>& stacks,
                           ScoringParamsT<S>* grads) {
  const std::size_t bsz = stacks.size();
  if (bsz == 0) return 0.0;
  const std::int64_t L = source.seq_len();
  const S inv_l = S(1) / static_cast<S>(L);
  const S inv_b = S(1) / static_cast<S>(bsz);
  constexpr S tiny = static_cast<S>(1e-12);

  SourceParamsT<S> scratch = zeros_like(source);  // discarded; block is frozen
  double total = 0.0;
  for (const RowMat<S>& h : stacks) {
    ScoringCacheT<S> sc;
    const RowMat<S> mask = scoring_forward(scoring, h, grads ? &sc : nullptr);
    SourceCacheT<S> cp, cn;
    const VecX<S> f_pos = pool<S>(source_forward(source, RowMat<S>(h + mask), &cp));
    const VecX<S> f_neg = pool<S>(source_forward(source, mask, &cn));
    const S dp = (f_pos - center).norm();
    const S dn = (f_neg - center).norm();
    total += static_cast<double>(dp) + 1.0 / (static_cast<double>(dn) + kDistEps);
    if (!grads) continue;

    const VecX<S> dfp = (f_pos - center) / std::max(dp, tiny);
    const S denom = dn + static_cast<S>(kDistEps);
    const VecX<S> dfn = -(f_neg - center) / (denom * denom * std::max(dn, tiny));

    // Both branches read the mask; the positive branch adds the raw stack,
    // which is data, so d(h + mask) and d(mask) both land on the mask.
    RowMat<S> dmask = RowMat<S>::Zero(L, source.d);
    RowMat<S> dout = (inv_b * inv_l * dfp.transpose()).replicate(L, 1);
    source_backward(source, cp, dout, scratch, &dmask);
    dout = (inv_b * inv_l * dfn.transpose()).replicate(L, 1);
    source_backward(source, cn, dout, scratch, &dmask);
    scoring_backward(scoring, sc, dmask, *grads);
  }
  return total / static_cast<double>(bsz);
}

// -- training loops ----------------------------------------------------------

namespace {

std::vector<std::int64_t> resolve_nodes(const HopStack& stack,
                                        const std::vector<std::int64_t>* nodes) {
  if (nodes) {
    for (std::int64_t id : *nodes) {
      if (id < 0 || id >= stack.n) {
        throw std::invalid_argument("training node id " + std::to_string(id) +
                                    " out of range [0, " + std::to_string(stack.n) + ")");
      }
    }
    return *nodes;
  }
  std::vector<std::int64_t> all(static_cast<std::size_t>(stack.n));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

void check_epoch_loss(double mean, std::int64_t epoch, const char* what) {
  if (!std::isfinite(mean)) {
    throw std::runtime_error(std::string(what) + " diverged at epoch " +
                             std::to_string(epoch) + " (loss not finite)");
  }
}

}  // namespace

SourceParams pretrain_source_on_stack(const HopStack& stack, std::int64_t d_ff,
                                      const TrainConfig& cfg, std::vector<EpochLog>* log,
                                      const std::vector<std::int64_t>* nodes) {
  cfg.validate();
  if (stack.hops != cfg.alpha + 1) {
    throw std::invalid_argument("hop stack depth " + std::to_string(stack.hops) +
                                " does not match alpha " + std::to_string(cfg.alpha));
  }
  const std::int64_t d = stack.dim;
  SourceParams params = init_source_params<float>(d, cfg.alpha, d_ff,
                                                  derive_seed(cfg.seed, 0));
  AdamStateT<SourceParams> opt(params, AdamConfig{cfg.lr});
  Rng mask_rng(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  std::vector<std::int64_t> order = resolve_nodes(stack, nodes);

  SourceParams grads = zeros_like(params);
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = now_ms();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      ViewBatch<float> batch;
      batch.view0.reserve(stop - start);
      batch.view1.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const RowMat<float> h = stack.node(order[i]);
        auto [v0, v1] = mask_augment(h, cfg.mask_fraction, mask_rng);
        batch.view0.push_back(std::move(v0));
        batch.view1.push_back(std::move(v1));
      }
      set_zero(grads);
      epoch_loss += contrastive_batch_grads(params, batch, &grads);
      adam_step(opt, params, grads);
      seen += static_cast<std::int64_t>(stop - start);
    }
    const double mean = epoch_loss / static_cast<double>(std::max<std::int64_t>(seen, 1));
    check_epoch_loss(mean, epoch, "source pretraining");
    if (log) log->push_back({epoch, mean, now_ms() - t0});
  }
  return params;
}

VecF compute_centroid(const SourceParams& params, const HopStack& stack) {
  VecD acc = VecD::Zero(stack.dim);
  for (std::int64_t i = 0; i < stack.n; ++i) {
    acc += pool<float>(source_forward(params, RowMat<float>(stack.node(i))))
               .cast<double>();
  }
  acc /= static_cast<double>(stack.n);
  return acc.cast<float>();
}

ScoringParams train_scoring_on_stack(const HopStack& stack, const SourceParams& source,
                                     const VecF& center, std::int64_t d_h,
                                     const TrainConfig& cfg, std::vector<EpochLog>* log,
                                     const std::vector<std::int64_t>* nodes) {
  cfg.validate();
  const std::int64_t d = stack.dim;
  ScoringParams scoring = init_scoring_params<float>(d, cfg.alpha, d_h,
                                                     derive_seed(cfg.seed, 3));
  AdamStateT<ScoringParams> opt(scoring, AdamConfig{cfg.lr});
  Rng shuffle_rng(derive_seed(cfg.seed, 4));
  std::vector<std::int64_t> order = resolve_nodes(stack, nodes);

  ScoringParams grads = zeros_like(scoring);
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = now_ms();
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<RowMat<float>> stacks;
      stacks.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) stacks.push_back(stack.node(order[i]));
      set_zero(grads);
      const double batch_mean = scoring_batch_grads(source, scoring, center, stacks, &grads);
      adam_step(opt, scoring, grads);
      epoch_loss += batch_mean * static_cast<double>(stop - start);
      seen += static_cast<std::int64_t>(stop - start);
    }
    const double mean = epoch_loss / static_cast<double>(std::max<std::int64_t>(seen, 1));
    check_epoch_loss(mean, epoch, "scoring training");
    if (log) log->push_back({epoch, mean, now_ms() - t0});
  }
  return scoring;
}

SourceParams pretrain_source(const GraphDataset& ds, const TrainConfig& cfg,
                             std::vector<EpochLog>* log) {
  const NormalizedAdjacency adj = normalized_adjacency(ds);
  const HopStack stack = sgc_propagate(adj, ds.features, cfg.alpha);
  return pretrain_source_on_stack(stack, cfg.resolve_d_ff(ds.d), cfg, log);
}

// Explicit instantiations: float for training, double for finite-difference
// verification.
#define OMOG_INSTANTIATE(S)                                                              \
  template std::pair<RowMat<S>, RowMat<S>> mask_augment<S>(const RowMat<S>&, double,     \
                                                           Rng&);                        \
  template VecX<S> cosine_grad_wrt_a<S>(const VecX<S>&, const VecX<S>&);                 \
  template double contrastive_loss_and_sim_grads<S>(const RowMat<S>&, const RowMat<S>&,  \
                                                    MatD*, MatD*, MatD*);                \
  template double contrastive_loss<S>(const RowMat<S>&, const RowMat<S>&);               \
  template double contrastive_batch_grads<S>(const SourceParamsT<S>&,                    \
                                             const ViewBatch<S>&, SourceParamsT<S>*);    \
  template double scoring_loss<S>(const VecX<S>&, const VecX<S>&, const VecX<S>&);       \
  template double scoring_batch_grads<S>(const SourceParamsT<S>&,                        \
                                         const ScoringParamsT<S>&, const VecX<S>&,       \
                                         const std::vector<RowMat<S>>&,                  \
                                         ScoringParamsT<S>*);

OMOG_INSTANTIATE(float)
OMOG_INSTANTIATE(double)
#undef OMOG_INSTANTIATE

}  // namespace omog
