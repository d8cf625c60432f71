#pragma once

#include "omog/rng.hpp"
#include "omog/types.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace omog {

inline constexpr double kLayerNormEps = 1e-5;

// One transformer block applied over the hop axis of a node's feature stack.
// The same struct doubles as gradient / Adam-moment storage since those share
// the tensor layout exactly.
template <typename S>
struct SourceParamsT {
  using Scalar = S;
  std::int64_t d = 0, alpha = 0, d_ff = 0;

  RowMat<S> wq, wk, wv;              // d x d
  VecX<S> ln1_gain, ln1_bias;        // d
  RowMat<S> w1;                      // d x d_ff
  VecX<S> b1;                        // d_ff
  RowMat<S> w2;                      // d_ff x d
  VecX<S> b2;                        // d
  VecX<S> ln2_gain, ln2_bias;        // d

  std::int64_t seq_len() const { return alpha + 1; }

  template <typename T>
  SourceParamsT<T> cast() const {
    SourceParamsT<T> o;
    o.d = d; o.alpha = alpha; o.d_ff = d_ff;
    o.wq = wq.template cast<T>(); o.wk = wk.template cast<T>(); o.wv = wv.template cast<T>();
    o.ln1_gain = ln1_gain.template cast<T>(); o.ln1_bias = ln1_bias.template cast<T>();
    o.w1 = w1.template cast<T>(); o.b1 = b1.template cast<T>();
    o.w2 = w2.template cast<T>(); o.b2 = b2.template cast<T>();
    o.ln2_gain = ln2_gain.template cast<T>(); o.ln2_bias = ln2_bias.template cast<T>();
    return o;
  }
};

// Two-layer MLP over the flattened hop stack; emits an additive mask of the
// same shape as its input.
template <typename S>
struct ScoringParamsT {
  using Scalar = S;
  std::int64_t d = 0, alpha = 0, d_h = 0;

  RowMat<S> v1;  // (alpha+1)*d x d_h
  VecX<S> c1;    // d_h
  RowMat<S> v2;  // d_h x (alpha+1)*d
  VecX<S> c2;    // (alpha+1)*d

  std::int64_t flat_dim() const { return (alpha + 1) * d; }

  template <typename T>
  ScoringParamsT<T> cast() const {
    ScoringParamsT<T> o;
    o.d = d; o.alpha = alpha; o.d_h = d_h;
    o.v1 = v1.template cast<T>(); o.c1 = c1.template cast<T>();
    o.v2 = v2.template cast<T>(); o.c2 = c2.template cast<T>();
    return o;
  }
};

using SourceParams = SourceParamsT<float>;
using ScoringParams = ScoringParamsT<float>;

// Applies f(name, tensor) to every trainable tensor, in a fixed order shared
// by serialization, fusion and the optimizer.
namespace detail {
template <typename P, typename F>
void visit_source_tensors(P& p, F&& f) {
  f("wq", p.wq); f("wk", p.wk); f("wv", p.wv);
  f("ln1_gain", p.ln1_gain); f("ln1_bias", p.ln1_bias);
  f("w1", p.w1); f("b1", p.b1);
  f("w2", p.w2); f("b2", p.b2);
  f("ln2_gain", p.ln2_gain); f("ln2_bias", p.ln2_bias);
}
}  // namespace detail

template <typename S, typename F>
void visit_tensors(SourceParamsT<S>& p, F&& f) {
  detail::visit_source_tensors(p, std::forward<F>(f));
}

template <typename S, typename F>
void visit_tensors(const SourceParamsT<S>& p, F&& f) {
  detail::visit_source_tensors(p, std::forward<F>(f));
}

template <typename S, typename F>
void visit_tensors(ScoringParamsT<S>& p, F&& f) {
  f("v1", p.v1); f("c1", p.c1); f("v2", p.v2); f("c2", p.c2);
}

template <typename S, typename F>
void visit_tensors(const ScoringParamsT<S>& p, F&& f) {
  f("v1", p.v1); f("c1", p.c1); f("v2", p.v2); f("c2", p.c2);
}

template <typename P>
void set_zero(P& p) {
  visit_tensors(p, [](const char*, auto& t) { t.setZero(); });
}

template <typename P>
P zeros_like(const P& p) {
  P z = p;
  set_zero(z);
  return z;
}

template <typename P>
bool tensors_finite(const P& p) {
  bool ok = true;
  visit_tensors(p, [&](const char*, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

template <typename P>
bool bitwise_equal(const P& a, const P& b) {
  bool eq = true;
  std::vector<std::pair<const void*, std::size_t>> lhs;
  visit_tensors(a, [&](const char*, const auto& t) {
    lhs.emplace_back(t.data(), sizeof(typename std::decay_t<decltype(t)>::Scalar) * t.size());
  });
  std::size_t idx = 0;
  visit_tensors(b, [&](const char*, const auto& t) {
    const std::size_t bytes =
        sizeof(typename std::decay_t<decltype(t)>::Scalar) * t.size();
    if (idx >= lhs.size() || lhs[idx].second != bytes ||
        std::memcmp(lhs[idx].first, t.data(), bytes) != 0) {
      eq = false;
    }
    ++idx;
  });
  return eq && idx == lhs.size();
}

// -- initialization ----------------------------------------------------------

namespace detail {

// Fills row-major, drawing in double so float/double instantiations agree.
template <typename M>
void init_uniform(M& m, std::int64_t fan_in, Rng& rng) {
  using S = typename M::Scalar;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
}

}  // namespace detail

template <typename S>
SourceParamsT<S> init_source_params(std::int64_t d, std::int64_t alpha, std::int64_t d_ff,
                                    std::uint64_t seed) {
  SourceParamsT<S> p;
  p.d = d; p.alpha = alpha; p.d_ff = d_ff;
  p.wq.resize(d, d); p.wk.resize(d, d); p.wv.resize(d, d);
  p.w1.resize(d, d_ff); p.b1 = VecX<S>::Zero(d_ff);
  p.w2.resize(d_ff, d); p.b2 = VecX<S>::Zero(d);
  p.ln1_gain = VecX<S>::Ones(d); p.ln1_bias = VecX<S>::Zero(d);
  p.ln2_gain = VecX<S>::Ones(d); p.ln2_bias = VecX<S>::Zero(d);

  Rng rng(seed);
  detail::init_uniform(p.wq, d, rng);
  detail::init_uniform(p.wk, d, rng);
  detail::init_uniform(p.wv, d, rng);
  detail::init_uniform(p.w1, d, rng);
  detail::init_uniform(p.w2, d_ff, rng);
  return p;
}

template <typename S>
ScoringParamsT<S> init_scoring_params(std::int64_t d, std::int64_t alpha, std::int64_t d_h,
                                      std::uint64_t seed) {
  ScoringParamsT<S> p;
  p.d = d; p.alpha = alpha; p.d_h = d_h;
  const std::int64_t flat = p.flat_dim();
  p.v1.resize(flat, d_h); p.c1 = VecX<S>::Zero(d_h);
  p.v2.resize(d_h, flat); p.c2 = VecX<S>::Zero(flat);

  Rng rng(seed);
  detail::init_uniform(p.v1, flat, rng);
  detail::init_uniform(p.v2, d_h, rng);
  return p;
}

// -- layer norm --------------------------------------------------------------

// Row-wise layer norm with biased variance. hat/inv_std capture the
// pre-gain normalized activations for the backward pass.
template <typename S>
RowMat<S> layer_norm(const RowMat<S>& x, const VecX<S>& gain, const VecX<S>& bias,
                     RowMat<S>* hat_out = nullptr, VecX<S>* inv_std_out = nullptr) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  RowMat<S> hat(rows, cols);
  VecX<S> inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mu = x.row(r).mean();
    const S var = (x.row(r).array() - mu).square().mean();
    const S s = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    inv_std(r) = s;
    hat.row(r) = (x.row(r).array() - mu) * s;
  }
  RowMat<S> y = hat.array().rowwise() * gain.transpose().array();
  y.array().rowwise() += bias.transpose().array();
  if (hat_out) *hat_out = std::move(hat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return y;
}

// dx for row-wise layer norm; accumulates dgain/dbias.
template <typename S>
RowMat<S> layer_norm_backward(const RowMat<S>& dy, const RowMat<S>& hat,
                              const VecX<S>& inv_std, const VecX<S>& gain,
                              VecX<S>& dgain, VecX<S>& dbias) {
  const Eigen::Index rows = dy.rows(), cols = dy.cols();
  dgain += (dy.array() * hat.array()).colwise().sum().matrix().transpose();
  dbias += dy.colwise().sum().transpose();
  RowMat<S> dx(rows, cols);
  const S inv_n = S(1) / static_cast<S>(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto dhat = (dy.row(r).array() * gain.transpose().array()).eval();
    const S sum_dhat = dhat.sum();
    const S sum_dhat_hat = (dhat * hat.row(r).array()).sum();
    dx.row(r) = inv_std(r) * inv_n *
                (static_cast<S>(cols) * dhat - sum_dhat - hat.row(r).array() * sum_dhat_hat);
  }
  return dx;
}

// -- source model ------------------------------------------------------------

template <typename S>
struct SourceCacheT {
  RowMat<S> input;                 // L x d
  RowMat<S> q, k, v;               // L x d
  RowMat<S> probs;                 // L x L, rows sum to 1
  RowMat<S> att;                   // probs * v
  RowMat<S> res1, hat1, norm1;     // L x d
  VecX<S> inv_std1;                // L
  RowMat<S> mlp_pre, mlp_act;      // L x d_ff
  RowMat<S> res2, hat2;            // L x d
  VecX<S> inv_std2;
  RowMat<S> out;
};

template <typename S>
RowMat<S> softmax_rows(const RowMat<S>& scores) {
  RowMat<S> p(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const S m = scores.row(r).maxCoeff();
    p.row(r) = (scores.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// Attention over the hop axis, residual + layer norm, MLP, residual +
// layer norm: out = LN2(LN1(h + softmax(h Wq (h Wk)^T / sqrt(d)) h Wv) + MLP(...)).
template <typename S>
RowMat<S> source_forward(const SourceParamsT<S>& p, const RowMat<S>& h,
                         SourceCacheT<S>* cache = nullptr) {
  if (h.rows() != p.seq_len() || h.cols() != p.d) {
    throw std::invalid_argument("source_forward: input is " + std::to_string(h.rows()) + "x" +
                                std::to_string(h.cols()) + ", params expect " +
                                std::to_string(p.seq_len()) + "x" + std::to_string(p.d));
  }
  SourceCacheT<S> local;
  SourceCacheT<S>& c = cache ? *cache : local;

  c.input = h;
  c.q.noalias() = h * p.wq;
  c.k.noalias() = h * p.wk;
  c.v.noalias() = h * p.wv;
  const S scale = S(1) / std::sqrt(static_cast<S>(p.d));
  RowMat<S> scores = (c.q * c.k.transpose()) * scale;
  c.probs = softmax_rows(scores);
  c.att.noalias() = c.probs * c.v;
  c.res1 = h + c.att;
  c.norm1 = layer_norm(c.res1, p.ln1_gain, p.ln1_bias, &c.hat1, &c.inv_std1);
  c.mlp_pre.noalias() = c.norm1 * p.w1;
  c.mlp_pre.array().rowwise() += p.b1.transpose().array();
  c.mlp_act = c.mlp_pre.array().max(S(0));
  RowMat<S> mlp_out = c.mlp_act * p.w2;
  mlp_out.array().rowwise() += p.b2.transpose().array();
  c.res2 = c.norm1 + mlp_out;
  c.out = layer_norm(c.res2, p.ln2_gain, p.ln2_bias, &c.hat2, &c.inv_std2);
  if (!c.out.allFinite()) {
    throw std::runtime_error("source_forward: non-finite intermediate");
  }
  return c.out;
}

// Accumulates parameter gradients into `grads`; when dinput is non-null the
// gradient with respect to the input stack is accumulated there as well
// (needed when the block is frozen but feeds a trainable module).
template <typename S>
void source_backward(const SourceParamsT<S>& p, const SourceCacheT<S>& c,
                     const RowMat<S>& dout, SourceParamsT<S>& grads,
                     RowMat<S>* dinput = nullptr) {
  const S scale = S(1) / std::sqrt(static_cast<S>(p.d));

  RowMat<S> dres2 = layer_norm_backward(dout, c.hat2, c.inv_std2, p.ln2_gain,
                                        grads.ln2_gain, grads.ln2_bias);
  RowMat<S> dnorm1 = dres2;             // residual branch
  const RowMat<S>& dmlp_out = dres2;    // MLP branch shares the upstream grad

  grads.w2.noalias() += c.mlp_act.transpose() * dmlp_out;
  grads.b2 += dmlp_out.colwise().sum().transpose();
  RowMat<S> dmlp_act = dmlp_out * p.w2.transpose();
  RowMat<S> dmlp_pre =
      (dmlp_act.array() * (c.mlp_pre.array() > S(0)).template cast<S>()).matrix();
  grads.w1.noalias() += c.norm1.transpose() * dmlp_pre;
  grads.b1 += dmlp_pre.colwise().sum().transpose();
  dnorm1.noalias() += dmlp_pre * p.w1.transpose();

  RowMat<S> dres1 = layer_norm_backward(dnorm1, c.hat1, c.inv_std1, p.ln1_gain,
                                        grads.ln1_gain, grads.ln1_bias);
  RowMat<S> dh = dres1;                 // residual branch
  const RowMat<S>& datt = dres1;

  RowMat<S> dprobs = datt * c.v.transpose();
  RowMat<S> dv = c.probs.transpose() * datt;

  // softmax rows: ds = p .* (dp - <dp, p>)
  RowMat<S> dscores(dprobs.rows(), dprobs.cols());
  for (Eigen::Index r = 0; r < dprobs.rows(); ++r) {
    const S dot = dprobs.row(r).dot(c.probs.row(r));
    dscores.row(r) = c.probs.row(r).array() * (dprobs.row(r).array() - dot);
  }

  RowMat<S> dq = (dscores * c.k) * scale;
  RowMat<S> dk = (dscores.transpose() * c.q) * scale;

  grads.wq.noalias() += c.input.transpose() * dq;
  grads.wk.noalias() += c.input.transpose() * dk;
  grads.wv.noalias() += c.input.transpose() * dv;
  dh.noalias() += dq * p.wq.transpose();
  dh.noalias() += dk * p.wk.transpose();
  dh.noalias() += dv * p.wv.transpose();

  if (dinput) *dinput += dh;
}

// Mean over the hop axis.
template <typename S>
VecX<S> pool(const RowMat<S>& f) {
  return f.colwise().mean().transpose();
}

// -- scoring module ----------------------------------------------------------

template <typename S>
struct ScoringCacheT {
  VecX<S> input_flat;  // (L*d)
  VecX<S> pre, act;    // d_h
};

// Additive mask a = V2 relu(V1 flatten(h) + c1) + c2, reshaped like h.
// The filtered stack is h + a.
template <typename S>
RowMat<S> scoring_forward(const ScoringParamsT<S>& p, const RowMat<S>& h,
                          ScoringCacheT<S>* cache = nullptr) {
  if (h.rows() != p.alpha + 1 || h.cols() != p.d) {
    throw std::invalid_argument("scoring_forward: input shape mismatch");
  }
  ScoringCacheT<S> local;
  ScoringCacheT<S>& c = cache ? *cache : local;
  c.input_flat = Eigen::Map<const VecX<S>>(h.data(), h.size());
  c.pre.noalias() = p.v1.transpose() * c.input_flat;
  c.pre += p.c1;
  c.act = c.pre.array().max(S(0));
  VecX<S> out_flat = p.v2.transpose() * c.act + p.c2;
  if (!out_flat.allFinite()) {
    throw std::runtime_error("scoring_forward: non-finite output");
  }
  return Eigen::Map<const RowMat<S>>(out_flat.data(), h.rows(), h.cols());
}

template <typename S>
void scoring_backward(const ScoringParamsT<S>& p, const ScoringCacheT<S>& c,
                      const RowMat<S>& dmask, ScoringParamsT<S>& grads) {
  const Eigen::Map<const VecX<S>> dout_flat(dmask.data(), dmask.size());
  grads.c2 += dout_flat;
  grads.v2.noalias() += c.act * dout_flat.transpose();
  VecX<S> dact = p.v2 * dout_flat;
  VecX<S> dpre = (dact.array() * (c.pre.array() > S(0)).template cast<S>()).matrix();
  grads.c1 += dpre;
  grads.v1.noalias() += c.input_flat * dpre.transpose();
}

// -- Adam --------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename P>
struct AdamStateT {
  P m, v;
  std::int64_t step = 0;
  AdamConfig cfg;

  explicit AdamStateT(const P& like, AdamConfig config = {})
      : m(zeros_like(like)), v(zeros_like(like)), cfg(config) {}
};

// Standard Adam with bias correction. Grads must be finite and shape-match.
template <typename P>
void adam_step(AdamStateT<P>& st, P& params, const P& grads) {
  using S = typename P::Scalar;
  if (!tensors_finite(grads)) {
    throw std::runtime_error("adam_step: non-finite gradient");
  }
  st.step += 1;
  const S b1 = static_cast<S>(st.cfg.beta1);
  const S b2 = static_cast<S>(st.cfg.beta2);
  const S corr1 = S(1) - static_cast<S>(std::pow(st.cfg.beta1, static_cast<double>(st.step)));
  const S corr2 = S(1) - static_cast<S>(std::pow(st.cfg.beta2, static_cast<double>(st.step)));
  const S lr = static_cast<S>(st.cfg.lr);
  const S eps = static_cast<S>(st.cfg.eps);

  std::vector<std::pair<S*, Eigen::Index>> ps, gs, ms, vs;
  auto collect = [](auto& p, auto& out) {
    visit_tensors(p, [&](const char*, auto& t) {
      out.emplace_back(const_cast<S*>(t.data()), t.size());
    });
  };
  collect(params, ps);
  collect(const_cast<P&>(grads), gs);
  collect(st.m, ms);
  collect(st.v, vs);

  for (std::size_t i = 0; i < ps.size(); ++i) {
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> pa(ps[i].first, ps[i].second);
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> ga(gs[i].first, gs[i].second);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> ma(ms[i].first, ms[i].second);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> va(vs[i].first, vs[i].second);
    ma = b1 * ma + (S(1) - b1) * ga;
    va = b2 * va + (S(1) - b2) * ga.square();
    pa -= lr * (ma / corr1) / ((va / corr2).sqrt() + eps);
  }
}

}  // namespace omog
