#include "omog/theory.hpp"

#include "omog/binio.hpp"
#include "omog/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace omog {

KlPair gaussian_kl(double sigma2_test, double sigma2_i) {
  if (!(sigma2_test > 0.0) || !(sigma2_i > 0.0)) {
    throw std::invalid_argument("gaussian_kl: variances must be positive");
  }
  const double r = sigma2_i / sigma2_test;
  return {0.5 * (r - 1.0 - std::log(r)), 0.5 * (sigma2_i - sigma2_test)};
}

std::vector<double> bma_weights(const std::vector<double>& variances) {
  if (variances.empty()) throw std::invalid_argument("bma_weights: empty input");
  double z = 0.0;
  for (double v : variances) {
    if (!(v > 0.0)) throw std::invalid_argument("bma_weights: variances must be positive");
    z += 1.0 / v;
  }
  std::vector<double> w;
  w.reserve(variances.size());
  for (double v : variances) w.push_back((1.0 / v) / z);
  return w;
}

std::vector<double> score_weights(const std::vector<double>& variances) {
  if (variances.empty()) throw std::invalid_argument("score_weights: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : variances) {
    if (!(v > 0.0)) throw std::invalid_argument("score_weights: variances must be positive");
    mx = std::max(mx, -0.5 * v);
  }
  double z = 0.0;
  for (double v : variances) z += std::exp(-0.5 * v - mx);
  std::vector<double> w;
  w.reserve(variances.size());
  for (double v : variances) w.push_back(std::exp(-0.5 * v - mx) / z);
  return w;
}

void EnsembleSpec::validate() const {
  if (models.size() < 2) throw std::invalid_argument("EnsembleSpec: need >= 2 models");
  if (samples < 10000) throw std::invalid_argument("EnsembleSpec: need >= 10^4 samples");
  for (const GaussianDomain& g : models) {
    if (!(g.variance > 0.0)) throw std::invalid_argument("EnsembleSpec: variance <= 0");
  }
}

FusedErrorResult fused_error_sim(const EnsembleSpec& spec, WeightRule rule) {
  spec.validate();
  const std::size_t m = spec.models.size();
  std::vector<double> variances(m);
  for (std::size_t i = 0; i < m; ++i) variances[i] = spec.models[i].variance;

  FusedErrorResult res;
  res.weights = rule == WeightRule::kBma ? bma_weights(variances) : score_weights(variances);
  res.per_model_mse.assign(m, 0.0);
  res.analytic_fused_variance = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    res.analytic_fused_variance += res.weights[i] * res.weights[i] * variances[i];
  }

  Rng rng(spec.seed);
  double sum_sq = 0.0, sum_sq2 = 0.0;
  for (std::int64_t s = 0; s < spec.samples; ++s) {
    double fused = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double f =
          spec.models[i].mean + std::sqrt(variances[i]) * rng.normal(0.0, 1.0);
      fused += res.weights[i] * f;
      const double e = f - spec.target;
      res.per_model_mse[i] += e * e;
    }
    const double err = fused - spec.target;
    sum_sq += err * err;
    sum_sq2 += err * err * err * err;
  }
  const double n = static_cast<double>(spec.samples);
  for (double& v : res.per_model_mse) v /= n;
  res.fused_mse = sum_sq / n;
  // Standard error of the sample mean of err^2.
  const double var_of_sq = std::max(0.0, sum_sq2 / n - res.fused_mse * res.fused_mse);
  res.fused_se = std::sqrt(var_of_sq / n);
  return res;
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(12);
  out << v;
  return out.str();
}

void push(TheoryReport& rep, const std::string& name, bool pass, const std::string& detail) {
  rep.checks.push_back({name, pass, detail});
}

}  // namespace

TheoryReport run_theory_checks(std::int64_t samples, std::uint64_t seed) {
  TheoryReport rep;

  {
    const KlPair kl = gaussian_kl(1.0, 2.0);
    const double expect = 0.5 * (1.0 - std::log(2.0));
    push(rep, "kl_exact_at_1_2", std::abs(kl.exact - expect) <= 1e-12,
         "exact=" + fmt(kl.exact) + " expected=" + fmt(expect));
    push(rep, "kl_first_order_at_1_2", std::abs(kl.first_order - 0.5) <= 1e-12,
         "first_order=" + fmt(kl.first_order));
  }

  {
    Rng rng(derive_seed(seed, 1));
    bool nonneg = true;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double a = rng.uniform(0.05, 5.0), b = rng.uniform(0.05, 5.0);
      const double e = gaussian_kl(a, b).exact;
      worst = std::min(worst, e);
      nonneg = nonneg && e >= 0.0;
    }
    nonneg = nonneg && gaussian_kl(1.7, 1.7).exact == 0.0;
    push(rep, "kl_nonnegative_zero_iff_equal", nonneg, "min over 1000 draws=" + fmt(worst));
  }

  {
    // The log's second-order Taylor residual vanishes superlinearly: the
    // exact KL at gap delta shrinks like delta^2, so exact/|delta| -> 0.
    bool shrinking = true;
    double prev_ratio = std::numeric_limits<double>::infinity();
    std::string trace;
    for (double delta : {0.4, 0.2, 0.1, 0.05, 0.025}) {
      const double ratio = gaussian_kl(1.0, 1.0 + delta).exact / delta;
      shrinking = shrinking && ratio < prev_ratio;
      prev_ratio = ratio;
      trace += fmt(ratio) + " ";
    }
    shrinking = shrinking && prev_ratio < 0.01;
    push(rep, "kl_superlinear_vanishing_near_equality", shrinking, "ratios: " + trace);
  }

  {
    const std::vector<double> w = bma_weights({1.0, 2.0});
    const bool ok = std::abs(w[0] - 2.0 / 3.0) <= 1e-12 && std::abs(w[1] - 1.0 / 3.0) <= 1e-12;
    push(rep, "bma_weights_1_2", ok, "w=[" + fmt(w[0]) + ", " + fmt(w[1]) + "]");
  }

  {
    const std::vector<double> w = score_weights({1.0, 1.0 + 2.0 * std::log(2.0)});
    const bool ok = std::abs(w[0] - 2.0 / 3.0) <= 1e-9 && std::abs(w[1] - 1.0 / 3.0) <= 1e-9;
    push(rep, "score_weights_softmax_gap_ln2", ok,
         "w=[" + fmt(w[0]) + ", " + fmt(w[1]) + "]");
  }

  {
    Rng rng(derive_seed(seed, 2));
    int agree = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
      const std::size_t m = 2 + rng.index(7);
      std::vector<double> variances(m);
      for (double& v : variances) v = rng.uniform(0.05, 5.0);
      const std::vector<double> wb = bma_weights(variances);
      const std::vector<double> ws = score_weights(variances);
      std::vector<std::size_t> ob(m), os(m);
      std::iota(ob.begin(), ob.end(), 0);
      os = ob;
      std::sort(ob.begin(), ob.end(), [&](auto a, auto b) { return wb[a] > wb[b]; });
      std::sort(os.begin(), os.end(), [&](auto a, auto b) { return ws[a] > ws[b]; });
      if (ob == os) ++agree;
    }
    push(rep, "ranking_agreement_bma_vs_score", agree == trials,
         std::to_string(agree) + "/" + std::to_string(trials));
  }

  {
    Rng rng(derive_seed(seed, 3));
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      const std::size_t m = 2 + rng.index(4);
      const double base = rng.uniform(0.5, 3.0);
      std::vector<double> variances(m);
      for (double& v : variances) v = base + rng.uniform(-0.05, 0.05);
      const std::vector<double> wb = bma_weights(variances);
      const std::vector<double> ws = score_weights(variances);
      for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, std::abs(wb[i] - ws[i]));
    }
    push(rep, "small_gap_weight_agreement", worst <= 0.05, "max deviation=" + fmt(worst));
  }

  for (WeightRule rule : {WeightRule::kBma, WeightRule::kScore}) {
    EnsembleSpec spec;
    spec.models = {{0.5, 1.0}, {0.5, 1.5}, {0.5, 2.0}};  // equal means = target
    spec.target = 0.5;
    spec.samples = samples;
    spec.seed = derive_seed(seed, rule == WeightRule::kBma ? 4 : 5);
    const FusedErrorResult res = fused_error_sim(spec, rule);
    const double best = *std::min_element(res.per_model_mse.begin(), res.per_model_mse.end());
    const bool beats = res.fused_mse <= best + 3.0 * res.fused_se;
    const bool matches_analytic =
        std::abs(res.fused_mse - res.analytic_fused_variance) <= 3.0 * res.fused_se;
    const std::string tag = rule == WeightRule::kBma ? "bma" : "score";
    push(rep, "fused_mse_beats_best_" + tag, beats,
         "fused=" + fmt(res.fused_mse) + " best=" + fmt(best) + " se=" + fmt(res.fused_se));
    push(rep, "fused_variance_analytic_" + tag, matches_analytic,
         "fused=" + fmt(res.fused_mse) + " analytic=" + fmt(res.analytic_fused_variance));
  }

  rep.all_pass = std::all_of(rep.checks.begin(), rep.checks.end(),
                             [](const TheoryCheck& c) { return c.pass; });
  return rep;
}

void write_theory_report(const TheoryReport& report, const std::filesystem::path& path) {
  nlohmann::json checks = nlohmann::json::array();
  for (const TheoryCheck& c : report.checks) {
    checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  }
  const nlohmann::json j{{"all_pass", report.all_pass}, {"checks", std::move(checks)}};
  std::ofstream out(path);
  if (!out) throw io_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error(path.string() + ": write failed");
}

}  // namespace omog
