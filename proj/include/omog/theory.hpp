#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace omog {

// KL(N(mu, s_t) || N(mu, s_i)) under mean alignment, plus its first-order
// Taylor expansion around equal variances.
struct KlPair {
  double exact = 0.0;        // 0.5 * (r - 1 - log r), r = sigma2_i / sigma2_test
  double first_order = 0.0;  // 0.5 * (sigma2_i - sigma2_test)
};

KlPair gaussian_kl(double sigma2_test, double sigma2_i);

// Inverse-variance weights w_i = (1/s_i) / sum_j (1/s_j).
std::vector<double> bma_weights(const std::vector<double>& variances);

// softmax(-s_i / 2): the relevance-score surrogate for the same weights.
std::vector<double> score_weights(const std::vector<double>& variances);

struct GaussianDomain {
  double mean = 0.0;
  double variance = 1.0;
};

struct EnsembleSpec {
  std::vector<GaussianDomain> models;  // >= 2
  double target = 0.0;                 // ground-truth function value
  std::int64_t samples = 100000;       // >= 10^4
  std::uint64_t seed = 0;

  void validate() const;
};

enum class WeightRule { kBma, kScore };

struct FusedErrorResult {
  std::vector<double> weights;
  double fused_mse = 0.0;
  double fused_se = 0.0;  // Monte-Carlo standard error of fused_mse
  std::vector<double> per_model_mse;
  double analytic_fused_variance = 0.0;  // sum w_i^2 s_i for independent models
};

// Monte-Carlo mean-squared error of the weighted prediction average vs each
// individual model, with independent Gaussian draws per model.
FusedErrorResult fused_error_sim(const EnsembleSpec& spec, WeightRule rule);

struct TheoryCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct TheoryReport {
  std::vector<TheoryCheck> checks;
  bool all_pass = false;
};

TheoryReport run_theory_checks(std::int64_t samples = 100000, std::uint64_t seed = 0);
void write_theory_report(const TheoryReport& report, const std::filesystem::path& path);

}  // namespace omog
